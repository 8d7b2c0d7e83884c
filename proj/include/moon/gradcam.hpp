#ifndef MOON_GRADCAM_HPP
#define MOON_GRADCAM_HPP

#include "moon/train.hpp"

namespace moon {

// Channel-gradient-weighted activation map: weights are the spatial mean of
// d(target)/d(feature) per channel, the map is ReLU of the weighted channel
// sum. Both tensors are [1,h,w,d,C].
template <class Real>
Tensor<Real> cam_from_feature_grad(const Tensor<Real>& feature, const Tensor<Real>& grad) {
    check(feature.same_shape(grad) && feature.rank() == 5 && feature.dim(0) == 1,
          "cam_from_feature_grad: expected matching [1,h,w,d,C] tensors");
    int C = feature.dim(4);
    int64_t pos = feature.numel() / C;
    std::vector<double> w(size_t(C), 0.0);
    for (int64_t p = 0; p < pos; ++p)
        for (int c = 0; c < C; ++c) w[size_t(c)] += double(grad[p * C + c]);
    for (auto& v : w) v /= double(pos);
    Tensor<Real> map({1, feature.dim(1), feature.dim(2), feature.dim(3), 1});
    for (int64_t p = 0; p < pos; ++p) {
        double acc = 0;
        for (int c = 0; c < C; ++c) acc += w[size_t(c)] * double(feature[p * C + c]);
        map[p] = acc > 0 ? Real(acc) : Real(0);
    }
    return map;
}

// Plain trilinear resize of a single-channel map to ROI dims.
template <class Real>
RoiVolume resize_to_roi(const Tensor<Real>& map, Dims3 roi) {
    Tape<Real> t;
    t.recording = false;
    Var<Real> up = ops::upsample_trilinear(constant(t, map), roi);
    RoiVolume vol;
    vol.h = roi.h;
    vol.w = roi.w;
    vol.d = roi.d;
    vol.data.resize(size_t(vol.numel()));
    for (int64_t i = 0; i < vol.numel(); ++i) vol.data[size_t(i)] = float(up.val()[i]);
    return vol;
}

// 3D Grad-CAM for one case/organ from the fused target-task logit. The heat
// volume is aligned to the organ's ROI dims and max-normalized to [0,1]
// unless identically zero.
template <class Real>
RoiVolume gradcam_map(MoonModel<Real>& model, const InMemoryDataset& ds, const std::string& case_id,
                      Organ organ, Task task) {
    for (Param<Real>* p : model.params())
        for (int64_t i = 0; i < p->value.numel(); ++i)
            check(std::isfinite(double(p->value[i])), "gradcam: non-finite model parameter " + p->name);
    int organ_idx = int(organ);
    if (!model.cfg.multi_organ())
        check(model.cfg.single_organ == organ_idx, "gradcam: organ not present in single-organ model");

    size_t case_index = ds.cases.size();
    for (size_t i = 0; i < ds.cases.size(); ++i)
        if (ds.cases[i].id == case_id) case_index = i;
    check(case_index < ds.cases.size(), "gradcam: unknown case " + case_id);

    AugmentConfig no_aug;
    no_aug.enabled = false;
    Batch<Real> batch = make_batch<Real>(ds, {int(case_index)}, no_aug, 0, false);
    Tape<Real> tape;
    ModelOutput<Real> mo = model.forward(tape, batch.organs);
    Var<Real> target = ops::slice_cols(mo.h_f, int(task), int(task) + 1);
    tape.backward(target.id);

    Var<Real> f3 = mo.f3[size_t(organ_idx)];
    check(f3.id >= 0, "gradcam: branch features unavailable");
    check(tape.grad_ready(f3.id), "gradcam: no gradient reached the target features");
    Tensor<Real> cam = cam_from_feature_grad(tape.val(f3.id), tape.grad(f3.id));

    Dims3 roi = ds.roi_dims[size_t(organ_idx)];
    RoiVolume heat = resize_to_roi(cam, roi);
    float mx = 0.f;
    for (float v : heat.data) mx = std::max(mx, v);
    if (mx > 0.f)
        for (auto& v : heat.data) v /= mx;
    return heat;
}

// Fraction of the top-`fraction` heat mass lying inside the lesion mask.
double localization_score(const RoiVolume& heat, const RoiVolume& mask, double fraction = 0.05);

// Per-slice grayscale dumps (binary PGM, one file per D index).
void write_pgm_slices(const RoiVolume& vol, const std::string& dir, const std::string& base);

} // namespace moon

#endif
