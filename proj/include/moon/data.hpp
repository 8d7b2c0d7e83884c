#ifndef MOON_DATA_HPP
#define MOON_DATA_HPP

#include <unordered_set>

#include "moon/augment.hpp"
#include "moon/dataset.hpp"
#include "moon/ops3d.hpp"
#include "moon/volume.hpp"

namespace moon {

struct LoadedCase {
    std::string id;
    Grade grade = Grade::G1;
    std::array<RoiVolume, 3> organs;
    RoiVolume lesion_mask; // empty when absent
    bool has_mask = false;
};

// Whole-dataset in-memory store; per-organ dims must agree across cases.
struct InMemoryDataset {
    std::vector<LoadedCase> cases;
    std::array<Dims3, 3> roi_dims{};

    static InMemoryDataset load(const DatasetManifest& manifest,
                                const std::vector<std::string>* only_ids = nullptr);
    const LoadedCase& by_id(const std::string& id) const;
};

// Train/val id lists. With a split file, fold `fold` is validation; with a
// fraction, a stratified holdout is carved deterministically from the seed.
struct TrainValIds {
    std::vector<std::string> train, val;
};
TrainValIds make_train_val(const DatasetManifest& manifest, const FoldSplit* split, int fold,
                           double val_fraction, uint64_t seed);

// Stack selected cases into per-organ [B,H,W,D,1] tensors plus [B,2] ordinal
// targets. Augmentation seeds derive from (seed, case index in `ids`).
template <class Real>
struct Batch {
    std::array<Tensor<Real>, 3> organs;
    Tensor<Real> targets;
    std::vector<std::string> ids;
};

template <class Real>
Batch<Real> make_batch(const InMemoryDataset& ds, const std::vector<int>& case_indices,
                       const AugmentConfig& aug, uint64_t seed, bool train_mode) {
    Batch<Real> out;
    int b = int(case_indices.size());
    check(b >= 1, "make_batch: empty batch");
    for (int o = 0; o < 3; ++o) {
        Dims3 d = ds.roi_dims[size_t(o)];
        if (d.count() == 0) continue; // organ unused (single-organ datasets never occur; guard anyway)
        out.organs[size_t(o)] = Tensor<Real>({b, d.h, d.w, d.d, 1});
    }
    out.targets = Tensor<Real>({b, kNumThresholds});
    for (int i = 0; i < b; ++i) {
        const LoadedCase& c = ds.cases[size_t(case_indices[size_t(i)])];
        OrdinalTarget t = ordinal_encode(c.grade);
        out.targets[int64_t(i) * 2 + 0] = Real(t.t1);
        out.targets[int64_t(i) * 2 + 1] = Real(t.t2);
        out.ids.push_back(c.id);
        for (int o = 0; o < 3; ++o) {
            const RoiVolume& src = c.organs[size_t(o)];
            RoiVolume aug_vol;
            const RoiVolume* use = &src;
            if (train_mode && aug.enabled) {
                aug_vol = augment(src, hash_combine(seed, hash_combine(uint64_t(case_indices[size_t(i)]),
                                                                       uint64_t(o))),
                                  aug);
                use = &aug_vol;
            }
            Real* dst = out.organs[size_t(o)].ptr() + int64_t(i) * use->numel();
            // volumes are stored around the 0.3 background level; the network
            // sees zero-centered, unit-ish inputs
            for (int64_t v = 0; v < use->numel(); ++v)
                dst[v] = Real((use->data[size_t(v)] - 0.3f) * 4.0f);
        }
    }
    return out;
}

} // namespace moon

#endif
