#include "moon/data.hpp"

#include <algorithm>

#include "moon/rng.hpp"

namespace moon {

InMemoryDataset InMemoryDataset::load(const DatasetManifest& manifest,
                                      const std::vector<std::string>* only_ids) {
    std::unordered_set<std::string> wanted;
    if (only_ids)
        for (const auto& id : *only_ids) wanted.insert(id);
    InMemoryDataset ds;
    for (const auto& rec : manifest.cases) {
        if (only_ids && !wanted.count(rec.id)) continue;
        LoadedCase c;
        c.id = rec.id;
        c.grade = rec.grade;
        for (int o = 0; o < 3; ++o) c.organs[size_t(o)] = read_volume(rec.volumes.at(Organ(o)));
        if (rec.lesion_mask) {
            c.lesion_mask = read_volume(*rec.lesion_mask);
            c.has_mask = true;
        }
        ds.cases.push_back(std::move(c));
    }
    check(!ds.cases.empty(), "dataset: no cases selected");
    for (int o = 0; o < 3; ++o) {
        const RoiVolume& v0 = ds.cases[0].organs[size_t(o)];
        ds.roi_dims[size_t(o)] = {v0.h, v0.w, v0.d};
        for (const auto& c : ds.cases) {
            const RoiVolume& v = c.organs[size_t(o)];
            check(v.h == v0.h && v.w == v0.w && v.d == v0.d,
                  "dataset: organ dims differ across cases (" + c.id + ")");
        }
    }
    return ds;
}

const LoadedCase& InMemoryDataset::by_id(const std::string& id) const {
    for (const auto& c : cases)
        if (c.id == id) return c;
    throw ContractError("dataset: unknown case id " + id);
}

TrainValIds make_train_val(const DatasetManifest& manifest, const FoldSplit* split, int fold,
                           double val_fraction, uint64_t seed) {
    TrainValIds out;
    if (split) {
        check(fold >= 0 && fold < int(split->folds.size()), "make_train_val: fold out of range");
        std::unordered_set<std::string> val_ids(split->folds[size_t(fold)].begin(),
                                                split->folds[size_t(fold)].end());
        for (const auto& c : manifest.cases)
            (val_ids.count(c.id) ? out.val : out.train).push_back(c.id);
        return out;
    }
    if (val_fraction <= 0.0) {
        for (const auto& c : manifest.cases) out.train.push_back(c.id);
        return out;
    }
    int k = std::max(2, int(std::lround(1.0 / val_fraction)));
    FoldSplit s = stratified_kfold(manifest, k, seed);
    std::unordered_set<std::string> val_ids(s.folds[0].begin(), s.folds[0].end());
    for (const auto& c : manifest.cases)
        (val_ids.count(c.id) ? out.val : out.train).push_back(c.id);
    return out;
}

} // namespace moon
