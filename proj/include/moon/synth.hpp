#ifndef MOON_SYNTH_HPP
#define MOON_SYNTH_HPP

#include <array>

#include "moon/dataset.hpp"
#include "moon/volume.hpp"

namespace moon {

struct OrganDims {
    int h = 0, w = 0, d = 0;
};

// Generator knobs. Defaults are the paper ROI sizes divided by 4 and signal
// strengths tuned so that the esophagus channel separates G1 from {G2,G3}
// but leaves G2/G3 ambiguous, while spleen/liver statistics disambiguate.
struct SynthConfig {
    uint64_t seed = 7;
    std::array<int, 3> counts{8, 8, 8}; // cases per grade G1,G2,G3
    OrganDims esophagus{10, 10, 25};
    OrganDims liver{64, 49, 9};
    OrganDims spleen{38, 49, 6};
    double delta_esophagus = 0.22; // varix blob contrast
    double delta_liver = 0.14;     // texture roughness coefficient
    double delta_spleen = 1.0;     // bright-region fraction scale
    double noise_sigma = 0.04;

    void validate() const;
};

// One generated case held in memory; the mask is 0/1 over the esophagus grid.
struct SynthCase {
    Grade grade = Grade::G1;
    RoiVolume esophagus, liver, spleen;
    RoiVolume lesion_mask;
};

// Deterministic in (seed, grade, cfg).
SynthCase synthesize_case(uint64_t seed, Grade grade, const SynthConfig& cfg);

// Writes all volumes plus manifest.json under out_dir; returns the manifest.
// Per-case seeds are hash(cfg.seed, case_index), so generation order is
// immaterial.
DatasetManifest synthesize_dataset(const SynthConfig& cfg, const std::string& out_dir);

} // namespace moon

#endif
