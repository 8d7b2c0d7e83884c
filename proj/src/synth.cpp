#include "moon/synth.hpp"

#include <cmath>
#include <filesystem>

#include "moon/rng.hpp"
#include "moon/tensor.hpp"

namespace fs = std::filesystem;

namespace moon {

namespace {

constexpr double kBase = 0.3;

int grade_index(Grade g) { return int(g) - 1; }

// coarse white noise trilinearly upsampled to the full grid
void add_smooth_noise(RoiVolume& vol, Rng& rng, double sigma, int step) {
    int ch = vol.h / step + 2, cw = vol.w / step + 2, cd = vol.d / step + 2;
    std::vector<double> coarse(size_t(ch) * cw * cd);
    for (auto& v : coarse) v = rng.normal(0.0, sigma);
    auto cval = [&](int i, int j, int k) { return coarse[(size_t(i) * cw + j) * size_t(cd) + k]; };
    for (int i = 0; i < vol.h; ++i)
        for (int j = 0; j < vol.w; ++j)
            for (int k = 0; k < vol.d; ++k) {
                double fi = double(i) / step, fj = double(j) / step, fk = double(k) / step;
                int i0 = int(fi), j0 = int(fj), k0 = int(fk);
                double ti = fi - i0, tj = fj - j0, tk = fk - k0;
                double acc = 0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b)
                        for (int c = 0; c < 2; ++c)
                            acc += cval(i0 + a, j0 + b, k0 + c) * (a ? ti : 1 - ti) * (b ? tj : 1 - tj) *
                                   (c ? tk : 1 - tk);
                vol.at(i, j, k) += float(acc);
            }
}

void add_white_noise(RoiVolume& vol, Rng& rng, double sigma) {
    for (auto& v : vol.data) v += float(rng.normal(0.0, sigma));
}

RoiVolume blank(OrganDims d) {
    RoiVolume v;
    v.h = d.h;
    v.w = d.w;
    v.d = d.d;
    v.data.assign(size_t(v.numel()), float(kBase));
    return v;
}

struct Blob {
    double ci, cj, ck; // center
    double r;          // transverse radius; axial radius is 1.6 r
};

} // namespace

void SynthConfig::validate() const {
    for (const OrganDims* d : {&esophagus, &liver, &spleen})
        check(d->h >= 4 && d->w >= 4 && d->d >= 4, "synth: all organ dims must be >= 4");
    check(delta_esophagus >= 0 && delta_liver >= 0 && delta_spleen >= 0, "synth: deltas must be >= 0");
    check(noise_sigma > 0, "synth: noise sigma must be > 0");
    check(counts[0] >= 0 && counts[1] >= 0 && counts[2] >= 0, "synth: negative case count");
    if (std::min(esophagus.h, esophagus.w) < 8)
        throw ContractError("synth: esophagus dims too small to contain a tube (need min(H,W) >= 8)");
}

SynthCase synthesize_case(uint64_t seed, Grade grade, const SynthConfig& cfg) {
    cfg.validate();
    int g = grade_index(grade);
    SynthCase out;
    out.grade = grade;

    // per-case portal-congestion factor: scales varix visibility and the
    // spleen/liver context statistics, so the esophageal brightness is only
    // calibrated correctly against the other organs
    double congestion = Rng(hash_combine(seed, 402)).uniform(0.65, 1.5);

    // --- esophagus: background tube + bright varix blobs on the wall ---
    {
        Rng noise_rng(hash_combine(seed, 101));
        Rng blob_rng(hash_combine(seed, 102));
        RoiVolume vol = blank(cfg.esophagus);
        double cx = (vol.h - 1) / 2.0, cy = (vol.w - 1) / 2.0;
        double r_tube = 0.30 * std::min(vol.h, vol.w);
        double wall = 1.3;
        // lumen dark, wall band bright: the static anatomy
        for (int i = 0; i < vol.h; ++i)
            for (int j = 0; j < vol.w; ++j) {
                double r = std::hypot(i - cx, j - cy);
                float delta = 0.f;
                if (r < r_tube - wall * 0.5)
                    delta = -0.08f;
                else if (r < r_tube + wall)
                    delta = 0.08f;
                for (int k = 0; k < vol.d; ++k) vol.at(i, j, k) += delta;
            }
        add_smooth_noise(vol, noise_rng, cfg.noise_sigma, 3);
        add_white_noise(vol, noise_rng, cfg.noise_sigma * 0.5);

        // grade-dependent blob population; G2/G3 ranges overlap on purpose
        static const int n_lo[3] = {1, 3, 4};
        static const int n_hi[3] = {2, 4, 5};
        static const double r_lo[3] = {1.1, 2.2, 2.6};
        static const double r_hi[3] = {1.5, 2.6, 3.0};
        int n_blobs = blob_rng.uniform_int(n_lo[g], n_hi[g]);
        std::vector<Blob> blobs;
        for (int b = 0; b < n_blobs; ++b) {
            Blob bl;
            double theta = blob_rng.uniform(0.0, 6.283185307179586);
            bl.ci = cx + r_tube * std::cos(theta);
            bl.cj = cy + r_tube * std::sin(theta);
            bl.ck = blob_rng.uniform(0.50, 0.92) * (vol.d - 1); // lower esophagus
            bl.r = blob_rng.uniform(r_lo[g], r_hi[g]) * std::pow(congestion, 0.3);
            blobs.push_back(bl);
        }

        RoiVolume mask;
        mask.h = vol.h;
        mask.w = vol.w;
        mask.d = vol.d;
        mask.data.assign(size_t(vol.numel()), 0.f);
        double r_region = r_tube + wall + 0.6; // masks stay within the tube region
        for (const Blob& bl : blobs) {
            int i0 = std::max(0, int(bl.ci - bl.r - 1)), i1 = std::min(vol.h - 1, int(bl.ci + bl.r + 1));
            int j0 = std::max(0, int(bl.cj - bl.r - 1)), j1 = std::min(vol.w - 1, int(bl.cj + bl.r + 1));
            double rz = bl.r * 1.6;
            int k0 = std::max(0, int(bl.ck - rz - 1)), k1 = std::min(vol.d - 1, int(bl.ck + rz + 1));
            for (int i = i0; i <= i1; ++i)
                for (int j = j0; j <= j1; ++j) {
                    if (std::hypot(i - cx, j - cy) > r_region) continue;
                    for (int k = k0; k <= k1; ++k) {
                        double q = ((i - bl.ci) * (i - bl.ci) + (j - bl.cj) * (j - bl.cj)) / (bl.r * bl.r) +
                                   (k - bl.ck) * (k - bl.ck) / (rz * rz);
                        if (q <= 1.0) mask.at(i, j, k) = 1.f;
                    }
                }
        }
        double visible_contrast = cfg.delta_esophagus * congestion;
        for (int64_t v = 0; v < vol.numel(); ++v)
            if (mask.data[size_t(v)] > 0.f) vol.data[size_t(v)] += float(visible_contrast);
        out.esophagus = std::move(vol);
        out.lesion_mask = std::move(mask);
    }

    // --- liver: texture roughness grows with grade ---
    {
        Rng noise_rng(hash_combine(seed, 201));
        Rng tex_rng(hash_combine(seed, 202));
        RoiVolume vol = blank(cfg.liver);
        add_smooth_noise(vol, noise_rng, cfg.noise_sigma, 3);
        add_white_noise(vol, noise_rng, cfg.noise_sigma * 0.5);
        static const double rough[3] = {0.58, 0.66, 0.74};
        double amp = cfg.delta_liver * rough[g] * std::pow(congestion, 0.9) * tex_rng.uniform(0.88, 1.12);
        add_white_noise(vol, tex_rng, amp);
        out.liver = std::move(vol);
    }

    // --- spleen: bright-region volume fraction grows with grade ---
    {
        Rng noise_rng(hash_combine(seed, 301));
        Rng reg_rng(hash_combine(seed, 302));
        RoiVolume vol = blank(cfg.spleen);
        add_smooth_noise(vol, noise_rng, cfg.noise_sigma, 3);
        add_white_noise(vol, noise_rng, cfg.noise_sigma * 0.5);
        static const double frac_base[3] = {0.14, 0.155, 0.17};
        double frac = std::min(0.55, cfg.delta_spleen * frac_base[g] * congestion * reg_rng.uniform(0.92, 1.08));
        if (frac > 0) {
            double s = std::cbrt(6.0 * frac / 3.141592653589793);
            double a = s * vol.h / 2.0, b = s * vol.w / 2.0, c = s * vol.d / 2.0;
            double ci = (vol.h - 1) / 2.0 + reg_rng.uniform(-1.5, 1.5);
            double cj = (vol.w - 1) / 2.0 + reg_rng.uniform(-1.5, 1.5);
            double ck = (vol.d - 1) / 2.0 + reg_rng.uniform(-0.5, 0.5);
            for (int i = 0; i < vol.h; ++i)
                for (int j = 0; j < vol.w; ++j)
                    for (int k = 0; k < vol.d; ++k) {
                        double q = (i - ci) * (i - ci) / (a * a) + (j - cj) * (j - cj) / (b * b) +
                                   (k - ck) * (k - ck) / (c * c);
                        if (q <= 1.0) vol.at(i, j, k) += 0.22f;
                    }
        }
        out.spleen = std::move(vol);
    }

    return out;
}

DatasetManifest synthesize_dataset(const SynthConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    fs::create_directories(fs::path(out_dir) / "vol");
    DatasetManifest m;
    int index = 0;
    for (int g = 0; g < 3; ++g) {
        Grade grade = Grade(g + 1);
        for (int i = 0; i < cfg.counts[size_t(g)]; ++i, ++index) {
            uint64_t case_seed = hash_combine(cfg.seed, uint64_t(index));
            SynthCase sc = synthesize_case(case_seed, grade, cfg);
            char buf[32];
            std::snprintf(buf, sizeof buf, "c%04d", index);
            CaseRecord rec;
            rec.id = buf;
            rec.grade = grade;
            auto rel = [&](const char* organ) { return std::string("vol/") + buf + "_" + organ + ".mvol"; };
            write_volume(sc.esophagus, (fs::path(out_dir) / rel("esophagus")).string());
            write_volume(sc.liver, (fs::path(out_dir) / rel("liver")).string());
            write_volume(sc.spleen, (fs::path(out_dir) / rel("spleen")).string());
            write_volume(sc.lesion_mask, (fs::path(out_dir) / rel("mask")).string());
            rec.volumes[Organ::Esophagus] = rel("esophagus");
            rec.volumes[Organ::Liver] = rel("liver");
            rec.volumes[Organ::Spleen] = rel("spleen");
            rec.lesion_mask = rel("mask");
            m.cases.push_back(std::move(rec));
        }
    }
    save_manifest(m, (fs::path(out_dir) / "manifest.json").string());
    // the saved manifest holds relative paths; resolve the returned copy
    for (auto& rec : m.cases) {
        for (auto& [organ, p] : rec.volumes) p = (fs::path(out_dir) / p).string();
        if (rec.lesion_mask) rec.lesion_mask = (fs::path(out_dir) / *rec.lesion_mask).string();
    }
    return m;
}

} // namespace moon
