#ifndef MOON_CONFIG_HPP
#define MOON_CONFIG_HPP

#include <json.hpp>

#include "moon/model.hpp"
#include "moon/synth.hpp"
#include "moon/train.hpp"

namespace moon {

struct ConfigError : std::runtime_error {
    std::string key;
    ConfigError(const std::string& msg, std::string k) : std::runtime_error(msg), key(std::move(k)) {}
};

// Everything one run needs; defaults are the artifact's documented defaults
// and every field is echoed into resolved_config.json.
struct RunConfig {
    uint64_t seed = 1;
    int jobs = 1; // worker threads for folds/rows (0 = hardware)
    SynthConfig synth;

    std::string data_manifest;
    std::string test_manifest;
    std::string split_file;
    int fold = 0;
    double val_fraction = 0.2;

    // model (roi dims come from the data at run time)
    std::array<int, 4> channels{16, 32, 64, 64};
    std::array<int, 4> blocks{1, 1, 1, 1};
    int heads = 4;
    int mlp_ratio = 2;
    Dims3 ori_grid{4, 4, 4};
    bool use_ori = true;
    bool use_hfe = true;
    std::string fusion = "concat";
    int lowrank_rank = 4;
    std::string single_organ; // empty = multi-organ

    TrainConfig train;

    int crossval_k = 5;
    std::vector<uint64_t> compare_seeds{1}; // compare-fusion / ablate repeats

    std::string eval_checkpoint;

    std::string gradcam_checkpoint;
    std::string gradcam_organ = "esophagus";
    std::string gradcam_task = "G3";
    int gradcam_max_cases = 0; // 0 = all cases with masks
    bool gradcam_pgm = false;

    ModelConfig model_config(const std::array<Dims3, 3>& roi_dims) const;
};

nlohmann::json default_config_json();
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig config_from_json(const nlohmann::json& j); // unknown keys rejected
RunConfig load_config(const std::string& path);

// "a.b.c=value"; value parsed as JSON when possible, else as a string.
void apply_override(nlohmann::json& j, const std::string& dotted_assignment);

} // namespace moon

#endif
