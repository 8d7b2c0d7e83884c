#ifndef MOON_DRIVER_HPP
#define MOON_DRIVER_HPP

#include "moon/checkpoint.hpp"
#include "moon/config.hpp"
#include "moon/gradcam.hpp"

namespace moon {

// training precision for runs; the numeric test suites instantiate double
using TrainReal = float;

nlohmann::json model_config_to_json(const ModelConfig& mc);
ModelConfig model_config_from_json(const nlohmann::json& j);

struct TrainArtifacts {
    TrainSummary summary;
    std::optional<EvalMetrics> final_val;
    double train_acc3 = 0; // 3-class accuracy on the training set, final model
    std::string final_checkpoint;
    std::string best_checkpoint; // empty when no validation set
};

// One full training with artifacts under out_dir (train_log.jsonl +
// checkpoints). Pass write_artifacts=false for throwaway runs.
TrainArtifacts train_and_save(const RunConfig& cfg, const InMemoryDataset& ds,
                              const std::vector<std::string>& train_ids,
                              const std::vector<std::string>& val_ids, uint64_t seed,
                              const std::string& out_dir, bool write_artifacts = true);

// Rebuilds the model recorded in a checkpoint and loads its parameters.
std::unique_ptr<MoonModel<TrainReal>> load_model(const std::string& checkpoint_path);

EvalMetrics evaluate_model(MoonModel<TrainReal>& model, const InMemoryDataset& ds,
                           const std::vector<std::string>& ids, int batch_size);

// A Table-style experiment row: one (configuration) x (seeds) block.
struct RowSpec {
    std::string label;
    std::string fusion = "concat";
    bool use_ori = true, use_hfe = true, use_cca = true;
    std::string single_organ; // empty = multi-organ
    std::string tag;          // directory-safe name
};

struct RowResult {
    MetricsRow metrics;
    std::vector<std::string> checkpoints; // final checkpoint per seed
};

// Trains `row` once per seed and evaluates each run on eval_ids (drawn from
// eval_ds). Rows aggregate across seeds when more than one is given.
RowResult run_row(const RunConfig& base, const RowSpec& row, const InMemoryDataset& train_ds,
                  const std::vector<std::string>& train_ids, const std::vector<std::string>& val_ids,
                  const InMemoryDataset& eval_ds, const std::vector<std::string>& eval_ids,
                  const std::string& out_dir, int jobs);

// CLI subcommand entry points; each writes resolved_config.json, metrics
// and artifacts under out_dir.
int cmd_synthesize(const RunConfig& cfg, const nlohmann::json& resolved, const std::string& out);
int cmd_train(const RunConfig& cfg, const nlohmann::json& resolved, const std::string& out);
int cmd_evaluate(const RunConfig& cfg, const nlohmann::json& resolved, const std::string& out);
int cmd_crossval(const RunConfig& cfg, const nlohmann::json& resolved, const std::string& out);
int cmd_compare_fusion(const RunConfig& cfg, const nlohmann::json& resolved, const std::string& out);
int cmd_ablate(const RunConfig& cfg, const nlohmann::json& resolved, const std::string& out);
int cmd_gradcam(const RunConfig& cfg, const nlohmann::json& resolved, const std::string& out);

// run fn(0..n-1) on up to `jobs` threads (0 = hardware); results are ordered
// by index so scheduling cannot affect outputs
void parallel_for_jobs(int n, int jobs, const std::function<void(int)>& fn);

// standard ablation grid order: (ori, hfe, cca) from (1,1,1) down to (0,0,0)
std::vector<RowSpec> ablation_grid(const std::string& fusion);

} // namespace moon

#endif
