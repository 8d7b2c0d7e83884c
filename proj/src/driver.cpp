#include "moon/driver.hpp"

#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;

namespace moon {

json model_config_to_json(const ModelConfig& mc) {
    json j;
    j["channels"] = mc.channels;
    j["blocks"] = mc.blocks;
    j["heads"] = mc.heads;
    j["mlp_ratio"] = mc.mlp_ratio;
    j["roi_dims"] = json::array();
    for (const Dims3& d : mc.roi_dims) j["roi_dims"].push_back(json::array({d.h, d.w, d.d}));
    j["ori_grid"] = json::array({mc.ori_grid.h, mc.ori_grid.w, mc.ori_grid.d});
    j["use_ori"] = mc.use_ori;
    j["use_hfe"] = mc.use_hfe;
    j["fusion"] = to_string(mc.fusion);
    j["lowrank_rank"] = mc.lowrank_rank;
    j["single_organ"] = mc.single_organ;
    j["init_seed"] = mc.init_seed;
    return j;
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig mc;
    mc.channels = j.at("channels").get<std::array<int, 4>>();
    mc.blocks = j.at("blocks").get<std::array<int, 4>>();
    mc.heads = j.at("heads").get<int>();
    mc.mlp_ratio = j.at("mlp_ratio").get<int>();
    for (int o = 0; o < 3; ++o) {
        const json& d = j.at("roi_dims")[size_t(o)];
        mc.roi_dims[size_t(o)] = Dims3{d[0].get<int>(), d[1].get<int>(), d[2].get<int>()};
    }
    const json& g = j.at("ori_grid");
    mc.ori_grid = Dims3{g[0].get<int>(), g[1].get<int>(), g[2].get<int>()};
    mc.use_ori = j.at("use_ori").get<bool>();
    mc.use_hfe = j.at("use_hfe").get<bool>();
    mc.fusion = fusion_from_string(j.at("fusion").get<std::string>());
    mc.lowrank_rank = j.at("lowrank_rank").get<int>();
    mc.single_organ = j.at("single_organ").get<int>();
    mc.init_seed = j.at("init_seed").get<uint64_t>();
    return mc;
}

void parallel_for_jobs(int n, int jobs, const std::function<void(int)>& fn) {
    if (jobs <= 0) jobs = int(std::thread::hardware_concurrency());
    jobs = std::max(1, std::min(jobs, n));
    if (jobs == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(static_cast<size_t>(jobs));
    for (int w = 0; w < jobs; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
            } catch (...) {
                errors[size_t(w)] = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

TrainArtifacts train_and_save(const RunConfig& cfg, const InMemoryDataset& ds,
                              const std::vector<std::string>& train_ids,
                              const std::vector<std::string>& val_ids, uint64_t seed,
                              const std::string& out_dir, bool write_artifacts) {
    ModelConfig mc = cfg.model_config(ds.roi_dims);
    mc.init_seed = seed;
    MoonModel<TrainReal> model;
    model.init(mc);

    TrainConfig tc = cfg.train;
    tc.seed = seed;

    if (write_artifacts) fs::create_directories(out_dir);
    std::ofstream log;
    if (write_artifacts) log.open(fs::path(out_dir) / "train_log.jsonl", std::ios::trunc);

    json meta;
    meta["model_config"] = model_config_to_json(mc);
    meta["rng"] = {{"seed", seed}};

    TrainArtifacts art;
    auto on_epoch = [&](const EpochRecord& r) {
        if (log) log << epoch_record_to_json(r).dump() << "\n";
    };
    auto on_best = [&](int epoch, double) {
        if (!write_artifacts) return;
        json m = meta;
        m["epoch"] = epoch;
        art.best_checkpoint = (fs::path(out_dir) / "checkpoint_best.ckpt").string();
        save_checkpoint<TrainReal>(art.best_checkpoint, model.params(), m);
    };
    art.summary = train_model(model, ds, train_ids, val_ids, tc, on_epoch, on_best);

    std::vector<CasePrediction> train_preds = predict(model, ds, train_ids, tc.batch_size);
    art.train_acc3 = three_class_accuracy(train_preds);
    if (!val_ids.empty() && !art.summary.log.empty() && art.summary.log.back().val)
        art.final_val = art.summary.log.back().val;

    if (write_artifacts) {
        json m = meta;
        m["epoch"] = tc.epochs;
        art.final_checkpoint = (fs::path(out_dir) / "checkpoint_final.ckpt").string();
        save_checkpoint<TrainReal>(art.final_checkpoint, model.params(), m);
    }
    return art;
}

std::unique_ptr<MoonModel<TrainReal>> load_model(const std::string& checkpoint_path) {
    // first pass reads the header only (params unmatched -> reconstruct)
    std::ifstream f(checkpoint_path, std::ios::binary);
    if (!f) throw std::runtime_error("load_model: cannot open " + checkpoint_path);
    std::string head(64 * 1024, '\0');
    f.read(head.data(), std::streamsize(head.size()));
    head.resize(size_t(f.gcount()));
    check(head.size() > 24 && std::memcmp(head.data(), ckpt::kMagic, 8) == 0,
          "load_model: not a checkpoint: " + checkpoint_path);
    size_t off = 12; // magic + version
    uint32_t scalar = ckpt::get_pod<uint32_t>(head, off);
    check(scalar == sizeof(TrainReal), "load_model: checkpoint precision differs from runtime");
    uint64_t hlen = ckpt::get_pod<uint64_t>(head, off);
    check(off + hlen <= head.size(), "load_model: header exceeds probe window");
    json header = json::parse(head.substr(off, hlen));

    auto model = std::make_unique<MoonModel<TrainReal>>();
    model->init(model_config_from_json(header.at("meta").at("model_config")));
    load_checkpoint<TrainReal>(checkpoint_path, model->params());
    return model;
}

EvalMetrics evaluate_model(MoonModel<TrainReal>& model, const InMemoryDataset& ds,
                           const std::vector<std::string>& ids, int batch_size) {
    return metrics_from_predictions(predict(model, ds, ids, batch_size));
}

RowResult run_row(const RunConfig& base, const RowSpec& row, const InMemoryDataset& train_ds,
                  const std::vector<std::string>& train_ids, const std::vector<std::string>& val_ids,
                  const InMemoryDataset& eval_ds, const std::vector<std::string>& eval_ids,
                  const std::string& out_dir, int jobs) {
    RowResult result;
    result.metrics.label = row.label;
    result.metrics.strategy = row.single_organ.empty() ? row.fusion : ("single:" + row.single_organ);
    result.metrics.use_ori = row.use_ori;
    result.metrics.use_hfe = row.use_hfe;
    result.metrics.use_cca = row.use_cca;
    int n = int(base.compare_seeds.size());
    result.metrics.folds.resize(size_t(n));
    result.checkpoints.resize(size_t(n));

    parallel_for_jobs(n, jobs, [&](int i) {
        uint64_t seed = base.compare_seeds[size_t(i)];
        RunConfig cfg = base;
        cfg.fusion = row.fusion;
        cfg.use_ori = row.use_ori;
        cfg.use_hfe = row.use_hfe;
        cfg.train.loss.use_cca = row.use_cca;
        cfg.single_organ = row.single_organ;
        std::string dir = (fs::path(out_dir) / row.tag / ("seed" + std::to_string(seed))).string();
        TrainArtifacts art = train_and_save(cfg, train_ds, train_ids, val_ids, seed, dir, true);
        // model selection by validation mean-AUC when a val split exists
        std::string ckpt = art.best_checkpoint.empty() ? art.final_checkpoint : art.best_checkpoint;
        auto model = load_model(ckpt);
        result.metrics.folds[size_t(i)] = evaluate_model(*model, eval_ds, eval_ids, cfg.train.batch_size);
        result.checkpoints[size_t(i)] = ckpt;
    });

    if (n >= 2)
        aggregate_cv(result.metrics);
    else {
        result.metrics.mean = result.metrics.folds[0];
        result.metrics.stddev = EvalMetrics{};
    }
    return result;
}

std::vector<RowSpec> ablation_grid(const std::string& fusion) {
    std::vector<RowSpec> rows;
    for (int ori = 1; ori >= 0; --ori)
        for (int hfe = 1; hfe >= 0; --hfe)
            for (int cca = 1; cca >= 0; --cca) {
                RowSpec r;
                r.fusion = fusion;
                r.use_ori = ori;
                r.use_hfe = hfe;
                r.use_cca = cca;
                r.label = std::string("MOON [") + (ori ? "ORI " : "---- ") + (hfe ? "HFE " : "---- ") +
                          (cca ? "CCA" : "---") + "]";
                r.tag = std::string("ori") + std::to_string(ori) + "_hfe" + std::to_string(hfe) + "_cca" +
                        std::to_string(cca);
                rows.push_back(r);
            }
    return rows;
}

// ---- subcommand drivers ----

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + path);
    f << text;
}

void write_outputs(const std::string& out, const json& resolved, const MetricsReport& report) {
    fs::create_directories(out);
    write_text((fs::path(out) / "resolved_config.json").string(), resolved.dump(2) + "\n");
    write_text((fs::path(out) / "metrics.json").string(), report_to_json(report) + "\n");
    write_text((fs::path(out) / "metrics.txt").string(), render_table(report));
}

struct LoadedData {
    DatasetManifest manifest;
    InMemoryDataset ds;
    TrainValIds ids;
    // evaluation pool: independent test manifest when configured, else val
    std::unique_ptr<InMemoryDataset> test_ds;
    std::vector<std::string> eval_ids;

    const InMemoryDataset& eval_dataset() const { return test_ds ? *test_ds : ds; }
};

LoadedData load_data(const RunConfig& cfg) {
    LoadedData d;
    check(!cfg.data_manifest.empty(), "config: data.manifest is required for this command");
    d.manifest = load_manifest(cfg.data_manifest);
    d.ds = InMemoryDataset::load(d.manifest);
    std::optional<FoldSplit> split;
    if (!cfg.split_file.empty()) split = load_split(cfg.split_file);
    d.ids = make_train_val(d.manifest, split ? &*split : nullptr, cfg.fold, cfg.val_fraction, cfg.seed);
    if (!cfg.test_manifest.empty()) {
        DatasetManifest tm = load_manifest(cfg.test_manifest);
        d.test_ds = std::make_unique<InMemoryDataset>(InMemoryDataset::load(tm));
        for (const auto& c : tm.cases) d.eval_ids.push_back(c.id);
    } else {
        d.eval_ids = d.ids.val;
    }
    return d;
}

} // namespace

int cmd_synthesize(const RunConfig& cfg, const json& resolved, const std::string& out) {
    fs::create_directories(out);
    write_text((fs::path(out) / "resolved_config.json").string(), resolved.dump(2) + "\n");
    DatasetManifest m = synthesize_dataset(cfg.synth, (fs::path(out) / "dataset").string());
    std::cout << "synthesized " << m.cases.size() << " cases under " << out << "/dataset\n";
    return 0;
}

int cmd_train(const RunConfig& cfg, const json& resolved, const std::string& out) {
    LoadedData d = load_data(cfg);
    fs::create_directories(out);
    write_text((fs::path(out) / "resolved_config.json").string(), resolved.dump(2) + "\n");
    TrainArtifacts art = train_and_save(cfg, d.ds, d.ids.train, d.ids.val, cfg.seed, out, true);

    json j;
    j["train_acc3"] = art.train_acc3;
    j["final_train_loss"] = art.summary.final_train_loss;
    j["best_epoch"] = art.summary.best_epoch;
    j["cca_skipped_batches"] = art.summary.cca_skipped_batches;
    j["clip_events"] = art.summary.clip_events;
    if (art.final_val) {
        j["val"] = {{"acc_geG2", art.final_val->ge_g2.acc},
                    {"auc_geG2", art.final_val->ge_g2.auc},
                    {"acc_G3", art.final_val->g3.acc},
                    {"auc_G3", art.final_val->g3.auc}};
    }
    write_text((fs::path(out) / "metrics.json").string(), j.dump(2) + "\n");
    std::cout << "trained " << cfg.train.epochs << " epochs; final train loss "
              << art.summary.final_train_loss << ", train 3-class acc " << art.train_acc3 << "%\n";
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const json& resolved, const std::string& out) {
    check(!cfg.eval_checkpoint.empty(), "config: eval.checkpoint is required");
    LoadedData d = load_data(cfg);
    auto model = load_model(cfg.eval_checkpoint);
    EvalMetrics m = evaluate_model(*model, d.eval_dataset(), d.eval_ids, cfg.train.batch_size);

    MetricsReport report;
    MetricsRow row;
    row.label = model->cfg.multi_organ()
                    ? std::string("MOON (") + to_string(model->cfg.fusion) + ")"
                    : std::string("Single-organ (") + to_string(Organ(model->cfg.single_organ)) + ")";
    row.strategy = model->cfg.multi_organ() ? to_string(model->cfg.fusion)
                                            : "single:" + std::string(to_string(Organ(model->cfg.single_organ)));
    row.use_ori = model->cfg.use_ori;
    row.use_hfe = model->cfg.use_hfe;
    row.use_cca = cfg.train.loss.use_cca;
    row.folds = {m};
    row.mean = m;
    report.rows.push_back(row);
    write_outputs(out, resolved, report);
    std::cout << render_table(report);
    return 0;
}

int cmd_crossval(const RunConfig& cfg, const json& resolved, const std::string& out) {
    LoadedData d = load_data(cfg);
    FoldSplit split = stratified_kfold(d.manifest, cfg.crossval_k, cfg.seed);
    fs::create_directories(out);
    save_split(split, (fs::path(out) / "folds.json").string());

    MetricsRow row;
    row.label = cfg.single_organ.empty()
                    ? std::string(cfg.use_ori || cfg.use_hfe ? "MOON (" : "MOON* (") + cfg.fusion + ")"
                    : "Single-organ (" + cfg.single_organ + ")";
    row.strategy = cfg.single_organ.empty() ? cfg.fusion : "single:" + cfg.single_organ;
    row.use_ori = cfg.use_ori;
    row.use_hfe = cfg.use_hfe;
    row.use_cca = cfg.train.loss.use_cca;
    row.folds.resize(size_t(cfg.crossval_k));

    parallel_for_jobs(cfg.crossval_k, cfg.jobs, [&](int fold) {
        TrainValIds ids = make_train_val(d.manifest, &split, fold, 0.0, cfg.seed);
        std::string dir = (fs::path(out) / ("fold" + std::to_string(fold))).string();
        TrainArtifacts art = train_and_save(cfg, d.ds, ids.train, ids.val, cfg.seed, dir, true);
        auto model = load_model(art.final_checkpoint);
        row.folds[size_t(fold)] = evaluate_model(*model, d.ds, ids.val, cfg.train.batch_size);
    });
    aggregate_cv(row);

    MetricsReport report;
    report.rows.push_back(row);
    write_outputs(out, resolved, report);
    std::cout << render_table(report);
    return 0;
}

int cmd_compare_fusion(const RunConfig& cfg, const json& resolved, const std::string& out) {
    LoadedData d = load_data(cfg);
    std::vector<RowSpec> rows;
    for (bool with_modules : {true, false})
        for (const char* fusion : {"concat", "predsum", "lowrank", "film"}) {
            RowSpec r;
            r.fusion = fusion;
            r.use_ori = r.use_hfe = with_modules;
            r.use_cca = cfg.train.loss.use_cca;
            r.label = std::string(with_modules ? "MOON (" : "MOON* (") + fusion + ")";
            r.tag = std::string(with_modules ? "moon_" : "moonx_") + fusion;
            rows.push_back(r);
        }

    MetricsReport report;
    report.rows.resize(rows.size());
    // parallelism lives inside run_row (over seeds); rows run serially so the
    // thread count stays bounded
    for (size_t i = 0; i < rows.size(); ++i) {
        RowResult rr = run_row(cfg, rows[i], d.ds, d.ids.train, d.ids.val, d.eval_dataset(), d.eval_ids,
                               out, cfg.jobs);
        report.rows[i] = rr.metrics;
    }
    write_outputs(out, resolved, report);
    std::cout << render_table(report);
    return 0;
}

int cmd_ablate(const RunConfig& cfg, const json& resolved, const std::string& out) {
    LoadedData d = load_data(cfg);
    std::vector<RowSpec> rows = ablation_grid(cfg.fusion);
    MetricsReport report;
    report.rows.resize(rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        RowResult rr = run_row(cfg, rows[i], d.ds, d.ids.train, d.ids.val, d.eval_dataset(), d.eval_ids,
                               out, cfg.jobs);
        report.rows[i] = rr.metrics;
    }
    write_outputs(out, resolved, report);
    std::cout << render_table(report);
    return 0;
}

int cmd_gradcam(const RunConfig& cfg, const json& resolved, const std::string& out) {
    check(!cfg.gradcam_checkpoint.empty(), "config: gradcam.checkpoint is required");
    check(!cfg.data_manifest.empty(), "config: data.manifest is required");
    DatasetManifest manifest = load_manifest(cfg.data_manifest);
    InMemoryDataset ds = InMemoryDataset::load(manifest);
    auto model = load_model(cfg.gradcam_checkpoint);
    Organ organ = organ_from_string(cfg.gradcam_organ);
    Task task = cfg.gradcam_task == "G3" ? Task::G3 : Task::GeG2;

    fs::create_directories(out);
    write_text((fs::path(out) / "resolved_config.json").string(), resolved.dump(2) + "\n");
    json scores = json::array();
    int done = 0;
    for (const auto& c : ds.cases) {
        if (cfg.gradcam_max_cases > 0 && done >= cfg.gradcam_max_cases) break;
        RoiVolume heat = gradcam_map(*model, ds, c.id, organ, task);
        std::string heat_path = (fs::path(out) / (c.id + "_" + cfg.gradcam_organ + "_heat.mvol")).string();
        write_volume(heat, heat_path);
        json entry = {{"id", c.id}, {"grade", to_string(c.grade)}, {"heat", heat_path}};
        if (c.has_mask && organ == Organ::Esophagus)
            entry["localization"] = localization_score(heat, c.lesion_mask);
        if (cfg.gradcam_pgm) write_pgm_slices(heat, (fs::path(out) / "pgm").string(), c.id);
        scores.push_back(entry);
        ++done;
    }
    write_text((fs::path(out) / "scores.json").string(), scores.dump(2) + "\n");
    std::cout << "gradcam: wrote " << done << " heat volumes to " << out << "\n";
    return 0;
}

} // namespace moon
