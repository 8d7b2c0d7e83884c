// Acceptance gate: one pass/fail line per criterion.
//
//   moon_acceptance            runs everything
//   moon_acceptance 3          runs criterion 3
//   moon_acceptance 8 9 10     runs the shared directional block
//
// Criteria 8-10 share trained models; invoking any of them runs the block.

#include <chrono>
#include <cstring>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>

#include "moon/driver.hpp"
#include "support/cca_oracle.hpp"
#include "support/gradcheck.hpp"

using namespace moon;
namespace fs = std::filesystem;
using moontest::fd_grads;
using moontest::grad_check_max_rel_err;
using moontest::max_rel_err;
using moontest::random_tensor;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

double now_seconds() {
    using clock = std::chrono::steady_clock;
    static const clock::time_point t0 = clock::now();
    return std::chrono::duration<double>(clock::now() - t0).count();
}

std::string fmt(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    return buf;
}

double cca_value(const Tensor<double>& h1, const Tensor<double>& h2) {
    Tape<double> t;
    t.recording = false;
    return ops::cca_loss(constant(t, h1), constant(t, h2)).val()[0];
}

Tensor<double> correlated_logits(Rng& rng, int n, double rho) {
    Tensor<double> h({n, 2});
    for (int i = 0; i < n; ++i) {
        double a = rng.normal(), b = rng.normal();
        h[i * 2 + 0] = a;
        h[i * 2 + 1] = rho * a + std::sqrt(1 - rho * rho) * b;
    }
    return h;
}

// ---------- criterion 1: CCA closed forms ----------
Outcome criterion_1() {
    double t0 = now_seconds();
    Rng rng(1001);
    double worst_same = 0, worst_neg = 0;
    for (int trial = 0; trial < 50; ++trial) {
        auto h = random_tensor(rng, {16, 2}, -2, 2);
        worst_same = std::max(worst_same, std::abs(cca_value(h, h) + 1.0 / 15.0));
        Tensor<double> hneg = h;
        for (auto& x : hneg.data) x = -x;
        worst_neg = std::max(worst_neg, std::abs(cca_value(h, hneg) - 1.0 / 15.0));
    }
    double elapsed = now_seconds() - t0;
    Outcome o;
    o.pass = worst_same < 1e-6 && worst_neg < 1e-6 && elapsed < 1.0;
    o.detail = "max |cca(H,H)+1/15| = " + fmt(worst_same) + ", max |cca(H,-H)-1/15| = " + fmt(worst_neg) +
               ", runtime " + fmt(elapsed, 3) + " s (< 1 s)";
    return o;
}

// ---------- criterion 2: bound and symmetry ----------
Outcome criterion_2() {
    Rng rng(1002);
    int n = 16;
    double bound = 1.0 / (n - 1) + 1e-9;
    double worst_bound = 0, worst_sym = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        auto h1 = random_tensor(rng, {n, 2}, -3, 3);
        auto h2 = random_tensor(rng, {n, 2}, -3, 3);
        double v = cca_value(h1, h2);
        worst_bound = std::max(worst_bound, std::abs(v));
        worst_sym = std::max(worst_sym, std::abs(v - cca_value(h2, h1)));
    }
    Outcome o;
    o.pass = worst_bound <= bound && worst_sym < 1e-10;
    o.detail = "max |value| = " + fmt(worst_bound, 8) + " (bound " + fmt(bound, 8) +
               "), max asymmetry = " + fmt(worst_sym) + " (< 1e-10)";
    return o;
}

// ---------- criterion 3: gradient suite ----------
Outcome criterion_3() {
    double t0 = now_seconds();
    Rng rng(1003);
    std::map<std::string, double> worst;

    for (int trial = 0; trial < 10; ++trial) {
        auto h1 = moontest::cca_fixture(rng, 8);
        auto h2 = moontest::cca_fixture(rng, 8);
        worst["cca_loss"] = std::max(worst["cca_loss"],
                                     grad_check_max_rel_err(
                                         [](Tape<double>& t, const std::vector<Var<double>>& v) {
                                             return ops::cca_loss(v[0], v[1]);
                                         },
                                         {h1, h2}));

        Tensor<double> y({4, 2});
        for (auto& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
        worst["ordinal_loss"] = std::max(
            worst["ordinal_loss"],
            grad_check_max_rel_err(
                [&y](Tape<double>& t, const std::vector<Var<double>>& v) {
                    return ops::ordinal_loss(v[0], y);
                },
                {random_tensor(rng, {4, 2}, -2, 2)}));

        worst["attention"] = std::max(
            worst["attention"], grad_check_max_rel_err(
                                    [](Tape<double>& t, const std::vector<Var<double>>& v) {
                                        auto o = ops::attention(v[0], v[1], v[2]);
                                        return ops::sum_all(ops::mul(o, o));
                                    },
                                    {random_tensor(rng, {3, 4}), random_tensor(rng, {5, 4}),
                                     random_tensor(rng, {5, 2})}));

        // ori_interact and hfe_enhance: gradients w.r.t. inputs and parameters
        {
            Rng prng(rng.next_u64());
            OriPair<double> proto;
            proto.init(prng, 2, 1, {2, 2, 2});
            auto fe = random_tensor(rng, {1, 3, 2, 3, 2});
            auto fx = random_tensor(rng, {1, 2, 3, 2, 2});
            ParamList<double> protops;
            proto.collect("p", protops);
            std::vector<Tensor<double>> inputs = {fe, fx};
            for (auto* q : protops) inputs.push_back(q->value);
            auto eval = [&](const std::vector<Tensor<double>>& xs) {
                OriPair<double> p = proto;
                ParamList<double> ps;
                p.collect("p", ps);
                for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = xs[2 + i];
                Tape<double> t;
                t.recording = false;
                auto [de, dx] = ops::ori_interact(t, constant(t, xs[0]), constant(t, xs[1]), p, 1);
                double s = 0;
                for (auto v : de.val().data) s += v * v;
                for (auto v : dx.val().data) s += v * v;
                return s;
            };
            OriPair<double> p = proto;
            ParamList<double> ps;
            p.collect("p", ps);
            for (auto* q : ps) q->zero_grad();
            Tape<double> t;
            Var<double> vfe = {&t, t.push(fe, true)};
            Var<double> vfx = {&t, t.push(fx, true)};
            auto [de, dx] = ops::ori_interact(t, vfe, vfx, p, 1);
            t.backward(ops::add(ops::sum_all(ops::mul(de, de)), ops::sum_all(ops::mul(dx, dx))).id);
            std::vector<Tensor<double>> analytic = {t.grad(vfe.id), t.grad(vfx.id)};
            for (auto* q : ps) analytic.push_back(q->grad);
            worst["ori_interact"] = std::max(worst["ori_interact"], max_rel_err(analytic, fd_grads(eval, inputs)));
        }
        {
            Rng prng(rng.next_u64());
            HfeParams<double> proto;
            proto.init(prng, 2, 3, 2, 1);
            auto f1 = random_tensor(rng, {1, 3, 2, 3, 2});
            auto f2 = random_tensor(rng, {1, 2, 3, 2, 3});
            auto f3 = random_tensor(rng, {1, 2, 2, 2, 2});
            ParamList<double> protops;
            proto.collect("h", protops);
            std::vector<Tensor<double>> inputs = {f1, f2, f3};
            for (auto* q : protops) inputs.push_back(q->value);
            auto eval = [&](const std::vector<Tensor<double>>& xs) {
                HfeParams<double> p = proto;
                ParamList<double> ps;
                p.collect("h", ps);
                for (size_t i = 0; i < ps.size(); ++i) ps[i]->value = xs[3 + i];
                Tape<double> t;
                t.recording = false;
                auto out = ops::hfe_enhance(t, constant(t, xs[0]), constant(t, xs[1]), constant(t, xs[2]), p, 1);
                double s = 0;
                for (auto v : out.val().data) s += v * v;
                return s;
            };
            HfeParams<double> p = proto;
            ParamList<double> ps;
            p.collect("h", ps);
            for (auto* q : ps) q->zero_grad();
            Tape<double> t;
            Var<double> v1 = {&t, t.push(f1, true)};
            Var<double> v2 = {&t, t.push(f2, true)};
            Var<double> v3 = {&t, t.push(f3, true)};
            auto out = ops::hfe_enhance(t, v1, v2, v3, p, 1);
            t.backward(ops::sum_all(ops::mul(out, out)).id);
            std::vector<Tensor<double>> analytic = {t.grad(v1.id), t.grad(v2.id), t.grad(v3.id)};
            for (auto* q : ps) analytic.push_back(q->grad);
            worst["hfe_enhance"] = std::max(worst["hfe_enhance"], max_rel_err(analytic, fd_grads(eval, inputs)));
        }
    }
    double elapsed = now_seconds() - t0;
    Outcome o;
    o.detail = "max rel err:";
    for (const auto& [name, err] : worst) {
        o.pass = o.pass && err <= 1e-4;
        o.detail += " " + name + "=" + fmt(err, 3);
    }
    o.pass = o.pass && elapsed < 120.0;
    o.detail += " (tol 1e-4), runtime " + fmt(elapsed, 3) + " s (< 120 s)";
    return o;
}

// ---------- criterion 4: residual identities ----------
Outcome criterion_4() {
    Rng rng(1004);
    OriPair<double> el, es;
    el.init(rng, 4, 2, {2, 2, 2});
    es.init(rng, 4, 2, {2, 2, 2});
    for (OriPair<double>* p : {&el, &es}) {
        ParamList<double> ps;
        p->collect("x", ps);
        for (auto* q : ps) q->value = Tensor<double>(q->value.shape);
    }
    auto fe = random_tensor(rng, {2, 5, 4, 4, 4});
    auto fl = random_tensor(rng, {2, 4, 5, 4, 4});
    auto fs = random_tensor(rng, {2, 4, 4, 5, 4});
    Tape<double> t;
    auto out = ops::apply_ori_stage(t, constant(t, fe), constant(t, fl), constant(t, fs), el, es, 2);
    bool ori_ok = std::memcmp(out[0].val().data.data(), fe.data.data(), fe.data.size() * 8) == 0 &&
                  std::memcmp(out[1].val().data.data(), fl.data.data(), fl.data.size() * 8) == 0 &&
                  std::memcmp(out[2].val().data.data(), fs.data.data(), fs.data.size() * 8) == 0;

    HfeParams<double> hfe;
    hfe.init(rng, 3, 5, 4, 2);
    ParamList<double> hps;
    hfe.collect("h", hps);
    for (auto* q : hps) q->value = Tensor<double>(q->value.shape);
    auto f1 = random_tensor(rng, {2, 5, 4, 6, 3});
    auto f2 = random_tensor(rng, {2, 3, 3, 4, 5});
    auto f3 = random_tensor(rng, {2, 2, 2, 3, 4});
    auto enhanced = ops::hfe_enhance(t, constant(t, f1), constant(t, f2), constant(t, f3), hfe, 2);
    bool hfe_ok = std::memcmp(enhanced.val().data.data(), f3.data.data(), f3.data.size() * 8) == 0;

    Outcome o;
    o.pass = ori_ok && hfe_ok;
    o.detail = std::string("zero-weight ORI identity: ") + (ori_ok ? "bit-exact" : "VIOLATED") +
               ", zero-weight HFE identity: " + (hfe_ok ? "bit-exact" : "VIOLATED");
    return o;
}

// ---------- criterion 5: AUC oracle ----------
Outcome criterion_5() {
    Rng rng(1005);
    double worst = 0;
    for (int trial = 0; trial < 200; ++trial) {
        int n = rng.uniform_int(4, 50);
        std::vector<double> scores(static_cast<size_t>(n));
        std::vector<int> labels(static_cast<size_t>(n));
        bool discrete = rng.bernoulli(0.5);
        int pos = 0;
        for (int i = 0; i < n; ++i) {
            scores[size_t(i)] = discrete ? 0.1 * rng.uniform_int(0, 6) : rng.uniform();
            labels[size_t(i)] = rng.bernoulli(0.5);
            pos += labels[size_t(i)];
        }
        if (pos == 0) labels[0] = 1;
        if (pos == n) labels[0] = 0;
        // brute-force pairwise concordance
        double num = 0;
        int64_t pairs = 0;
        for (int i = 0; i < n; ++i) {
            if (!labels[size_t(i)]) continue;
            for (int j = 0; j < n; ++j) {
                if (labels[size_t(j)]) continue;
                ++pairs;
                if (scores[size_t(i)] > scores[size_t(j)])
                    num += 1;
                else if (scores[size_t(i)] == scores[size_t(j)])
                    num += 0.5;
            }
        }
        worst = std::max(worst, std::abs(auc(scores, labels) - num / double(pairs)));
    }
    double worked = auc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1});
    Outcome o;
    o.pass = worst <= 1e-12 && worked == 0.75;
    o.detail = "max |auc - oracle| = " + fmt(worst) + " over 200 instances; worked example = " +
               fmt(worked, 6) + " (want 0.75)";
    return o;
}

// ---------- criterion 6: Eq-combination arithmetic ----------
Outcome criterion_6() {
    Tape<double> t;
    auto c = [&](double v) { return constant(t, Tensor<double>({1}, {v})); };
    double total = ops::combine_overall(c(1.0), ops::add(c(0.5), c(0.5)), 0.8).val()[0];

    Rng rng(1006);
    auto hf = random_tensor(rng, {8, 2});
    auto he = correlated_logits(rng, 8, 0.5);
    auto hl = correlated_logits(rng, 8, 0.4);
    auto hs = correlated_logits(rng, 8, 0.6);
    Tensor<double> y({8, 2});
    for (auto& v : y.data) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
    LossConfig cfg;
    cfg.lambda = 1.0;
    double lam1 =
        ops::overall_loss(constant(t, hf), constant(t, he), constant(t, hl), constant(t, hs), y, cfg).val()[0];
    double ord = ops::ordinal_loss(constant(t, hf), y).val()[0];
    cfg.lambda = 0.0;
    double lam0 =
        ops::overall_loss(constant(t, hf), constant(t, he), constant(t, hl), constant(t, hs), y, cfg).val()[0];
    double ccasum = cca_value(he, hl) + cca_value(he, hs);

    Outcome o;
    bool exact = total == 1.0;
    bool b1 = lam1 == ord;
    bool b0 = std::abs(lam0 - ccasum) < 1e-12;
    o.pass = exact && b1 && b0;
    o.detail = "0.8*1.0 + 0.2*(0.5+0.5) = " + fmt(total, 17) + (exact ? " (exact)" : " (NOT exact)") +
               "; lambda=1 equals ordinal: " + (b1 ? "yes" : "NO") +
               "; lambda=0 equals CCA sum: " + (b0 ? "yes" : "NO");
    return o;
}

// ---------- criterion 7: overfit ----------
Outcome criterion_7() {
    double t0 = now_seconds();
    SynthConfig scfg; // defaults: 8 cases per grade, paper dims / 4
    fs::path dir = fs::temp_directory_path() / "moon_acceptance_overfit";
    fs::remove_all(dir);
    DatasetManifest manifest = synthesize_dataset(scfg, dir.string());
    InMemoryDataset ds = InMemoryDataset::load(manifest);

    RunConfig cfg; // default small EncoderConfig: 16/32/64/64
    cfg.train.epochs = 300;
    cfg.train.lr = 2e-3;
    cfg.train.lr_halve_every = 120;
    cfg.train.batch_size = 8;
    cfg.train.augment.enabled = false;
    cfg.seed = 1;

    ModelConfig mc = cfg.model_config(ds.roi_dims);
    MoonModel<TrainReal> model;
    model.init(mc);
    std::vector<std::string> ids;
    for (const auto& c : ds.cases) ids.push_back(c.id);
    TrainConfig tc = cfg.train;
    tc.seed = 1;
    TrainSummary summary = train_model(model, ds, ids, {}, tc);
    double acc = three_class_accuracy(predict(model, ds, ids, tc.batch_size));
    double elapsed = now_seconds() - t0;

    Outcome o;
    o.pass = acc == 100.0 && elapsed <= 600.0;
    o.detail = "24 cases, 300 epochs -> train 3-class accuracy " + fmt(acc, 5) + "% (want 100%), final loss " +
               fmt(summary.final_train_loss, 4) + ", runtime " + fmt(elapsed, 4) + " s (<= 600 s)";
    return o;
}

// ---------- criteria 8-10: shared directional block ----------
struct DirectionalResults {
    Outcome c8, c9, c10;
    bool ran = false;
};

DirectionalResults run_directional_block() {
    DirectionalResults out;
    out.ran = true;
    double t0 = now_seconds();

    fs::path work = fs::temp_directory_path() / "moon_acceptance_directional";
    fs::remove_all(work);
    fs::create_directories(work);

    // datasets: 360 train / 120 test, default cross-organ signal
    SynthConfig train_cfg;
    train_cfg.counts = {120, 120, 120};
    train_cfg.seed = 42;
    SynthConfig test_cfg;
    test_cfg.counts = {40, 40, 40};
    test_cfg.seed = 4242;
    DatasetManifest train_manifest = synthesize_dataset(train_cfg, (work / "train").string());
    DatasetManifest test_manifest = synthesize_dataset(test_cfg, (work / "test").string());
    InMemoryDataset train_ds = InMemoryDataset::load(train_manifest);
    InMemoryDataset test_ds = InMemoryDataset::load(test_manifest);
    std::vector<std::string> eval_ids;
    for (const auto& c : test_ds.cases) eval_ids.push_back(c.id);

    // protocol shared by every row: default encoder, desk-scale recipe,
    // flip-only augmentation (zoom erases the 1-3 voxel varix blobs at this
    // resolution), model selection by validation mean-AUC
    RunConfig base;
    base.train.epochs = 40;
    base.train.lr = 1e-3;
    base.train.lr_halve_every = 16;
    base.train.batch_size = 12;
    base.train.warmup_epochs = 3;
    base.train.weight_decay = 1e-4;
    base.train.augment.spatial_scale = 0;
    base.train.augment.intensity_scale = 0;
    base.train.augment.cutout_count = 0;
    base.compare_seeds = {1, 2, 3};
    base.val_fraction = 0.1;
    base.jobs = 0; // use available cores; results are scheduling-independent

    TrainValIds ids = make_train_val(train_manifest, nullptr, 0, base.val_fraction, base.seed);

    std::vector<RowSpec> rows = ablation_grid("concat");
    RowSpec eso;
    eso.label = "Single-organ (Eso.)";
    eso.single_organ = "esophagus";
    eso.tag = "single_eso";
    rows.push_back(eso);

    std::map<std::string, RowResult> results;
    for (const auto& row : rows) {
        results[row.tag] =
            run_row(base, row, train_ds, ids.train, ids.val, test_ds, eval_ids, work.string(), base.jobs);
        std::cerr << "  [directional] " << row.label << ": mean AUC(G3) "
                  << fmt(results[row.tag].metrics.mean.g3.auc, 4) << ", AUC(>=G2) "
                  << fmt(results[row.tag].metrics.mean.ge_g2.auc, 4) << "\n";
    }

    // persist the full table for inspection
    MetricsReport report;
    for (const auto& row : rows) report.rows.push_back(results[row.tag].metrics);
    std::ofstream((work / "metrics.json").string()) << report_to_json(report) << "\n";
    std::ofstream((work / "metrics.txt").string()) << render_table(report);

    const MetricsRow& full = results["ori1_hfe1_cca1"].metrics;
    const MetricsRow& bare = results["ori0_hfe0_cca1"].metrics;
    const MetricsRow& eso_row = results["single_eso"].metrics;

    // criterion 8
    {
        double gap_single = full.mean.g3.auc - eso_row.mean.g3.auc;
        double gap_fusion = full.mean.g3.auc - bare.mean.g3.auc;
        double elapsed = now_seconds() - t0;
        out.c8.pass = gap_single >= 0.05 && gap_fusion >= 0.01 && elapsed <= 7200.0;
        out.c8.detail = "3-seed mean test AUC(G3): MOON(Concat) " + fmt(full.mean.g3.auc, 4) + ", eso-only " +
                        fmt(eso_row.mean.g3.auc, 4) + " (gap " + fmt(gap_single, 3) +
                        ", need >= 0.05), fusion-only " + fmt(bare.mean.g3.auc, 4) + " (gap " +
                        fmt(gap_fusion, 3) + ", need >= 0.01), runtime " + fmt(elapsed, 4) + " s (<= 7200)";
    }

    // criterion 9: full MOON achieves the highest mean task AUC of the grid
    {
        auto mean_task_auc = [](const MetricsRow& r) { return (r.mean.ge_g2.auc + r.mean.g3.auc) / 2.0; };
        double full_score = mean_task_auc(full);
        bool highest = true;
        std::string scores;
        for (const auto& row : ablation_grid("concat")) {
            double s = mean_task_auc(results[row.tag].metrics);
            scores += row.tag + "=" + fmt(s, 4) + " ";
            if (row.tag != "ori1_hfe1_cca1" && s > full_score) highest = false;
        }
        out.c9.pass = highest;
        out.c9.detail = "mean task AUC over the 8-config grid: " + scores +
                        (highest ? "-> full MOON is the maximum" : "-> full MOON is NOT the maximum");
    }

    // criterion 10: Grad-CAM localization on G3 test cases
    {
        auto model_full = load_model(results["ori1_hfe1_cca1"].checkpoints[0]);
        auto model_ablated = load_model(results["ori0_hfe0_cca1"].checkpoints[0]);
        double sum_full = 0, sum_ablated = 0;
        int n = 0;
        for (const auto& c : test_ds.cases) {
            if (c.grade != Grade::G3 || !c.has_mask) continue;
            RoiVolume heat_full = gradcam_map(*model_full, test_ds, c.id, Organ::Esophagus, Task::G3);
            RoiVolume heat_ablated = gradcam_map(*model_ablated, test_ds, c.id, Organ::Esophagus, Task::G3);
            sum_full += localization_score(heat_full, c.lesion_mask);
            sum_ablated += localization_score(heat_ablated, c.lesion_mask);
            ++n;
            if (n >= 40) break;
        }
        double mean_full = sum_full / n, mean_ablated = sum_ablated / n;
        out.c10.pass = n >= 20 && mean_full >= 0.6 && mean_full > mean_ablated;
        out.c10.detail = "top-5% heat mass inside lesion masks over " + std::to_string(n) +
                         " G3 cases: full " + fmt(mean_full, 4) + " (need >= 0.6), ablated " +
                         fmt(mean_ablated, 4) + " (need full > ablated)";
    }
    return out;
}

// ---------- criterion 11: determinism and roundtrips ----------
Outcome criterion_11() {
    fs::path work = fs::temp_directory_path() / "moon_acceptance_determinism";
    fs::remove_all(work);
    fs::create_directories(work);

    SynthConfig scfg;
    scfg.counts = {6, 6, 6};
    DatasetManifest manifest = synthesize_dataset(scfg, (work / "data").string());

    RunConfig cfg;
    cfg.channels = {4, 8, 16, 16};
    cfg.heads = 2;
    cfg.data_manifest = (work / "data" / "manifest.json").string();
    cfg.crossval_k = 2;
    cfg.train.epochs = 2;
    cfg.train.lr = 1e-3;
    cfg.train.batch_size = 4;
    cfg.seed = 9;
    nlohmann::json resolved = config_to_json(cfg);

    cmd_crossval(cfg, resolved, (work / "cv_a").string());
    cmd_crossval(cfg, resolved, (work / "cv_b").string());
    auto slurp = [](const fs::path& p) {
        std::ifstream f(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    };
    std::string ma = slurp(work / "cv_a" / "metrics.json");
    std::string mb = slurp(work / "cv_b" / "metrics.json");
    bool cv_identical = !ma.empty() && ma == mb;

    // volume roundtrip
    Rng rng(1011);
    RoiVolume v;
    v.h = 5;
    v.w = 4;
    v.d = 6;
    v.data.resize(120);
    for (auto& x : v.data) x = float(rng.normal(0, 2));
    write_volume(v, (work / "v.mvol").string());
    RoiVolume r = read_volume((work / "v.mvol").string());
    bool vol_ok = std::memcmp(r.data.data(), v.data.data(), v.data.size() * 4) == 0;

    // checkpoint roundtrip: eval outputs before save == after load, bitwise
    InMemoryDataset ds = InMemoryDataset::load(manifest);
    ModelConfig mc = cfg.model_config(ds.roi_dims);
    MoonModel<TrainReal> model;
    model.init(mc);
    std::vector<std::string> ids;
    for (const auto& c : ds.cases) ids.push_back(c.id);
    TrainConfig tc = cfg.train;
    (void)train_model(model, ds, ids, {}, tc);
    std::vector<CasePrediction> before = predict(model, ds, ids, 4);
    nlohmann::json meta;
    meta["model_config"] = model_config_to_json(mc);
    save_checkpoint<TrainReal>((work / "m.ckpt").string(), model.params(), meta);
    auto restored = load_model((work / "m.ckpt").string());
    std::vector<CasePrediction> after = predict(*restored, ds, ids, 4);
    bool ckpt_ok = true;
    for (size_t i = 0; i < before.size(); ++i)
        ckpt_ok = ckpt_ok && std::memcmp(&before[i].h1, &after[i].h1, 8) == 0 &&
                  std::memcmp(&before[i].h2, &after[i].h2, 8) == 0;

    Outcome o;
    o.pass = cv_identical && vol_ok && ckpt_ok;
    o.detail = std::string("crossval metrics.json reruns byte-identical: ") + (cv_identical ? "yes" : "NO") +
               "; volume roundtrip bit-exact: " + (vol_ok ? "yes" : "NO") +
               "; checkpoint eval roundtrip bit-exact: " + (ckpt_ok ? "yes" : "NO");
    return o;
}

} // namespace

int main(int argc, char** argv) {
    std::set<int> wanted;
    for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
    bool all = wanted.empty();
    auto want = [&](int k) { return all || wanted.count(k); };

    std::map<int, Outcome> results;
    if (want(1)) results[1] = criterion_1();
    if (want(2)) results[2] = criterion_2();
    if (want(3)) results[3] = criterion_3();
    if (want(4)) results[4] = criterion_4();
    if (want(5)) results[5] = criterion_5();
    if (want(6)) results[6] = criterion_6();
    if (want(7)) results[7] = criterion_7();
    if (want(8) || want(9) || want(10)) {
        DirectionalResults d = run_directional_block();
        if (want(8)) results[8] = d.c8;
        if (want(9)) results[9] = d.c9;
        if (want(10)) results[10] = d.c10;
    }
    if (want(11)) results[11] = criterion_11();

    bool ok = true;
    for (const auto& [id, o] : results) {
        std::cout << "CRITERION " << id << " [" << (o.pass ? "PASS" : "FAIL") << "] " << o.detail << "\n";
        ok = ok && o.pass;
    }
    return ok ? 0 : 1;
}
