#ifndef MOON_TRAIN_HPP
#define MOON_TRAIN_HPP

#include <fstream>
#include <optional>

#include <json.hpp>

#include "moon/data.hpp"
#include "moon/losses.hpp"
#include "moon/metrics.hpp"
#include "moon/model.hpp"

namespace moon {

struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
    int epochs = 100;
    double lr = 1e-5;
    int lr_halve_every = 20; // piecewise constant decay
    int batch_size = 8;
    double clip_norm = 5.0;
    double weight_decay = 0.0; // decoupled; skips biases/norms/pos embeds
    int warmup_epochs = 0;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    uint64_t seed = 1;
    AugmentConfig augment;
    LossConfig loss;

    void validate() const {
        check(epochs >= 1 && lr > 0 && batch_size >= 1, "train: epochs >= 1, lr > 0, batch >= 1");
        check(lr_halve_every >= 1, "train: lr_halve_every >= 1");
        loss.validate();
    }
};

template <class Real>
struct Adam {
    double beta1, beta2, eps;
    int64_t step_count = 0;

    explicit Adam(const TrainConfig& cfg)
        : beta1(cfg.adam_beta1), beta2(cfg.adam_beta2), eps(cfg.adam_eps) {}

    static bool decays(const Param<Real>& p) {
        const std::string& n = p.name;
        auto ends = [&](const char* suf) {
            size_t l = std::strlen(suf);
            return n.size() >= l && n.compare(n.size() - l, l, suf) == 0;
        };
        return !(ends(".b") || ends(".gamma") || ends(".beta") || ends(".pos"));
    }

    // returns the pre-clip global gradient norm
    double step(const ParamList<Real>& params, double lr, double clip_norm, double weight_decay = 0.0) {
        double sq = 0;
        for (Param<Real>* p : params)
            for (int64_t i = 0; i < p->grad.numel(); ++i) sq += double(p->grad[i]) * double(p->grad[i]);
        double norm = std::sqrt(sq);
        double scale = clip_norm > 0 && norm > clip_norm ? clip_norm / norm : 1.0;
        ++step_count;
        double bc1 = 1.0 - std::pow(beta1, double(step_count));
        double bc2 = 1.0 - std::pow(beta2, double(step_count));
        for (Param<Real>* p : params) {
            if (p->adam_m.numel() != p->value.numel()) {
                p->adam_m = Tensor<Real>(p->value.shape);
                p->adam_v = Tensor<Real>(p->value.shape);
            }
            double wd = weight_decay > 0 && decays(*p) ? weight_decay : 0.0;
            for (int64_t i = 0; i < p->value.numel(); ++i) {
                double g = double(p->grad[i]) * scale;
                double m = beta1 * double(p->adam_m[i]) + (1 - beta1) * g;
                double v = beta2 * double(p->adam_v[i]) + (1 - beta2) * g * g;
                p->adam_m[i] = Real(m);
                p->adam_v[i] = Real(v);
                double upd = lr * p->lr_scale * (m / bc1) / (std::sqrt(v / bc2) + eps);
                p->value[i] -= Real(upd + lr * p->lr_scale * wd * double(p->value[i]));
            }
        }
        return norm;
    }
};

struct CasePrediction {
    std::string id;
    Grade label = Grade::G1;
    double h1 = 0, h2 = 0; // fused ordinal logits
};

inline EvalMetrics metrics_from_predictions(const std::vector<CasePrediction>& preds) {
    EvalMetrics m;
    for (Task task : {Task::GeG2, Task::G3}) {
        std::vector<int> labels, hard;
        std::vector<double> scores;
        for (const auto& p : preds) {
            labels.push_back(binarize_grade(p.label, task));
            hard.push_back(binarize_grade(ordinal_decode(p.h1, p.h2), task));
            scores.push_back(task_score(p.h1, p.h2, task));
        }
        TaskMetrics tm;
        tm.acc = accuracy(hard, labels);
        tm.auc = auc(scores, labels);
        (task == Task::GeG2 ? m.ge_g2 : m.g3) = tm;
    }
    return m;
}

inline double three_class_accuracy(const std::vector<CasePrediction>& preds) {
    int64_t hit = 0;
    for (const auto& p : preds) hit += ordinal_decode(p.h1, p.h2) == p.label;
    return 100.0 * double(hit) / double(preds.size());
}

template <class Real>
std::vector<CasePrediction> predict(MoonModel<Real>& model, const InMemoryDataset& ds,
                                    const std::vector<std::string>& ids, int batch_size) {
    std::vector<int> index;
    for (const auto& id : ids)
        for (size_t i = 0; i < ds.cases.size(); ++i)
            if (ds.cases[i].id == id) index.push_back(int(i));
    check(index.size() == ids.size(), "predict: some ids missing from the dataset");
    std::vector<CasePrediction> out;
    AugmentConfig no_aug;
    no_aug.enabled = false;
    for (size_t at = 0; at < index.size(); at += size_t(batch_size)) {
        std::vector<int> chunk(index.begin() + long(at),
                               index.begin() + long(std::min(index.size(), at + size_t(batch_size))));
        Batch<Real> batch = make_batch<Real>(ds, chunk, no_aug, 0, false);
        Tape<Real> tape;
        tape.recording = false;
        ModelOutput<Real> mo = model.forward(tape, batch.organs);
        for (size_t i = 0; i < chunk.size(); ++i) {
            CasePrediction p;
            p.id = ds.cases[size_t(chunk[i])].id;
            p.label = ds.cases[size_t(chunk[i])].grade;
            p.h1 = double(mo.h_f.val()[int64_t(i) * 2 + 0]);
            p.h2 = double(mo.h_f.val()[int64_t(i) * 2 + 1]);
            out.push_back(p);
        }
    }
    return out;
}

struct EpochRecord {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    std::optional<EvalMetrics> val;
};

struct TrainSummary {
    std::vector<EpochRecord> log;
    int best_epoch = -1;
    double best_val_auc = -1; // mean of the two task AUCs
    double final_train_loss = 0;
    int cca_skipped_batches = 0;
    int clip_events = 0;
};

// Full training loop: Eq-style composite loss on fused + branch logits,
// Adam with the halve-every-N schedule, per-epoch validation metrics,
// best/final checkpoints left to the caller via the summary and callbacks.
template <class Real>
TrainSummary train_model(MoonModel<Real>& model, const InMemoryDataset& ds,
                         const std::vector<std::string>& train_ids,
                         const std::vector<std::string>& val_ids, const TrainConfig& cfg,
                         const std::function<void(const EpochRecord&)>& on_epoch = nullptr,
                         const std::function<void(int, double)>& on_best = nullptr) {
    cfg.validate();
    check(!train_ids.empty(), "train: empty training set");
    std::vector<int> train_index;
    for (const auto& id : train_ids)
        for (size_t i = 0; i < ds.cases.size(); ++i)
            if (ds.cases[i].id == id) train_index.push_back(int(i));
    check(train_index.size() == train_ids.size(), "train: some train ids missing");

    ParamList<Real> params = model.params();
    for (Param<Real>* p : params) p->zero_grad();
    Adam<Real> adam(cfg);
    TrainSummary summary;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double lr = cfg.lr * std::pow(0.5, double((epoch - 1) / cfg.lr_halve_every));
        if (cfg.warmup_epochs > 0 && epoch <= cfg.warmup_epochs)
            lr *= double(epoch) / double(cfg.warmup_epochs);
        Rng shuffle_rng(hash_combine(cfg.seed, uint64_t(epoch)));
        std::vector<int> order = train_index;
        shuffle_rng.shuffle(order);

        double loss_acc = 0;
        int batches = 0;
        for (size_t at = 0; at < order.size(); at += size_t(cfg.batch_size)) {
            std::vector<int> chunk(order.begin() + long(at),
                                   order.begin() + long(std::min(order.size(), at + size_t(cfg.batch_size))));
            uint64_t batch_seed = hash_combine(hash_combine(cfg.seed, uint64_t(epoch)), uint64_t(at));
            Batch<Real> batch = make_batch<Real>(ds, chunk, cfg.augment, batch_seed, true);

            Tape<Real> tape;
            Var<Real> loss;
            bool cca_skipped = false;
            double lval = 0;
            auto batch_diag = [&] {
                std::string ids;
                for (const auto& id : batch.ids) ids += id + " ";
                return "epoch " + std::to_string(epoch) + ", batch cases: " + ids;
            };
            try {
                ModelOutput<Real> mo = model.forward(tape, batch.organs);
                if (model.cfg.multi_organ()) {
                    loss = ops::overall_loss(mo.h_f, mo.h_e, mo.h_l, mo.h_s, batch.targets, cfg.loss,
                                             &cca_skipped);
                } else {
                    loss = ops::scale(ops::ordinal_loss(mo.h_f, batch.targets), Real(cfg.loss.lambda));
                }
                lval = double(loss.val()[0]);
            } catch (const ContractError& e) {
                if (std::string(e.what()).find("non-finite") == std::string::npos) throw;
                throw TrainingError("train: non-finite loss at " + batch_diag() + " (" + e.what() + ")");
            }
            if (cca_skipped) summary.cca_skipped_batches++;
            if (!std::isfinite(lval))
                throw TrainingError("train: non-finite loss at " + batch_diag());
            for (Param<Real>* p : params) p->zero_grad();
            tape.backward(loss.id);
            double gnorm = adam.step(params, lr, cfg.clip_norm, cfg.weight_decay);
            if (cfg.clip_norm > 0 && gnorm > cfg.clip_norm) summary.clip_events++;
            loss_acc += lval;
            ++batches;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.lr = lr;
        rec.train_loss = loss_acc / std::max(1, batches);
        if (!val_ids.empty()) {
            std::vector<CasePrediction> preds = predict(model, ds, val_ids, cfg.batch_size);
            rec.val = metrics_from_predictions(preds);
            double mean_auc = (rec.val->ge_g2.auc + rec.val->g3.auc) / 2.0;
            if (mean_auc > summary.best_val_auc) {
                summary.best_val_auc = mean_auc;
                summary.best_epoch = epoch;
                if (on_best) on_best(epoch, mean_auc);
            }
        }
        summary.final_train_loss = rec.train_loss;
        summary.log.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return summary;
}

inline nlohmann::json epoch_record_to_json(const EpochRecord& r) {
    nlohmann::json j;
    j["epoch"] = r.epoch;
    j["lr"] = r.lr;
    j["train_loss"] = r.train_loss;
    if (r.val) {
        j["val_acc_geG2"] = r.val->ge_g2.acc;
        j["val_auc_geG2"] = r.val->ge_g2.auc;
        j["val_acc_G3"] = r.val->g3.acc;
        j["val_auc_G3"] = r.val->g3.auc;
    } else {
        j["val_acc_geG2"] = nullptr;
        j["val_auc_geG2"] = nullptr;
        j["val_acc_G3"] = nullptr;
        j["val_auc_G3"] = nullptr;
    }
    return j;
}

} // namespace moon

#endif
