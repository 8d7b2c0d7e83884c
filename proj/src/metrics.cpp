#include "moon/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "moon/tensor.hpp"

using nlohmann::json;

namespace moon {

double accuracy(const std::vector<int>& preds, const std::vector<int>& labels) {
    check(!preds.empty() && preds.size() == labels.size(), "accuracy: length mismatch or empty");
    int64_t match = 0;
    for (size_t i = 0; i < preds.size(); ++i) match += preds[i] == labels[i];
    return 100.0 * double(match) / double(preds.size());
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    check(scores.size() == labels.size() && !scores.empty(), "auc: length mismatch or empty");
    int64_t n_pos = 0, n_neg = 0;
    for (int l : labels) (l ? n_pos : n_neg)++;
    if (n_pos == 0 || n_neg == 0)
        throw UndefinedAucError("auc: both classes must be present (pos=" + std::to_string(n_pos) +
                                ", neg=" + std::to_string(n_neg) + ")");
    size_t n = scores.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

    // midranks over tied groups; rank sum of positives gives U
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        double midrank = (double(i + 1) + double(j + 1)) / 2.0;
        for (size_t k = i; k <= j; ++k)
            if (labels[order[k]]) rank_sum_pos += midrank;
        i = j + 1;
    }
    double u = rank_sum_pos - double(n_pos) * double(n_pos + 1) / 2.0;
    return u / (double(n_pos) * double(n_neg));
}

void aggregate_cv(MetricsRow& row) {
    check(row.folds.size() >= 2, "aggregate_cv: need at least 2 folds");
    auto agg = [&](auto pick) {
        double m = 0, s = 0;
        for (const auto& f : row.folds) m += pick(f);
        m /= double(row.folds.size());
        for (const auto& f : row.folds) s += (pick(f) - m) * (pick(f) - m);
        s = std::sqrt(s / double(row.folds.size() - 1));
        return std::pair<double, double>(m, s);
    };
    std::tie(row.mean.ge_g2.acc, row.stddev.ge_g2.acc) = agg([](const EvalMetrics& f) { return f.ge_g2.acc; });
    std::tie(row.mean.ge_g2.auc, row.stddev.ge_g2.auc) = agg([](const EvalMetrics& f) { return f.ge_g2.auc; });
    std::tie(row.mean.g3.acc, row.stddev.g3.acc) = agg([](const EvalMetrics& f) { return f.g3.acc; });
    std::tie(row.mean.g3.auc, row.stddev.g3.auc) = agg([](const EvalMetrics& f) { return f.g3.auc; });
}

static json task_to_json(const TaskMetrics& t) { return json{{"acc", t.acc}, {"auc", t.auc}}; }
static TaskMetrics task_from_json(const json& j) {
    return TaskMetrics{j.at("acc").get<double>(), j.at("auc").get<double>()};
}
static json eval_to_json(const EvalMetrics& e) {
    return json{{"geG2", task_to_json(e.ge_g2)}, {"G3", task_to_json(e.g3)}};
}
static EvalMetrics eval_from_json(const json& j) {
    return EvalMetrics{task_from_json(j.at("geG2")), task_from_json(j.at("G3"))};
}

std::string report_to_json(const MetricsReport& r) {
    json j;
    j["rows"] = json::array();
    for (const auto& row : r.rows) {
        json jr;
        jr["label"] = row.label;
        jr["strategy"] = row.strategy;
        jr["use_ori"] = row.use_ori;
        jr["use_hfe"] = row.use_hfe;
        jr["use_cca"] = row.use_cca;
        jr["folds"] = json::array();
        for (const auto& f : row.folds) jr["folds"].push_back(eval_to_json(f));
        jr["mean"] = eval_to_json(row.mean);
        jr["stddev"] = eval_to_json(row.stddev);
        j["rows"].push_back(std::move(jr));
    }
    return j.dump(2);
}

MetricsReport report_from_json(const std::string& text) {
    json j = json::parse(text);
    MetricsReport r;
    for (const auto& jr : j.at("rows")) {
        MetricsRow row;
        row.label = jr.at("label").get<std::string>();
        row.strategy = jr.at("strategy").get<std::string>();
        row.use_ori = jr.at("use_ori").get<bool>();
        row.use_hfe = jr.at("use_hfe").get<bool>();
        row.use_cca = jr.at("use_cca").get<bool>();
        for (const auto& f : jr.at("folds")) row.folds.push_back(eval_from_json(f));
        row.mean = eval_from_json(jr.at("mean"));
        row.stddev = eval_from_json(jr.at("stddev"));
        r.rows.push_back(std::move(row));
    }
    return r;
}

std::string render_table(const MetricsReport& r) {
    std::string out;
    char line[256];
    std::snprintf(line, sizeof line, "%-28s | %-17s | %-17s\n", "Method", ">=G2  ACC / AUC", "G3    ACC / AUC");
    out += line;
    out += std::string(28, '-') + "-+-" + std::string(17, '-') + "-+-" + std::string(17, '-') + "\n";
    for (const auto& row : r.rows) {
        bool multi = row.folds.size() >= 2;
        if (multi)
            std::snprintf(line, sizeof line, "%-28s | %5.1f+-%4.1f %.3f+-%.3f | %5.1f+-%4.1f %.3f+-%.3f\n",
                          row.label.c_str(), row.mean.ge_g2.acc, row.stddev.ge_g2.acc, row.mean.ge_g2.auc,
                          row.stddev.ge_g2.auc, row.mean.g3.acc, row.stddev.g3.acc, row.mean.g3.auc,
                          row.stddev.g3.auc);
        else
            std::snprintf(line, sizeof line, "%-28s | %5.1f       %.3f      | %5.1f       %.3f\n",
                          row.label.c_str(), row.mean.ge_g2.acc, row.mean.ge_g2.auc, row.mean.g3.acc,
                          row.mean.g3.auc);
        out += line;
    }
    return out;
}

} // namespace moon
