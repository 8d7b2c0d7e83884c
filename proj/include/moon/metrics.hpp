#ifndef MOON_METRICS_HPP
#define MOON_METRICS_HPP

#include <stdexcept>
#include <string>
#include <vector>

namespace moon {

struct UndefinedAucError : std::runtime_error {
    explicit UndefinedAucError(const std::string& msg) : std::runtime_error(msg) {}
};

// 100 * matches / total
double accuracy(const std::vector<int>& preds, const std::vector<int>& labels);

// Mann-Whitney AUC: fraction of (positive, negative) pairs ranked correctly,
// ties counted 1/2. Computed via midranks; exact for desk-scale n.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct TaskMetrics {
    double acc = 0.0; // percent
    double auc = 0.0;
};

struct EvalMetrics {
    TaskMetrics ge_g2, g3;
};

struct MetricsRow {
    std::string label;    // Table-style row name
    std::string strategy; // fusion tag or "single:<organ>"
    bool use_ori = true, use_hfe = true, use_cca = true;
    std::vector<EvalMetrics> folds;
    EvalMetrics mean, stddev;
};

struct MetricsReport {
    std::vector<MetricsRow> rows;
};

// Unweighted mean and sample standard deviation across >= 2 folds.
void aggregate_cv(MetricsRow& row);

std::string report_to_json(const MetricsReport& r);
MetricsReport report_from_json(const std::string& text);

// Aligned text table: rows = strategy/ablation, columns = task x metric.
std::string render_table(const MetricsReport& r);

} // namespace moon

#endif
