#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "zfn/scorer.hpp"

namespace zfn {

struct RegimeMetrics {
    long tp = 0, fp = 0, tn = 0, fn = 0;
    double accuracy_pct = 0.0;
    double precision_pct = 0.0;
    double recall_pct = 0.0;
    double fpr_pct = 0.0;
    double fnr_pct = 0.0;
};

struct EvalRow {
    std::string kind;
    bool selected = false;
    double zfn_threshold = 0.0;
    RegimeMetrics std_regime;  // fixed 0.5 cut
    RegimeMetrics zfn_regime;  // calibrated cut, probability >= threshold
};

constexpr int kHistogramBins = 20;

struct ScoreHistogram {
    std::array<int, kHistogramBins> normal{};
    std::array<int, kHistogramBins> abnormal{};
};

struct EvalReport {
    long record_count = 0;
    std::string selected_kind;
    double zfn_threshold = 0.0;
    std::vector<EvalRow> rows;
    ScoreHistogram histogram;  // selected model, held-out probabilities
    std::vector<std::pair<std::string, double>> importances;  // descending weight
    std::string importance_notice;
};

RegimeMetrics confusion_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                                double threshold);

EvalRow evaluate(const std::vector<double>& probs, const std::vector<int>& labels,
                 double zfn_threshold);

ScoreHistogram score_histogram(const std::vector<double>& probs, const std::vector<int>& labels);

// Ranked (feature, weight) pairs, weights normalized to sum 1. Empty
// for families without a feature ranking; `notice` says so when given.
std::vector<std::pair<std::string, double>> feature_importance(const ScoreModel& model,
                                                               std::string* notice = nullptr);

EvalReport build_report(const FitOutcome& outcome);

// Scores a metrics table with an already fitted model; one report row.
EvalReport build_apply_report(const ScoreModel& model, const MetricTable& table);

void write_report_json(const EvalReport& report, const std::string& path);
void write_report_md(const EvalReport& report, const std::string& path);
void write_histogram_svg(const EvalReport& report, const std::string& path);

}  // namespace zfn
