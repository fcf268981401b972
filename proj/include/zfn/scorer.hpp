#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "zfn/metrics.hpp"
#include "zfn/rng.hpp"

namespace zfn {

struct PreprocState {
    std::vector<std::string> schema;  // input schema the transform expects
    std::vector<std::string> kept;
    std::vector<std::size_t> kept_index;  // position of each kept feature in schema
    std::vector<double> min_vals;
    std::vector<double> max_vals;
    std::vector<std::string> dropped_missing;
    std::vector<std::string> dropped_constant;
    std::vector<std::pair<std::string, std::string>> dropped_correlated;  // dropped, kept partner
};

struct Dataset {
    std::vector<std::vector<double>> x;
    std::vector<int> y;

    std::size_t size() const { return x.size(); }
    std::size_t dim() const { return x.empty() ? 0 : x.front().size(); }
};

// Drops features that are missing anywhere or constant, prunes one of
// every pair correlated beyond |r| > 0.95 (the schema-earlier one
// survives), and min-max scales the rest to [0, 1].
PreprocState preprocess_fit(const MetricTable& table);
Dataset preprocess_transform(const PreprocState& state, const MetricTable& table);
std::vector<double> transform_record(const PreprocState& state, const MetricRecord& record);

// Each synthetic point is x + u * (neighbor - x) with u uniform in
// [0, 1] and the neighbor drawn among the k nearest minority points.
std::vector<std::vector<double>> smote(const std::vector<std::vector<double>>& minority, int k,
                                       int n_new, std::uint64_t seed);

// Oversamples the minority class up to the majority count; returns the
// input unchanged when classes are balanced or the minority is a single
// point.
Dataset balance_with_smote(const Dataset& train, std::uint64_t seed);

class Classifier {
public:
    virtual ~Classifier() = default;
    virtual void fit(const Dataset& train, std::uint64_t seed) = 0;
    virtual double predict_proba(const std::vector<double>& x) const = 0;
    virtual std::string kind() const = 0;
    virtual nlohmann::ordered_json save_state() const = 0;
    virtual void load_state(const nlohmann::json& j) = 0;
    // Per-feature weights for ranking: normalized impurity decrease for
    // tree families, |coefficient| for logistic regression, empty for
    // neighbor and Bayes models.
    virtual std::vector<double> importance(std::size_t dim) const { return std::vector<double>(dim, 0.0); }
};

inline const std::vector<std::string> kClassifierKinds = {"DT", "RF", "ET", "GBC",
                                                          "LR", "KNN", "NB"};

std::unique_ptr<Classifier> make_classifier(const std::string& kind,
                                            const nlohmann::json& hyperparameters);
nlohmann::ordered_json sample_hyperparameters(const std::string& kind, Rng& rng);

std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<int>& y, int folds,
                                                       std::uint64_t seed);

struct SearchResult {
    std::string kind;
    nlohmann::ordered_json hyperparameters;
    double cv_accuracy = 0.0;
    int iteration = -1;
};

struct SearchOutcome {
    SearchResult best;
    std::map<std::string, SearchResult> best_per_kind;
};

// Randomized search: each iteration draws a classifier kind uniformly
// from the enabled set, samples its space, and scores mean stratified
// k-fold accuracy with SMOTE applied inside each training fold only.
// Ties resolve to the earliest iteration.
SearchOutcome search_hyperparameters(const Dataset& data, const std::vector<std::string>& kinds,
                                     int iterations, int folds, std::uint64_t seed,
                                     int threads = 1);

std::vector<double> fit_predict_loocv(const Dataset& data, const std::string& kind,
                                      const nlohmann::json& hyperparameters, std::uint64_t seed,
                                      int threads = 1);

// Lowest probability assigned to any abnormal record; the decision rule
// is probability >= threshold.
double calibrate_zfn(const std::vector<double>& probs, const std::vector<int>& labels);

std::string schema_hash(const std::vector<std::string>& schema);

struct ScoreModel {
    PreprocState preproc;
    std::string classifier_kind;
    nlohmann::ordered_json hyperparameters;
    std::unique_ptr<Classifier> classifier;
    double zfn_threshold = 0.0;
    std::uint64_t seed = 0;
    std::string schema_hash;
};

double composite_score(const ScoreModel& model, const MetricRecord& record);

void save_model(const ScoreModel& model, const std::string& path);
ScoreModel load_model(const std::string& path);

struct FitOptions {
    std::vector<std::string> kinds = kClassifierKinds;
    int iterations = 500;
    int folds = 5;
    bool nested_search = false;
    std::string threshold_source = "loocv";  // loocv | refit
    std::uint64_t seed = 0;
    int threads = 1;
};

struct KindEvaluation {
    SearchResult search;
    std::vector<double> loocv_probs;
    double zfn_threshold = 0.0;
};

struct FitOutcome {
    ScoreModel model;
    std::vector<double> loocv_probs;       // chosen kind, record order
    std::vector<int> labels;               // record order
    std::vector<std::string> image_ids;    // record order
    std::map<std::string, KindEvaluation> per_kind;
};

FitOutcome fit_score_model(const MetricTable& table, const FitOptions& opts);

}  // namespace zfn
