#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "test_util.hpp"
#include "zfn/rng.hpp"
#include "zfn/scorer.hpp"

using namespace zfn;
using testutil::TempDir;

namespace {

MetricTable table_from(const std::vector<std::string>& schema,
                       const std::vector<std::vector<double>>& rows,
                       const std::vector<int>& labels) {
    MetricTable t;
    t.schema = schema;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        MetricRecord rec;
        rec.image_id = "rec" + std::to_string(r);
        rec.label = labels[r];
        for (double v : rows[r]) rec.values.emplace_back(v);
        t.records.push_back(std::move(rec));
    }
    return t;
}

// Two well-separated value clusters with one strong feature and noisy extras.
Dataset cluster_dataset(std::size_t per_class, std::size_t dims, std::uint64_t seed) {
    Dataset data;
    Rng rng(seed);
    for (std::size_t i = 0; i < 2 * per_class; ++i) {
        const int y = i < per_class ? 0 : 1;
        std::vector<double> x(dims);
        x[0] = (y == 0 ? 0.2 : 0.8) + rng.uniform(-0.08, 0.08);
        for (std::size_t d = 1; d < dims; ++d) {
            x[d] = rng.uniform() * 0.25 + (y == 1 ? 0.1 * static_cast<double>(d % 2) : 0.0);
        }
        data.x.push_back(std::move(x));
        data.y.push_back(y);
    }
    return data;
}

MetricTable cluster_table(std::size_t per_class, std::uint64_t seed) {
    const Dataset data = cluster_dataset(per_class, 4, seed);
    std::vector<std::vector<double>> rows = data.x;
    return table_from({"f0", "f1", "f2", "f3"}, rows, data.y);
}

double traverse(const nlohmann::ordered_json& nodes, const std::vector<double>& x) {
    int idx = 0;
    while (true) {
        const auto& n = nodes.at(static_cast<std::size_t>(idx));
        const int feature = n.at(0).get<int>();
        if (feature < 0) return n.at(4).get<double>();
        idx = x[static_cast<std::size_t>(feature)] <= n.at(1).get<double>() ? n.at(2).get<int>()
                                                                            : n.at(3).get<int>();
    }
}

double oracle_sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

}  // namespace

TEST_CASE("preprocessing scales kept features into the unit interval") {
    const MetricTable t = table_from({"a", "b"}, {{2.0, 1.0}, {6.0, 3.0}, {10.0, 2.0}},
                                     {0, 1, 0});
    const PreprocState state = preprocess_fit(t);
    CHECK(state.kept == std::vector<std::string>{"a", "b"});
    CHECK(state.min_vals == std::vector<double>{2.0, 1.0});
    CHECK(state.max_vals == std::vector<double>{10.0, 3.0});

    const std::vector<double> mid = transform_record(state, t.records[1]);
    CHECK(mid[0] == 0.5);
    CHECK(mid[1] == 1.0);

    // Out-of-range values clamp instead of extrapolating.
    MetricRecord wild;
    wild.image_id = "wild";
    wild.values = {std::optional<double>(12.0), std::optional<double>(0.0)};
    const std::vector<double> clamped = transform_record(state, wild);
    CHECK(clamped[0] == 1.0);
    CHECK(clamped[1] == 0.0);

    const Dataset d = preprocess_transform(state, t);
    CHECK(d.size() == 3);
    CHECK(d.dim() == 2);
    CHECK(d.y == std::vector<int>{0, 1, 0});
    for (const auto& row : d.x) {
        for (double v : row) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("preprocessing drops missing constant and duplicated features") {
    MetricTable t = table_from({"gone", "flat", "keep", "twin"},
                               {{0.1, 5.0, 1.0, 2.0},
                                {0.2, 5.0, 2.0, 4.0},
                                {0.3, 5.0, 3.0, 6.0},
                                {0.4, 5.0, 4.0, 8.0}},
                               {0, 0, 1, 1});
    t.records[2].values[0].reset();  // one hole removes the whole feature

    const PreprocState state = preprocess_fit(t);
    CHECK(state.kept == std::vector<std::string>{"keep"});
    CHECK(state.dropped_missing == std::vector<std::string>{"gone"});
    CHECK(state.dropped_constant == std::vector<std::string>{"flat"});
    REQUIRE(state.dropped_correlated.size() == 1);
    CHECK(state.dropped_correlated[0].first == "twin");
    CHECK(state.dropped_correlated[0].second == "keep");

    // Weakly related features survive the pruning threshold.
    const MetricTable loose = table_from(
        {"x", "y"}, {{0.0, 0.3}, {1.0, 0.9}, {2.0, 0.1}, {3.0, 0.7}, {4.0, 0.4}},
        {0, 0, 1, 1, 0});
    CHECK(preprocess_fit(loose).kept.size() == 2);
}

TEST_CASE("preprocessing rejects unusable tables") {
    CHECK_THROWS_AS(preprocess_fit(table_from({"a"}, {{1.0}}, {0})), std::runtime_error);
    CHECK_THROWS_AS(preprocess_fit(table_from({"a"}, {{1.0}, {2.0}}, {0, 0})),
                    std::runtime_error);
    CHECK_THROWS_AS(preprocess_fit(table_from({"a"}, {{1.0}, {1.0}}, {0, 1})),
                    std::runtime_error);

    const MetricTable t = table_from({"a", "b"}, {{1.0, 1.0}, {2.0, 3.0}}, {0, 1});
    const PreprocState state = preprocess_fit(t);
    MetricRecord bad;
    bad.image_id = "bad";
    bad.values = {std::nullopt, std::optional<double>(1.0)};
    CHECK_THROWS_WITH_AS(transform_record(state, bad),
                         doctest::Contains("bad"), std::runtime_error);
}

TEST_CASE("preprocessing transform is stable under reapplication") {
    const MetricTable t = cluster_table(8, 5);
    const PreprocState state = preprocess_fit(t);
    const Dataset once = preprocess_transform(state, t);
    const Dataset twice = preprocess_transform(state, t);
    CHECK(once.x == twice.x);
}

TEST_CASE("synthetic minority points interpolate real neighbors") {
    const std::vector<std::vector<double>> minority = {
        {0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}, {0.5, 0.5}};
    const auto synth = smote(minority, 3, 50, 99);
    REQUIRE(synth.size() == 50);
    for (const auto& p : synth) {
        REQUIRE(p.size() == 2);
        CHECK(p[0] >= 0.0);
        CHECK(p[0] <= 1.0);
        CHECK(p[1] >= 0.0);
        CHECK(p[1] <= 1.0);
    }
    CHECK(smote(minority, 3, 50, 99) == synth);
    CHECK(smote(minority, 3, 50, 100) != synth);
}

TEST_CASE("smote balancing tops up the minority class only") {
    Dataset data;
    for (int i = 0; i < 9; ++i) {
        data.x.push_back({static_cast<double>(i) * 0.1, 0.5});
        data.y.push_back(i < 6 ? 0 : 1);
    }
    const Dataset balanced = balance_with_smote(data, 7);
    CHECK(balanced.size() == 12);
    int ones = 0;
    for (int y : balanced.y) ones += y;
    CHECK(ones == 6);
    // Originals stay in place, synthetic rows append.
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(balanced.x[i] == data.x[i]);
        CHECK(balanced.y[i] == data.y[i]);
    }
    for (std::size_t i = data.size(); i < balanced.size(); ++i) CHECK(balanced.y[i] == 1);

    // Balanced and single-point minorities pass through unchanged.
    Dataset even;
    even.x = {{0.1}, {0.2}, {0.3}, {0.4}};
    even.y = {0, 0, 1, 1};
    CHECK(balance_with_smote(even, 7).size() == 4);

    Dataset lone;
    lone.x = {{0.1}, {0.2}, {0.3}};
    lone.y = {0, 0, 1};
    CHECK(balance_with_smote(lone, 7).size() == 3);
}

TEST_CASE("stratified folds partition each class evenly") {
    std::vector<int> y;
    for (int i = 0; i < 17; ++i) y.push_back(i < 11 ? 0 : 1);
    const auto folds = stratified_folds(y, 3, 123);
    REQUIRE(folds.size() == 3);

    std::set<std::size_t> seen;
    for (const auto& fold : folds) {
        CHECK(std::is_sorted(fold.begin(), fold.end()));
        int zeros = 0, ones = 0;
        for (std::size_t i : fold) {
            CHECK(seen.insert(i).second);  // disjoint
            (y[i] == 0 ? zeros : ones)++;
        }
        CHECK(zeros >= 3);
        CHECK(zeros <= 4);
        CHECK(ones >= 2);
        CHECK(ones <= 2);
    }
    CHECK(seen.size() == 17);

    CHECK(stratified_folds(y, 3, 123) == folds);
    CHECK(stratified_folds(y, 3, 124) != folds);

    CHECK_THROWS_AS(stratified_folds(y, 1, 1), std::runtime_error);
    CHECK_THROWS_AS(stratified_folds({0, 0, 0, 1}, 2, 1), std::runtime_error);
}

TEST_CASE("single tree probabilities follow the stored structure") {
    const Dataset data = cluster_dataset(12, 3, 11);
    nlohmann::json hp;
    hp["max_depth"] = 3;
    auto clf = make_classifier("DT", hp);
    clf->fit(data, 21);

    const auto state = clf->save_state();
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        const std::vector<double> x = testutil::random_vector(3, rng);
        CHECK(clf->predict_proba(x) == traverse(state.at("tree"), x));
    }
}

TEST_CASE("forest probabilities average member tree leaves") {
    const Dataset data = cluster_dataset(12, 3, 13);
    for (const char* kind : {"RF", "ET"}) {
        nlohmann::json hp;
        hp["trees"] = 12;
        hp["max_depth"] = 3;
        auto clf = make_classifier(kind, hp);
        clf->fit(data, 23);

        const auto state = clf->save_state();
        const auto& trees = state.at("trees");
        REQUIRE(trees.size() == 12);
        Rng rng(37);
        for (int i = 0; i < 30; ++i) {
            const std::vector<double> x = testutil::random_vector(3, rng);
            double acc = 0.0;
            for (const auto& tree : trees) acc += traverse(tree, x);
            CHECK(clf->predict_proba(x) == acc / 12.0);
        }
    }
}

TEST_CASE("boosting probabilities replay the additive stages") {
    const Dataset data = cluster_dataset(12, 3, 17);
    nlohmann::json hp;
    hp["trees"] = 15;
    hp["learning_rate"] = 0.125;
    hp["max_depth"] = 2;
    auto clf = make_classifier("GBC", hp);
    clf->fit(data, 29);

    const auto state = clf->save_state();
    const double f0 = state.at("f0").get<double>();
    Rng rng(41);
    for (int i = 0; i < 30; ++i) {
        const std::vector<double> x = testutil::random_vector(3, rng);
        double f = f0;
        for (const auto& tree : state.at("trees")) f += 0.125 * traverse(tree, x);
        CHECK(clf->predict_proba(x) == oracle_sigmoid(f));
    }
}

TEST_CASE("every classifier kind separates the clusters") {
    const Dataset data = cluster_dataset(14, 3, 19);
    Rng hp_rng(43);
    for (const auto& kind : kClassifierKinds) {
        const auto hp = sample_hyperparameters(kind, hp_rng);
        auto clf = make_classifier(kind, hp);
        clf->fit(data, 47);
        CHECK(clf->kind() == kind);

        int correct = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double p = clf->predict_proba(data.x[i]);
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
            correct += (p >= 0.5 ? 1 : 0) == data.y[i] ? 1 : 0;
        }
        // The strong feature alone separates the classes.
        CHECK(correct >= static_cast<int>(data.size()) - 2);
    }
    CHECK_THROWS_AS(make_classifier("SVM", nlohmann::json::object()), std::runtime_error);
}

TEST_CASE("classifier state round trips through json") {
    const Dataset data = cluster_dataset(10, 3, 53);
    Rng hp_rng(59);
    Rng query_rng(61);
    for (const auto& kind : kClassifierKinds) {
        const auto hp = sample_hyperparameters(kind, hp_rng);
        auto clf = make_classifier(kind, hp);
        clf->fit(data, 67);

        auto clone = make_classifier(kind, hp);
        clone->load_state(clf->save_state());
        for (int i = 0; i < 20; ++i) {
            const std::vector<double> x = testutil::random_vector(3, query_rng);
            CHECK(clone->predict_proba(x) == clf->predict_proba(x));
        }
    }
}

TEST_CASE("classifiers refuse single-class training data") {
    Dataset data;
    for (int i = 0; i < 8; ++i) {
        data.x.push_back({0.1 * i});
        data.y.push_back(0);
    }
    for (const auto& kind : kClassifierKinds) {
        Rng hp_rng(71);
        auto clf = make_classifier(kind, sample_hyperparameters(kind, hp_rng));
        CHECK_THROWS_AS(clf->fit(data, 1), std::runtime_error);
    }
}

TEST_CASE("hyperparameter samples stay inside their documented ranges") {
    Rng rng(73);
    for (int i = 0; i < 200; ++i) {
        const auto dt = sample_hyperparameters("DT", rng);
        CHECK(dt.at("max_depth").get<int>() >= 1);
        CHECK(dt.at("max_depth").get<int>() <= 20);

        const auto rf = sample_hyperparameters("RF", rng);
        CHECK(rf.at("trees").get<int>() >= 10);
        CHECK(rf.at("trees").get<int>() <= 500);

        const auto gbc = sample_hyperparameters("GBC", rng);
        CHECK(gbc.at("learning_rate").get<double>() >= 0.01);
        CHECK(gbc.at("learning_rate").get<double>() <= 0.3);
        CHECK(gbc.at("max_depth").get<int>() >= 1);
        CHECK(gbc.at("max_depth").get<int>() <= 3);

        const auto lr = sample_hyperparameters("LR", rng);
        CHECK(lr.at("l2").get<double>() >= 1e-4 * (1.0 - 1e-9));
        CHECK(lr.at("l2").get<double>() <= 10.0 * (1.0 + 1e-9));

        const auto knn = sample_hyperparameters("KNN", rng);
        CHECK(knn.at("k").get<int>() >= 1);
        CHECK(knn.at("k").get<int>() <= 15);

        CHECK(sample_hyperparameters("NB", rng).empty());
    }
    Rng bad(1);
    CHECK_THROWS_AS(sample_hyperparameters("XGB", bad), std::runtime_error);
}

TEST_CASE("tree and linear families expose feature rankings") {
    const Dataset data = cluster_dataset(14, 4, 79);

    nlohmann::json dt_hp;
    dt_hp["max_depth"] = 4;
    auto dt = make_classifier("DT", dt_hp);
    dt->fit(data, 83);
    const auto dt_imp = dt->importance(4);
    REQUIRE(dt_imp.size() == 4);
    double total = 0.0;
    for (double w : dt_imp) {
        CHECK(w >= 0.0);
        total += w;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
    // The separating feature dominates the ranking.
    CHECK(dt_imp[0] == *std::max_element(dt_imp.begin(), dt_imp.end()));

    nlohmann::json lr_hp;
    lr_hp["l2"] = 0.01;
    auto lr = make_classifier("LR", lr_hp);
    lr->fit(data, 89);
    const auto lr_imp = lr->importance(4);
    double lr_total = 0.0;
    for (double w : lr_imp) lr_total += w;
    CHECK(lr_total == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(lr_imp[0] == *std::max_element(lr_imp.begin(), lr_imp.end()));

    auto knn = make_classifier("KNN", nlohmann::json{{"k", 3}});
    knn->fit(data, 97);
    for (double w : knn->importance(4)) CHECK(w == 0.0);
}

TEST_CASE("zero false negative calibration picks the weakest abnormal score") {
    CHECK(calibrate_zfn({0.9, 0.3, 0.7}, {1, 1, 1}) == 0.3);
    CHECK(calibrate_zfn({0.9, 0.1, 0.7, 0.5}, {1, 0, 1, 1}) == 0.5);
    CHECK_THROWS_AS(calibrate_zfn({0.9, 0.1}, {0, 0}), std::runtime_error);
    CHECK_THROWS_AS(calibrate_zfn({0.9}, {1, 1}), std::runtime_error);

    // Every abnormal clears the calibrated cut by construction.
    Rng rng(101);
    std::vector<double> probs;
    std::vector<int> labels;
    for (int i = 0; i < 40; ++i) {
        probs.push_back(rng.uniform());
        labels.push_back(static_cast<int>(rng.index(2)));
    }
    labels[0] = 1;
    const double thr = calibrate_zfn(probs, labels);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] == 1) CHECK(probs[i] >= thr);
    }
}

TEST_CASE("random search is deterministic and kind-restricted") {
    const Dataset data = cluster_dataset(9, 3, 103);
    const std::vector<std::string> kinds = {"DT", "KNN", "NB"};
    const SearchOutcome a = search_hyperparameters(data, kinds, 20, 3, 107);
    const SearchOutcome b = search_hyperparameters(data, kinds, 20, 3, 107);

    CHECK(a.best.kind == b.best.kind);
    CHECK(a.best.iteration == b.best.iteration);
    CHECK(a.best.cv_accuracy == b.best.cv_accuracy);
    CHECK(a.best.hyperparameters == b.best.hyperparameters);
    CHECK(a.best.cv_accuracy >= 0.0);
    CHECK(a.best.cv_accuracy <= 1.0);
    CHECK(a.best.iteration >= 0);
    CHECK(a.best.iteration < 20);

    for (const auto& [kind, result] : a.best_per_kind) {
        CHECK(std::find(kinds.begin(), kinds.end(), kind) != kinds.end());
        CHECK(result.kind == kind);
        CHECK(result.cv_accuracy <= a.best.cv_accuracy + 1e-12);
    }
    CHECK(a.best_per_kind.count(a.best.kind) == 1);
    CHECK(a.best_per_kind.at(a.best.kind).cv_accuracy == a.best.cv_accuracy);

    const SearchOutcome threaded = search_hyperparameters(data, kinds, 20, 3, 107, 4);
    CHECK(threaded.best.kind == a.best.kind);
    CHECK(threaded.best.iteration == a.best.iteration);
    CHECK(threaded.best.cv_accuracy == a.best.cv_accuracy);

    CHECK_THROWS_AS(search_hyperparameters(data, {}, 20, 3, 107), std::runtime_error);
}

TEST_CASE("leave one out probabilities are reproducible") {
    const Dataset data = cluster_dataset(8, 3, 109);
    nlohmann::json hp;
    hp["max_depth"] = 3;
    const auto probs = fit_predict_loocv(data, "DT", hp, 113);
    REQUIRE(probs.size() == data.size());
    for (double p : probs) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
    CHECK(fit_predict_loocv(data, "DT", hp, 113) == probs);
    CHECK(fit_predict_loocv(data, "DT", hp, 113, 4) == probs);

    // Separable clusters leave every abnormal above the calibrated cut.
    const double thr = calibrate_zfn(probs, data.y);
    int fn = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (data.y[i] == 1 && probs[i] < thr) ++fn;
    }
    CHECK(fn == 0);
}

TEST_CASE("schema hash pins the feature layout") {
    const std::vector<std::string> schema = {"f0", "f1", "f2"};
    const std::string h = schema_hash(schema);
    CHECK(h.size() == 16);
    CHECK(h == schema_hash(schema));
    CHECK(h != schema_hash({"f0", "f1"}));
    CHECK(h != schema_hash({"f0", "f2", "f1"}));
}

TEST_CASE("fitting produces a calibrated reusable model") {
    TempDir dir("zfn-model");
    const MetricTable table = cluster_table(12, 127);

    FitOptions opts;
    opts.kinds = {"DT", "KNN"};
    opts.iterations = 16;
    opts.folds = 3;
    opts.seed = 131;
    const FitOutcome outcome = fit_score_model(table, opts);

    CHECK((outcome.model.classifier_kind == "DT" || outcome.model.classifier_kind == "KNN"));
    CHECK(outcome.model.schema_hash == schema_hash(table.schema));
    CHECK(outcome.model.seed == 131);
    REQUIRE(outcome.loocv_probs.size() == table.records.size());
    CHECK(outcome.labels.size() == table.records.size());
    CHECK(outcome.image_ids.front() == "rec0");
    CHECK(outcome.per_kind.count("DT") == 1);
    CHECK(outcome.per_kind.count("KNN") == 1);

    // Zero false negatives on the held-out probabilities.
    for (std::size_t i = 0; i < outcome.loocv_probs.size(); ++i) {
        if (outcome.labels[i] == 1) CHECK(outcome.loocv_probs[i] >= outcome.model.zfn_threshold);
    }
    // And on re-scoring the training table through the final model.
    for (const auto& rec : table.records) {
        if (rec.label == 1) {
            CHECK(composite_score(outcome.model, rec) >= outcome.model.zfn_threshold);
        }
    }

    const std::string path = dir.str("model.json");
    save_model(outcome.model, path);
    const ScoreModel loaded = load_model(path);
    CHECK(loaded.classifier_kind == outcome.model.classifier_kind);
    CHECK(loaded.zfn_threshold == outcome.model.zfn_threshold);
    CHECK(loaded.schema_hash == outcome.model.schema_hash);
    CHECK(loaded.seed == outcome.model.seed);
    for (const auto& rec : table.records) {
        CHECK(composite_score(loaded, rec) == composite_score(outcome.model, rec));
    }

    CHECK_THROWS_AS(load_model(dir.str("missing.json")), std::runtime_error);
}

TEST_CASE("fit is reproducible for a fixed seed") {
    const MetricTable table = cluster_table(10, 137);
    FitOptions opts;
    opts.kinds = {"DT", "NB"};
    opts.iterations = 10;
    opts.folds = 3;
    opts.seed = 139;

    const FitOutcome a = fit_score_model(table, opts);
    const FitOutcome b = fit_score_model(table, opts);
    CHECK(a.model.classifier_kind == b.model.classifier_kind);
    CHECK(a.model.zfn_threshold == b.model.zfn_threshold);
    CHECK(a.loocv_probs == b.loocv_probs);
    CHECK(a.model.hyperparameters == b.model.hyperparameters);

    opts.threads = 4;
    const FitOutcome c = fit_score_model(table, opts);
    CHECK(c.model.classifier_kind == a.model.classifier_kind);
    CHECK(c.model.zfn_threshold == a.model.zfn_threshold);
    CHECK(c.loocv_probs == a.loocv_probs);
}

TEST_CASE("refit threshold source calibrates on training scores") {
    const MetricTable table = cluster_table(10, 149);
    FitOptions opts;
    opts.kinds = {"DT"};
    opts.iterations = 8;
    opts.folds = 3;
    opts.seed = 151;
    opts.threshold_source = "refit";

    const FitOutcome outcome = fit_score_model(table, opts);
    std::vector<double> refit_probs;
    for (const auto& rec : table.records) {
        refit_probs.push_back(composite_score(outcome.model, rec));
    }
    CHECK(outcome.model.zfn_threshold == calibrate_zfn(refit_probs, outcome.labels));
}

TEST_CASE("nested search refits the whole pipeline per held-out record") {
    const MetricTable table = cluster_table(6, 157);
    FitOptions opts;
    opts.kinds = {"DT"};
    opts.iterations = 4;
    opts.folds = 3;
    opts.seed = 163;
    opts.nested_search = true;

    const FitOutcome outcome = fit_score_model(table, opts);
    REQUIRE(outcome.loocv_probs.size() == table.records.size());
    for (double p : outcome.loocv_probs) {
        CHECK(p >= 0.0);
        CHECK(p <= 1.0);
    }
    for (std::size_t i = 0; i < outcome.loocv_probs.size(); ++i) {
        if (outcome.labels[i] == 1) CHECK(outcome.loocv_probs[i] >= outcome.model.zfn_threshold);
    }
}

TEST_CASE("composite scoring rejects mismatched schemas") {
    const MetricTable table = cluster_table(8, 167);
    FitOptions opts;
    opts.kinds = {"NB"};
    opts.iterations = 2;
    opts.folds = 3;
    opts.seed = 173;
    const FitOutcome outcome = fit_score_model(table, opts);

    MetricRecord wrong;
    wrong.image_id = "wrong";
    wrong.values = {std::optional<double>(0.5)};
    CHECK_THROWS_AS(composite_score(outcome.model, wrong), std::runtime_error);
}
