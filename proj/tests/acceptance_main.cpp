#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unistd.h>
#include <vector>

#include "zfn/distances.hpp"
#include "zfn/features.hpp"
#include "zfn/localize.hpp"
#include "zfn/maskweight.hpp"
#include "zfn/pipeline.hpp"
#include "zfn/recon.hpp"
#include "zfn/report.hpp"
#include "zfn/rng.hpp"
#include "zfn/scorer.hpp"
#include "zfn/synth.hpp"
#include "zfn/tensor.hpp"

using namespace zfn;
namespace fs = std::filesystem;

namespace {

fs::path g_scratch;

void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ImageTensor random_image(int h, int w, Rng& rng) {
    ImageTensor t = make_tensor(h, w, 1);
    for (auto& v : t.data) v = static_cast<float>(rng.uniform());
    return t;
}

ReconPair make_pair(const ImageTensor& orig, const ImageTensor& recon, int label,
                    const std::string& id) {
    ReconPair pair;
    pair.original = orig;
    pair.reconstruction = recon;
    pair.label = label;
    pair.image_id = id;
    return pair;
}

struct SynthSplit {
    ImageTensor golden;
    WeightMask mask;
    std::vector<const SynthImage*> tests;
};

// Shared staging: golden sample from the train normals, weighting mask
// from the held-out normals.
SynthSplit stage_dataset(const SynthDataset& dataset) {
    SynthSplit split;
    std::vector<ImageTensor> train;
    std::vector<ReconPair> holdout;
    for (const auto& img : dataset.images) {
        if (img.role == "train") train.push_back(img.image);
    }
    require(!train.empty(), "dataset has no train images");
    split.golden = baseline_reconstruct(train, train.front());
    for (const auto& img : dataset.images) {
        if (img.role == "mask") {
            holdout.push_back(make_pair(img.image, split.golden, img.label, img.image_id));
        } else if (img.role == "test") {
            split.tests.push_back(&img);
        }
    }
    split.mask = build_mask(holdout);
    return split;
}

bool in_rect(int r, int c, const Rect& rect) {
    return r >= rect.row0 && r < rect.row0 + rect.rows && c >= rect.col0 &&
           c < rect.col0 + rect.cols;
}

// 1. Calibrated decision rule: every abnormal calibration record is
// flagged on every fitted model over seeded random tables.
void criterion_zfn_construction() {
    for (int t = 0; t < 50; ++t) {
        Rng rng(derive_seed(9001, static_cast<std::uint64_t>(t)));
        MetricTable table;
        table.schema = {"sig", "n1", "n2", "n3", "n4"};
        for (int i = 0; i < 16; ++i) {
            MetricRecord rec;
            rec.image_id = "r" + std::to_string(i);
            rec.label = i < 8 ? 0 : 1;
            rec.values.emplace_back((rec.label ? 0.8 : 0.2) + rng.uniform(-0.08, 0.08));
            for (int d = 0; d < 4; ++d) rec.values.emplace_back(rng.uniform());
            table.records.push_back(std::move(rec));
        }

        FitOptions opts;
        opts.kinds = {kClassifierKinds[static_cast<std::size_t>(t) % kClassifierKinds.size()]};
        opts.iterations = 3;
        opts.folds = 2;
        opts.seed = derive_seed(9002, static_cast<std::uint64_t>(t));
        const FitOutcome outcome = fit_score_model(table, opts);

        const EvalReport report = build_report(outcome);
        for (const auto& row : report.rows) {
            require(row.zfn_regime.fn == 0, "table " + std::to_string(t) + " row " + row.kind +
                                                ": false negatives under the calibrated cut");
            require(row.zfn_regime.fnr_pct == 0.0, "nonzero fnr on table " + std::to_string(t));
            require(row.zfn_regime.recall_pct == 100.0,
                    "recall below 100 on table " + std::to_string(t));
        }
        for (const auto& rec : table.records) {
            if (rec.label == 1) {
                require(composite_score(outcome.model, rec) >= outcome.model.zfn_threshold,
                        "refit model misses an abnormal on table " + std::to_string(t));
            }
        }
    }
}

// 2. Wide-margin synthetic defects: every ground-truth box is overlapped
// by at least one kept candidate patch.
void criterion_defect_coverage() {
    SynthSpec spec;
    spec.train_normals = 12;
    spec.mask_normals = 12;
    spec.test_normals = 0;
    spec.test_abnormals = 40;
    spec.seed = 424242;
    const SynthDataset dataset = generate(spec, 8);
    const SynthSplit split = stage_dataset(dataset);

    const PatchConfig cfg;
    const BaselineEmbedder embedder;
    int boxes_checked = 0;
    for (const SynthImage* img : split.tests) {
        if (img->label != 1) continue;
        const DiffMap masked = apply_mask(abs_diff(img->image, split.golden), split.mask);
        const auto seeds = top_p_pixels(masked, cfg.p);
        const auto kept = rank_candidates(make_pair(img->image, split.golden, 1, img->image_id),
                                          seeds, cfg, embedder, 8);
        for (const auto& gt : img->boxes) {
            const bool covered =
                std::any_of(kept.begin(), kept.end(), [&](const PatchCandidate& c) {
                    return c.bounds.overlaps(gt.box.row0, gt.box.col0, gt.box.rows, gt.box.cols);
                });
            require(covered, "uncovered " + gt.kind + " defect on " + img->image_id);
            ++boxes_checked;
        }
    }
    require(boxes_checked >= 40, "expected at least one box per abnormal image");
}

// 3. Wide margins force perfect separation through the full pipeline;
// narrowing the margin strictly raises the calibrated false-positive rate.
void criterion_margin_separation() {
    PipelineConfig wide;
    wide.workdir = (g_scratch / "wide").string();
    wide.seed = 8282;
    wide.threads = 8;
    wide.synth.test_normals = 60;
    wide.synth.test_abnormals = 30;
    wide.synth.seed = 8181;
    wide.iterations = 40;
    wide.emit_svg = false;
    const PipelineResult wide_result = run_pipeline(wide);
    const EvalRow wide_sel = wide_result.report.rows.back();
    require(wide_sel.std_regime.accuracy_pct == 100.0,
            "wide margin: standard accuracy " + std::to_string(wide_sel.std_regime.accuracy_pct));
    require(wide_sel.zfn_regime.accuracy_pct == 100.0,
            "wide margin: calibrated accuracy " +
                std::to_string(wide_sel.zfn_regime.accuracy_pct));

    PipelineConfig narrow = wide;
    narrow.workdir = (g_scratch / "narrow").string();
    narrow.seed = 8484;
    narrow.synth.seed = 8383;
    narrow.synth.jitter_sigma = 0.75;
    narrow.synth.defect_magnitude = 1.125;  // 1.5x the jitter scale
    const PipelineResult narrow_result = run_pipeline(narrow);
    const EvalRow narrow_sel = narrow_result.report.rows.back();
    require(narrow_sel.zfn_regime.fpr_pct > wide_sel.zfn_regime.fpr_pct,
            "narrow margin fpr " + std::to_string(narrow_sel.zfn_regime.fpr_pct) +
                " does not exceed wide margin fpr " +
                std::to_string(wide_sel.zfn_regime.fpr_pct));
}

// 4. One abnormal probability forced to zero degenerates the calibrated
// regime: everything is flagged, accuracy equals the class balance.
void criterion_degenerate_threshold() {
    Rng rng(4004);
    std::vector<double> probs;
    std::vector<int> labels;
    for (int i = 0; i < 16; ++i) {
        probs.push_back(rng.uniform());
        labels.push_back(i < 4 ? 1 : 0);
    }
    probs[0] = 0.0;

    const double threshold = calibrate_zfn(probs, labels);
    require(threshold == 0.0, "threshold did not collapse to zero");
    const RegimeMetrics m = confusion_metrics(probs, labels, threshold);
    require(m.fpr_pct == 100.0, "fpr " + std::to_string(m.fpr_pct) + " != 100");
    require(m.accuracy_pct == 25.0, "accuracy " + std::to_string(m.accuracy_pct) +
                                        " != abnormal fraction 25");
    require(m.recall_pct == 100.0, "recall must stay perfect");
}

// 5. Gaussian-distance closed forms and the symmetric matrix root.
void criterion_frechet_oracle() {
    const GaussianStats a{{0.0}, {{1.0}}};
    const GaussianStats b{{3.0}, {{1.0}}};
    require(std::abs(frechet_distance(a, b) - 9.0) <= 1e-9, "mean-shift closed form");

    const GaussianStats c{{0.5}, {{1.0}}};
    const GaussianStats d{{0.5}, {{4.0}}};
    require(std::abs(frechet_distance(c, d) - 1.0) <= 1e-9, "variance closed form");

    Rng rng(5005);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t dim = 2 + rng.index(7);
        std::vector<std::vector<double>> B(dim, std::vector<double>(dim));
        for (auto& row : B) {
            for (auto& v : row) v = rng.gauss();
        }
        std::vector<std::vector<double>> M(dim, std::vector<double>(dim, 0.0));
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
                for (std::size_t k = 0; k < dim; ++k) M[i][j] += B[i][k] * B[j][k];
            }
            M[i][i] += 0.1;
        }
        const auto R = matrix_sqrt(M);
        double frob = 0.0;
        for (std::size_t i = 0; i < dim; ++i) {
            for (std::size_t j = 0; j < dim; ++j) {
                double rr = 0.0;
                for (std::size_t k = 0; k < dim; ++k) rr += R[i][k] * R[k][j];
                frob += (rr - M[i][j]) * (rr - M[i][j]);
            }
        }
        require(std::sqrt(frob) < 1e-8,
                "matrix root residual " + std::to_string(std::sqrt(frob)) + " on trial " +
                    std::to_string(trial));
    }
}

// 6. Transport distance against exhaustive matching; identity and
// symmetry for every distance kind, exactly.
void criterion_distance_oracles() {
    Rng rng(6006);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.index(6);
        std::vector<double> u(n), v(n);
        for (auto& x : u) x = static_cast<double>(rng.index(9));
        for (auto& x : v) x = static_cast<double>(rng.index(9));

        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), 0);
        std::sort(perm.begin(), perm.end());
        double best = std::numeric_limits<double>::infinity();
        do {
            double cost = 0.0;
            for (std::size_t i = 0; i < n; ++i) cost += std::abs(u[i] - v[perm[i]]);
            best = std::min(best, cost);
        } while (std::next_permutation(perm.begin(), perm.end()));

        const double got = vector_distance(DistanceKind::wasserstein, u, v);
        require(got == best / static_cast<double>(n),
                "transport mismatch on trial " + std::to_string(trial));
    }

    Rng img_rng(6007);
    for (int trial = 0; trial < 1000; ++trial) {
        const int h = 4 + static_cast<int>(img_rng.index(9));
        const int w = 4 + static_cast<int>(img_rng.index(9));
        const ImageTensor a = random_image(h, w, img_rng);
        const ImageTensor b = random_image(h, w, img_rng);
        for (DistanceKind kind : kAllDistanceKinds) {
            const double ab = patch_distance(kind, a, b);
            const double ba = patch_distance(kind, b, a);
            require(ab == ba, std::string("asymmetric ") + distance_kind_name(kind) +
                                  " on trial " + std::to_string(trial));
            const double self = patch_distance(kind, a, a);
            const double expected = kind == DistanceKind::ssim ? 1.0 : 0.0;
            require(self == expected, std::string("identity broken for ") +
                                          distance_kind_name(kind) + " on trial " +
                                          std::to_string(trial));
        }
    }
}

// 7. Aggregates equal the full-sort interpolation oracle, bitwise.
void criterion_aggregate_oracle() {
    Rng rng(7007);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 1 + rng.index(64);
        std::vector<double> values(n);
        for (auto& v : values) v = rng.uniform(-3.0, 7.0);

        std::vector<double> sorted = values;
        std::sort(sorted.begin(), sorted.end());
        double sum = 0.0;
        for (double v : sorted) sum += v;
        const auto quantile = [&](double p) {
            const double pos = static_cast<double>(n - 1) * p;
            const std::size_t lo = static_cast<std::size_t>(pos);
            const double frac = pos - static_cast<double>(lo);
            if (lo + 1 >= n) return sorted[n - 1];
            return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
        };

        const Aggregates got = aggregate(values);
        require(got.sum == sum, "sum mismatch on trial " + std::to_string(trial));
        require(got.min == sorted.front(), "min mismatch");
        require(got.max == sorted.back(), "max mismatch");
        require(got.mean == sum / static_cast<double>(n), "mean mismatch");
        require(got.q1 == quantile(0.25), "q1 mismatch");
        require(got.median == quantile(0.5), "median mismatch");
        require(got.q3 == quantile(0.75), "q3 mismatch");
    }
}

// 8. Reconstruction-loss calculators against hand-computed values.
void criterion_loss_closed_forms() {
    LossInputs li;
    li.encoded = {0.0};
    li.quantized = {1.0};
    ReconPair same = make_pair(make_tensor(1, 1, 1, 0.5f), make_tensor(1, 1, 1, 0.5f), 0, "same");
    require(std::abs(vq_loss(li, same) - 2.0) <= 1e-12, "unit quantization gap");

    li.encoded = {0.0, 0.0};
    li.quantized = {1.0, 1.0};
    ImageTensor orig = make_tensor(1, 2, 1, 0.0f);
    orig.at(0, 0) = 1.0f;
    const ReconPair off = make_pair(orig, make_tensor(1, 2, 1, 0.0f), 0, "off");
    require(std::abs(vq_loss(li, off) - 4.5) <= 1e-12, "two-code gap plus residual");

    require(std::abs(gan_loss(0.5, 0.5) - 2.0 * std::log(0.5)) <= 1e-12, "balanced scores");
    const double e_inv = std::exp(-1.0);
    require(std::abs(gan_loss(e_inv, 1.0 - e_inv) - (-2.0)) <= 1e-12, "unit log scores");

    require(std::abs(adaptive_lambda(2.0, 1.0) - 2.0 / (1.0 + 1e-6)) <= 1e-12,
            "balanced gradient ratio");
    require(adaptive_lambda(1.0, 0.0) == 1e6, "vanishing denominator guard");
    require(adaptive_lambda(0.0, 5.0) == 0.0, "zero numerator");
}

// 9. Preprocessing contract on seeded tables: constants always dropped,
// duplicates reduced to one survivor, scaled values inside [0, 1].
void criterion_preprocessing_contract() {
    for (int t = 0; t < 100; ++t) {
        Rng rng(derive_seed(9900, static_cast<std::uint64_t>(t)));
        MetricTable table;
        table.schema = {"base0", "base1", "base2", "flat", "copy"};
        for (int i = 0; i < 12; ++i) {
            MetricRecord rec;
            rec.image_id = "r" + std::to_string(i);
            rec.label = i < 6 ? 0 : 1;
            const double b0 = rng.uniform();
            rec.values.emplace_back(b0);
            rec.values.emplace_back(rng.uniform());
            rec.values.emplace_back(rng.uniform());
            rec.values.emplace_back(3.75);
            rec.values.emplace_back(b0);
            table.records.push_back(std::move(rec));
        }

        const PreprocState state = preprocess_fit(table);
        require(std::find(state.dropped_constant.begin(), state.dropped_constant.end(),
                          "flat") != state.dropped_constant.end(),
                "constant feature survived on table " + std::to_string(t));
        require(std::find(state.kept.begin(), state.kept.end(), "base0") != state.kept.end(),
                "first duplicate must survive on table " + std::to_string(t));
        require(std::find(state.kept.begin(), state.kept.end(), "copy") == state.kept.end(),
                "second duplicate must drop on table " + std::to_string(t));
        const bool recorded = std::any_of(
            state.dropped_correlated.begin(), state.dropped_correlated.end(),
            [](const auto& p) { return p.first == "copy" && p.second == "base0"; });
        require(recorded, "duplicate pair not recorded on table " + std::to_string(t));

        const Dataset data = preprocess_transform(state, table);
        for (const auto& row : data.x) {
            for (double v : row) {
                require(v >= 0.0 && v <= 1.0, "scaled value escaped [0,1]");
            }
        }
    }
}

// 10. Byte-identical artifacts across reruns and thread counts on the
// default configuration.
void criterion_pipeline_determinism() {
    auto run_with = [&](const char* name, int threads) {
        PipelineConfig cfg;
        cfg.workdir = (g_scratch / name).string();
        cfg.threads = threads;
        return run_pipeline(cfg);
    };
    const PipelineResult a = run_with("det-a", 1);
    const PipelineResult b = run_with("det-b", 1);
    const PipelineResult c = run_with("det-c", 8);

    require(slurp(a.metrics_csv) == slurp(b.metrics_csv), "metrics differ across reruns");
    require(slurp(a.model_json) == slurp(b.model_json), "model differs across reruns");
    require(slurp(a.report_json) == slurp(b.report_json), "report differs across reruns");
    require(slurp(a.metrics_csv) == slurp(c.metrics_csv), "metrics differ across thread counts");
    require(slurp(a.model_json) == slurp(c.model_json), "model differs across thread counts");
    require(slurp(a.report_json) == slurp(c.report_json), "report differs across thread counts");
}

// 11. The mask damps the high-variation zone and pulls localization
// seeds out of it.
void criterion_mask_behavior() {
    SynthSpec spec;
    spec.seed = 1111;
    const SynthDataset dataset = generate(spec, 8);
    const SynthSplit split = stage_dataset(dataset);
    const Rect& zone = spec.high_variation_zone;

    double sum_in = 0.0, sum_out = 0.0;
    long count_in = 0, count_out = 0;
    for (int r = 0; r < split.mask.height; ++r) {
        for (int c = 0; c < split.mask.width; ++c) {
            if (in_rect(r, c, zone)) {
                sum_in += split.mask.at(r, c);
                ++count_in;
            } else {
                sum_out += split.mask.at(r, c);
                ++count_out;
            }
        }
    }
    const double mean_in = sum_in / static_cast<double>(count_in);
    const double mean_out = sum_out / static_cast<double>(count_out);
    require(mean_in < 0.5 * mean_out, "zone weight " + std::to_string(mean_in) +
                                          " not damped below half of " +
                                          std::to_string(mean_out));

    const PatchConfig cfg;
    long raw_in_zone = 0, masked_in_zone = 0;
    for (const SynthImage* img : split.tests) {
        const DiffMap diff = abs_diff(img->image, split.golden);
        for (const auto& [r, c] : top_p_pixels(diff, cfg.p)) {
            if (in_rect(r, c, zone)) ++raw_in_zone;
        }
        const DiffMap masked = apply_mask(diff, split.mask);
        for (const auto& [r, c] : top_p_pixels(masked, cfg.p)) {
            if (in_rect(r, c, zone)) ++masked_in_zone;
        }
    }
    require(masked_in_zone < raw_in_zone,
            "seeds in zone: masked " + std::to_string(masked_in_zone) + " vs raw " +
                std::to_string(raw_in_zone));
}

struct Criterion {
    const char* name;
    double limit_seconds;
    std::function<void()> fn;
};

}  // namespace

int main() {
    g_scratch = fs::temp_directory_path() / ("zfn-acceptance-" + std::to_string(getpid()));
    fs::create_directories(g_scratch);

    const std::vector<Criterion> criteria = {
        {"zero-false-negative calibration", 60.0, criterion_zfn_construction},
        {"defect coverage by kept patches", 120.0, criterion_defect_coverage},
        {"margin separation experiment", 300.0, criterion_margin_separation},
        {"zero-threshold degenerate regime", 60.0, criterion_degenerate_threshold},
        {"frechet closed forms and matrix root", 60.0, criterion_frechet_oracle},
        {"distance identities and transport oracle", 120.0, criterion_distance_oracles},
        {"aggregate quartile oracle", 60.0, criterion_aggregate_oracle},
        {"reconstruction loss closed forms", 60.0, criterion_loss_closed_forms},
        {"preprocessing drop contract", 60.0, criterion_preprocessing_contract},
        {"pipeline determinism", 300.0, criterion_pipeline_determinism},
        {"mask damping of high-variation zones", 120.0, criterion_mask_behavior},
    };

    bool all_passed = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        std::string failure;
        try {
            criteria[i].fn();
        } catch (const std::exception& e) {
            failure = e.what();
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (failure.empty() && elapsed > criteria[i].limit_seconds) {
            failure = "runtime " + std::to_string(elapsed) + "s exceeds " +
                      std::to_string(criteria[i].limit_seconds) + "s";
        }
        if (failure.empty()) {
            std::printf("[%2zu] PASS %-42s (%.1fs)\n", i + 1, criteria[i].name, elapsed);
        } else {
            all_passed = false;
            std::printf("[%2zu] FAIL %-42s (%.1fs): %s\n", i + 1, criteria[i].name, elapsed,
                        failure.c_str());
        }
        std::fflush(stdout);
    }

    std::error_code ec;
    fs::remove_all(g_scratch, ec);
    return all_passed ? 0 : 1;
}
