#include "zfn/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "zfn/util.hpp"

namespace zfn {

namespace {

double pct(long num, long den) {
    return den == 0 ? 0.0 : 100.0 * static_cast<double>(num) / static_cast<double>(den);
}

std::string fmt_pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

nlohmann::ordered_json regime_to_json(const RegimeMetrics& m) {
    nlohmann::ordered_json j;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["tn"] = m.tn;
    j["fn"] = m.fn;
    j["accuracy_pct"] = m.accuracy_pct;
    j["precision_pct"] = m.precision_pct;
    j["recall_pct"] = m.recall_pct;
    j["fpr_pct"] = m.fpr_pct;
    j["fnr_pct"] = m.fnr_pct;
    return j;
}

}  // namespace

RegimeMetrics confusion_metrics(const std::vector<double>& probs, const std::vector<int>& labels,
                                double threshold) {
    if (probs.empty()) throw std::runtime_error("confusion_metrics: empty input");
    if (probs.size() != labels.size()) {
        throw std::runtime_error("confusion_metrics: probs/labels length mismatch");
    }
    RegimeMetrics m;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool pred = probs[i] >= threshold;
        if (labels[i] == 1) {
            (pred ? m.tp : m.fn)++;
        } else {
            (pred ? m.fp : m.tn)++;
        }
    }
    m.accuracy_pct = pct(m.tp + m.tn, m.tp + m.tn + m.fp + m.fn);
    m.precision_pct = pct(m.tp, m.tp + m.fp);
    m.recall_pct = pct(m.tp, m.tp + m.fn);
    m.fpr_pct = pct(m.fp, m.fp + m.tn);
    m.fnr_pct = pct(m.fn, m.fn + m.tp);
    return m;
}

EvalRow evaluate(const std::vector<double>& probs, const std::vector<int>& labels,
                 double zfn_threshold) {
    EvalRow row;
    row.zfn_threshold = zfn_threshold;
    row.std_regime = confusion_metrics(probs, labels, 0.5);
    row.zfn_regime = confusion_metrics(probs, labels, zfn_threshold);
    return row;
}

ScoreHistogram score_histogram(const std::vector<double>& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size()) {
        throw std::runtime_error("score_histogram: probs/labels length mismatch");
    }
    ScoreHistogram h;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::clamp(probs[i], 0.0, 1.0);
        const int bin = std::min(kHistogramBins - 1, static_cast<int>(p * kHistogramBins));
        (labels[i] == 1 ? h.abnormal : h.normal)[static_cast<std::size_t>(bin)]++;
    }
    return h;
}

std::vector<std::pair<std::string, double>> feature_importance(const ScoreModel& model,
                                                               std::string* notice) {
    if (!model.classifier) throw std::runtime_error("feature_importance: model is not fitted");
    if (notice) notice->clear();
    const auto& names = model.preproc.kept;
    const auto weights = model.classifier->importance(names.size());
    double total = 0.0;
    for (double w : weights) total += w;
    if (total <= 0.0) {
        if (notice) {
            *notice = "classifier kind " + model.classifier_kind +
                      " provides no per-feature ranking";
        }
        return {};
    }
    std::vector<std::size_t> order(names.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
    std::vector<std::pair<std::string, double>> out;
    out.reserve(names.size());
    for (std::size_t i : order) out.emplace_back(names[i], weights[i]);
    return out;
}

EvalReport build_report(const FitOutcome& outcome) {
    EvalReport report;
    report.record_count = static_cast<long>(outcome.labels.size());
    report.selected_kind = outcome.model.classifier_kind;
    report.zfn_threshold = outcome.model.zfn_threshold;

    std::vector<std::string> order;
    for (const auto& kind : kClassifierKinds) {
        if (outcome.per_kind.count(kind)) order.push_back(kind);
    }
    for (const auto& [kind, eval] : outcome.per_kind) {
        (void)eval;
        if (std::find(order.begin(), order.end(), kind) == order.end()) order.push_back(kind);
    }
    for (const auto& kind : order) {
        const KindEvaluation& eval = outcome.per_kind.at(kind);
        EvalRow row = evaluate(eval.loocv_probs, outcome.labels, eval.zfn_threshold);
        row.kind = kind;
        report.rows.push_back(std::move(row));
    }

    EvalRow chosen = evaluate(outcome.loocv_probs, outcome.labels, outcome.model.zfn_threshold);
    chosen.kind = "selected:" + outcome.model.classifier_kind;
    chosen.selected = true;
    report.rows.push_back(std::move(chosen));

    report.histogram = score_histogram(outcome.loocv_probs, outcome.labels);
    report.importances = feature_importance(outcome.model, &report.importance_notice);
    return report;
}

EvalReport build_apply_report(const ScoreModel& model, const MetricTable& table) {
    if (schema_hash(table.schema) != model.schema_hash) {
        throw std::runtime_error("metrics schema does not match the fitted model");
    }
    std::vector<double> probs;
    std::vector<int> labels;
    probs.reserve(table.records.size());
    labels.reserve(table.records.size());
    for (const auto& r : table.records) {
        probs.push_back(composite_score(model, r));
        labels.push_back(r.label);
    }

    EvalReport report;
    report.record_count = static_cast<long>(table.records.size());
    report.selected_kind = model.classifier_kind;
    report.zfn_threshold = model.zfn_threshold;
    EvalRow row = evaluate(probs, labels, model.zfn_threshold);
    row.kind = "selected:" + model.classifier_kind;
    row.selected = true;
    report.rows.push_back(std::move(row));
    report.histogram = score_histogram(probs, labels);
    report.importances = feature_importance(model, &report.importance_notice);
    return report;
}

void write_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::ordered_json j;
    j["record_count"] = report.record_count;
    j["selected_kind"] = report.selected_kind;
    j["zfn_threshold"] = report.zfn_threshold;

    auto rows = nlohmann::ordered_json::array();
    for (const auto& row : report.rows) {
        nlohmann::ordered_json rj;
        rj["kind"] = row.kind;
        rj["selected"] = row.selected;
        rj["zfn_threshold"] = row.zfn_threshold;
        rj["std"] = regime_to_json(row.std_regime);
        rj["zfn"] = regime_to_json(row.zfn_regime);
        rows.push_back(std::move(rj));
    }
    j["rows"] = std::move(rows);

    nlohmann::ordered_json hist;
    auto edges = nlohmann::ordered_json::array();
    for (int b = 0; b <= kHistogramBins; ++b) {
        edges.push_back(static_cast<double>(b) / kHistogramBins);
    }
    hist["bin_edges"] = std::move(edges);
    hist["normal"] = report.histogram.normal;
    hist["abnormal"] = report.histogram.abnormal;
    j["histogram"] = std::move(hist);

    auto imp = nlohmann::ordered_json::array();
    const std::size_t top = std::min<std::size_t>(10, report.importances.size());
    for (std::size_t i = 0; i < top; ++i) {
        imp.push_back({{"name", report.importances[i].first},
                       {"weight", report.importances[i].second}});
    }
    j["top_importances"] = std::move(imp);
    j["importance_notice"] = report.importance_notice;

    write_text_file(path, j.dump(2) + "\n");
}

void write_report_md(const EvalReport& report, const std::string& path) {
    std::string md;
    md += "# Anomaly detection report\n\n";
    md += "Records evaluated: " + std::to_string(report.record_count) + "\n\n";
    md += "Selected classifier: " + report.selected_kind + "\n\n";
    md += "Calibrated zero-false-negative threshold: " + format_double(report.zfn_threshold) +
          " (decision rule: probability >= threshold)\n\n";

    md += "## Classification metrics\n\n";
    md += "STD scores each record against a fixed 0.5 cut; ZFN uses the calibrated threshold.\n\n";
    md += "| Classifier | Accuracy STD (%) | Accuracy ZFN (%) | Precision STD (%) | "
          "Precision ZFN (%) | FPR STD (%) | FPR ZFN (%) | FNR STD (%) | FNR ZFN (%) |\n";
    md += "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& row : report.rows) {
        md += "| " + row.kind + " | " + fmt_pct(row.std_regime.accuracy_pct) + " | " +
              fmt_pct(row.zfn_regime.accuracy_pct) + " | " + fmt_pct(row.std_regime.precision_pct) +
              " | " + fmt_pct(row.zfn_regime.precision_pct) + " | " +
              fmt_pct(row.std_regime.fpr_pct) + " | " + fmt_pct(row.zfn_regime.fpr_pct) + " | " +
              fmt_pct(row.std_regime.fnr_pct) + " | " + fmt_pct(row.zfn_regime.fnr_pct) + " |\n";
    }
    md += "\n";

    md += "## Confusion counts\n\n";
    md += "| Classifier | Regime | TP | FP | TN | FN |\n";
    md += "|---|---|---|---|---|---|\n";
    for (const auto& row : report.rows) {
        const auto& s = row.std_regime;
        const auto& z = row.zfn_regime;
        md += "| " + row.kind + " | STD | " + std::to_string(s.tp) + " | " + std::to_string(s.fp) +
              " | " + std::to_string(s.tn) + " | " + std::to_string(s.fn) + " |\n";
        md += "| " + row.kind + " | ZFN | " + std::to_string(z.tp) + " | " + std::to_string(z.fp) +
              " | " + std::to_string(z.tn) + " | " + std::to_string(z.fn) + " |\n";
    }
    md += "\n";

    md += "## Score histogram (20 bins over [0, 1])\n\n";
    md += "| Bin | Normal | Abnormal |\n";
    md += "|---|---|---|\n";
    for (int b = 0; b < kHistogramBins; ++b) {
        char range[64];
        std::snprintf(range, sizeof(range), "[%.2f, %.2f%c", b * 0.05, (b + 1) * 0.05,
                      b + 1 == kHistogramBins ? ']' : ')');
        md += std::string("| ") + range + " | " +
              std::to_string(report.histogram.normal[static_cast<std::size_t>(b)]) + " | " +
              std::to_string(report.histogram.abnormal[static_cast<std::size_t>(b)]) + " |\n";
    }
    md += "\n";

    md += "## Top feature importances\n\n";
    if (report.importances.empty()) {
        md += report.importance_notice.empty() ? std::string("No ranking available.")
                                               : report.importance_notice;
        md += "\n";
    } else {
        md += "| Rank | Feature | Weight |\n";
        md += "|---|---|---|\n";
        const std::size_t top = std::min<std::size_t>(10, report.importances.size());
        for (std::size_t i = 0; i < top; ++i) {
            md += "| " + std::to_string(i + 1) + " | " + report.importances[i].first + " | " +
                  format_double(report.importances[i].second) + " |\n";
        }
    }
    md += "\n";
    write_text_file(path, md);
}

void write_histogram_svg(const EvalReport& report, const std::string& path) {
    constexpr int kWidth = 720;
    constexpr int kHeight = 360;
    constexpr int kMarginLeft = 48;
    constexpr int kMarginBottom = 36;
    constexpr int kMarginTop = 24;
    constexpr int kMarginRight = 16;
    const int plot_w = kWidth - kMarginLeft - kMarginRight;
    const int plot_h = kHeight - kMarginTop - kMarginBottom;

    int peak = 1;
    for (int b = 0; b < kHistogramBins; ++b) {
        peak = std::max({peak, report.histogram.normal[static_cast<std::size_t>(b)],
                         report.histogram.abnormal[static_cast<std::size_t>(b)]});
    }

    std::string svg;
    char buf[256];
    std::snprintf(buf, sizeof(buf),
                  "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"%d\" height=\"%d\" "
                  "viewBox=\"0 0 %d %d\">\n",
                  kWidth, kHeight, kWidth, kHeight);
    svg += buf;
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"16\" font-family=\"monospace\" font-size=\"12\">"
                  "score distribution (normal gray, abnormal red, threshold dashed)</text>\n",
                  kMarginLeft);
    svg += buf;

    const double bin_w = static_cast<double>(plot_w) / kHistogramBins;
    for (int b = 0; b < kHistogramBins; ++b) {
        const double x0 = kMarginLeft + b * bin_w;
        const int nv = report.histogram.normal[static_cast<std::size_t>(b)];
        const int av = report.histogram.abnormal[static_cast<std::size_t>(b)];
        const double nh = static_cast<double>(plot_h) * nv / peak;
        const double ah = static_cast<double>(plot_h) * av / peak;
        if (nv > 0) {
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" "
                          "fill=\"#888888\" fill-opacity=\"0.8\"/>\n",
                          x0 + 1.0, kMarginTop + plot_h - nh, bin_w / 2 - 1.0, nh);
            svg += buf;
        }
        if (av > 0) {
            std::snprintf(buf, sizeof(buf),
                          "<rect x=\"%.2f\" y=\"%.2f\" width=\"%.2f\" height=\"%.2f\" "
                          "fill=\"#cc2222\" fill-opacity=\"0.8\"/>\n",
                          x0 + bin_w / 2, kMarginTop + plot_h - ah, bin_w / 2 - 1.0, ah);
            svg += buf;
        }
    }

    const double thr_x =
        kMarginLeft + std::clamp(report.zfn_threshold, 0.0, 1.0) * plot_w;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%.2f\" y1=\"%d\" x2=\"%.2f\" y2=\"%d\" stroke=\"#2244cc\" "
                  "stroke-dasharray=\"4 3\"/>\n",
                  thr_x, kMarginTop, thr_x, kMarginTop + plot_h);
    svg += buf;

    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", kMarginLeft,
                  kMarginTop + plot_h, kMarginLeft + plot_w, kMarginTop + plot_h);
    svg += buf;
    std::snprintf(buf, sizeof(buf),
                  "<line x1=\"%d\" y1=\"%d\" x2=\"%d\" y2=\"%d\" stroke=\"black\"/>\n", kMarginLeft,
                  kMarginTop, kMarginLeft, kMarginTop + plot_h);
    svg += buf;
    for (int t = 0; t <= 4; ++t) {
        const double x = kMarginLeft + plot_w * t / 4.0;
        std::snprintf(buf, sizeof(buf),
                      "<text x=\"%.2f\" y=\"%d\" font-family=\"monospace\" font-size=\"10\" "
                      "text-anchor=\"middle\">%.2f</text>\n",
                      x, kMarginTop + plot_h + 14, t / 4.0);
        svg += buf;
    }
    std::snprintf(buf, sizeof(buf),
                  "<text x=\"%d\" y=\"%d\" font-family=\"monospace\" font-size=\"10\" "
                  "text-anchor=\"end\">%d</text>\n",
                  kMarginLeft - 4, kMarginTop + 10, peak);
    svg += buf;
    svg += "</svg>\n";
    write_text_file(path, svg);
}

}  // namespace zfn
