#include "zfn/scorer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "zfn/parallel.hpp"
#include "zfn/util.hpp"

namespace zfn {

namespace {

constexpr double kCorrelationLimit = 0.95;

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        cov += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va <= 0.0 || vb <= 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

}  // namespace

PreprocState preprocess_fit(const MetricTable& table) {
    if (table.records.size() < 2) {
        throw std::runtime_error("preprocess_fit: need at least 2 records");
    }
    bool has0 = false, has1 = false;
    for (const auto& r : table.records) {
        if (r.values.size() != table.schema.size()) {
            throw std::runtime_error("preprocess_fit: record '" + r.image_id +
                                     "' does not match schema");
        }
        (r.label == 1 ? has1 : has0) = true;
    }
    if (!has0 || !has1) throw std::runtime_error("preprocess_fit: table has a single class");

    PreprocState st;
    st.schema = table.schema;

    std::vector<std::size_t> survivors;
    std::vector<std::vector<double>> columns;
    for (std::size_t f = 0; f < table.schema.size(); ++f) {
        bool missing = false;
        std::vector<double> col;
        col.reserve(table.records.size());
        for (const auto& r : table.records) {
            if (!r.values[f]) {
                missing = true;
                break;
            }
            col.push_back(*r.values[f]);
        }
        if (missing) {
            st.dropped_missing.push_back(table.schema[f]);
            continue;
        }
        const auto [lo, hi] = std::minmax_element(col.begin(), col.end());
        if (*lo == *hi) {
            st.dropped_constant.push_back(table.schema[f]);
            continue;
        }
        survivors.push_back(f);
        columns.push_back(std::move(col));
    }

    std::vector<std::size_t> kept_cols;
    for (std::size_t j = 0; j < survivors.size(); ++j) {
        bool dropped = false;
        for (std::size_t ki : kept_cols) {
            if (std::abs(pearson(columns[ki], columns[j])) > kCorrelationLimit) {
                st.dropped_correlated.emplace_back(table.schema[survivors[j]],
                                                  table.schema[survivors[ki]]);
                dropped = true;
                break;
            }
        }
        if (!dropped) kept_cols.push_back(j);
    }
    if (kept_cols.empty()) throw std::runtime_error("preprocess_fit: no features survive");

    for (std::size_t ki : kept_cols) {
        const auto [lo, hi] = std::minmax_element(columns[ki].begin(), columns[ki].end());
        st.kept.push_back(table.schema[survivors[ki]]);
        st.kept_index.push_back(survivors[ki]);
        st.min_vals.push_back(*lo);
        st.max_vals.push_back(*hi);
    }
    return st;
}

std::vector<double> transform_record(const PreprocState& state, const MetricRecord& record) {
    if (record.values.size() != state.schema.size()) {
        throw std::runtime_error("transform_record: record '" + record.image_id +
                                 "' does not match the fitted schema");
    }
    std::vector<double> out(state.kept.size());
    for (std::size_t i = 0; i < state.kept.size(); ++i) {
        const auto& v = record.values[state.kept_index[i]];
        if (!v) {
            throw std::runtime_error("transform_record: '" + record.image_id + "' is missing " +
                                     state.kept[i]);
        }
        const double scaled = (*v - state.min_vals[i]) / (state.max_vals[i] - state.min_vals[i]);
        out[i] = std::clamp(scaled, 0.0, 1.0);
    }
    return out;
}

Dataset preprocess_transform(const PreprocState& state, const MetricTable& table) {
    Dataset data;
    data.x.reserve(table.records.size());
    data.y.reserve(table.records.size());
    for (const auto& r : table.records) {
        data.x.push_back(transform_record(state, r));
        data.y.push_back(r.label);
    }
    return data;
}

std::vector<std::vector<double>> smote(const std::vector<std::vector<double>>& minority, int k,
                                       int n_new, std::uint64_t seed) {
    if (minority.size() < 2) throw std::runtime_error("smote: minority too small");
    if (k < 1 || static_cast<std::size_t>(k) > minority.size() - 1) {
        throw std::runtime_error("smote: k must lie in [1, minority size - 1]");
    }
    if (n_new < 0) throw std::runtime_error("smote: negative sample count");
    const std::size_t m = minority.size();

    std::vector<std::vector<std::size_t>> neighbors(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<std::pair<double, std::size_t>> dists;
        dists.reserve(m - 1);
        for (std::size_t j = 0; j < m; ++j) {
            if (j == i) continue;
            double d2 = 0.0;
            for (std::size_t f = 0; f < minority[i].size(); ++f) {
                const double d = minority[i][f] - minority[j][f];
                d2 += d * d;
            }
            dists.emplace_back(d2, j);
        }
        std::sort(dists.begin(), dists.end());
        neighbors[i].reserve(static_cast<std::size_t>(k));
        for (int t = 0; t < k; ++t) neighbors[i].push_back(dists[static_cast<std::size_t>(t)].second);
    }

    Rng rng(seed);
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(n_new));
    for (int t = 0; t < n_new; ++t) {
        const std::size_t base = rng.index(m);
        const std::size_t nbr = neighbors[base][rng.index(neighbors[base].size())];
        const double u = rng.uniform();
        std::vector<double> synth(minority[base].size());
        for (std::size_t f = 0; f < synth.size(); ++f) {
            synth[f] = minority[base][f] + u * (minority[nbr][f] - minority[base][f]);
        }
        out.push_back(std::move(synth));
    }
    return out;
}

Dataset balance_with_smote(const Dataset& train, std::uint64_t seed) {
    std::size_t n0 = 0, n1 = 0;
    for (int label : train.y) (label == 1 ? n1 : n0)++;
    if (n0 == n1) return train;
    const int minority_label = n1 < n0 ? 1 : 0;
    const std::size_t minority_count = std::min(n0, n1);
    const std::size_t majority_count = std::max(n0, n1);
    if (minority_count < 2) return train;

    std::vector<std::vector<double>> minority;
    minority.reserve(minority_count);
    for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.y[i] == minority_label) minority.push_back(train.x[i]);
    }
    const int k = static_cast<int>(std::min<std::size_t>(5, minority_count - 1));
    auto synth = smote(minority, k, static_cast<int>(majority_count - minority_count), seed);

    Dataset out = train;
    for (auto& s : synth) {
        out.x.push_back(std::move(s));
        out.y.push_back(minority_label);
    }
    return out;
}

// Trees

namespace {

struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

struct Tree {
    std::vector<TreeNode> nodes;

    double predict(const std::vector<double>& x) const {
        int idx = 0;
        while (nodes[static_cast<std::size_t>(idx)].feature >= 0) {
            const TreeNode& n = nodes[static_cast<std::size_t>(idx)];
            idx = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return nodes[static_cast<std::size_t>(idx)].value;
    }

    int leaf_of(const std::vector<double>& x) const {
        int idx = 0;
        while (nodes[static_cast<std::size_t>(idx)].feature >= 0) {
            const TreeNode& n = nodes[static_cast<std::size_t>(idx)];
            idx = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
        }
        return idx;
    }
};

struct TreeBuildConfig {
    int max_depth = 1;
    int mtry = 0;  // 0 keeps every feature
    bool random_threshold = false;
};

// For 0/1 targets the total squared error equals half the Gini-weighted
// node impurity, so one variance-reduction builder serves both the
// classification and the residual-regression trees with identical split
// choices.
class TreeBuilder {
public:
    TreeBuilder(const std::vector<std::vector<double>>& x, const std::vector<double>& targets,
                const TreeBuildConfig& cfg, Rng& rng, std::vector<double>& importance)
        : x_(x), targets_(targets), cfg_(cfg), rng_(rng), importance_(importance) {}

    Tree build(std::vector<std::size_t> samples) {
        Tree tree;
        grow(tree, std::move(samples), 0);
        return tree;
    }

private:
    struct Split {
        bool found = false;
        int feature = -1;
        double threshold = 0.0;
        double children_sse = std::numeric_limits<double>::infinity();
    };

    static double node_sse(const std::vector<double>& t, const std::vector<std::size_t>& samples) {
        double sum = 0.0, sum2 = 0.0;
        for (std::size_t i : samples) {
            sum += t[i];
            sum2 += t[i] * t[i];
        }
        const double n = static_cast<double>(samples.size());
        return std::max(0.0, sum2 - sum * sum / n);
    }

    std::vector<int> candidate_features() {
        const int d = static_cast<int>(x_.front().size());
        std::vector<int> feats(static_cast<std::size_t>(d));
        std::iota(feats.begin(), feats.end(), 0);
        if (cfg_.mtry <= 0 || cfg_.mtry >= d) return feats;
        for (int i = 0; i < cfg_.mtry; ++i) {
            const std::size_t j = i + rng_.index(static_cast<std::size_t>(d - i));
            std::swap(feats[static_cast<std::size_t>(i)], feats[j]);
        }
        feats.resize(static_cast<std::size_t>(cfg_.mtry));
        return feats;
    }

    Split find_split(const std::vector<std::size_t>& samples) {
        Split best;
        const auto feats = candidate_features();
        for (int f : feats) {
            if (cfg_.random_threshold) {
                double lo = x_[samples.front()][static_cast<std::size_t>(f)];
                double hi = lo;
                for (std::size_t i : samples) {
                    lo = std::min(lo, x_[i][static_cast<std::size_t>(f)]);
                    hi = std::max(hi, x_[i][static_cast<std::size_t>(f)]);
                }
                if (lo == hi) continue;
                const double thr = rng_.uniform(lo, hi);
                double lsum = 0.0, lsum2 = 0.0, rsum = 0.0, rsum2 = 0.0;
                std::size_t ln = 0, rn = 0;
                for (std::size_t i : samples) {
                    const double t = targets_[i];
                    if (x_[i][static_cast<std::size_t>(f)] <= thr) {
                        lsum += t;
                        lsum2 += t * t;
                        ++ln;
                    } else {
                        rsum += t;
                        rsum2 += t * t;
                        ++rn;
                    }
                }
                if (ln == 0 || rn == 0) continue;
                const double sse = std::max(0.0, lsum2 - lsum * lsum / static_cast<double>(ln)) +
                                   std::max(0.0, rsum2 - rsum * rsum / static_cast<double>(rn));
                if (sse < best.children_sse) {
                    best = {true, f, thr, sse};
                }
                continue;
            }
            std::vector<std::pair<double, double>> vals;  // feature value, target
            vals.reserve(samples.size());
            for (std::size_t i : samples) {
                vals.emplace_back(x_[i][static_cast<std::size_t>(f)], targets_[i]);
            }
            std::sort(vals.begin(), vals.end(),
                      [](const auto& a, const auto& b) { return a.first < b.first; });
            double total = 0.0, total2 = 0.0;
            for (const auto& [v, t] : vals) {
                total += t;
                total2 += t * t;
            }
            double lsum = 0.0, lsum2 = 0.0;
            const std::size_t n = vals.size();
            for (std::size_t i = 0; i + 1 < n; ++i) {
                lsum += vals[i].second;
                lsum2 += vals[i].second * vals[i].second;
                if (vals[i].first == vals[i + 1].first) continue;
                const double ln = static_cast<double>(i + 1);
                const double rn = static_cast<double>(n - i - 1);
                const double rsum = total - lsum;
                const double rsum2 = total2 - lsum2;
                const double sse = std::max(0.0, lsum2 - lsum * lsum / ln) +
                                   std::max(0.0, rsum2 - rsum * rsum / rn);
                if (sse < best.children_sse) {
                    best = {true, f, 0.5 * (vals[i].first + vals[i + 1].first), sse};
                }
            }
        }
        return best;
    }

    int grow(Tree& tree, std::vector<std::size_t> samples, int depth) {
        const int idx = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        double sum = 0.0;
        for (std::size_t i : samples) sum += targets_[i];
        tree.nodes.back().value = sum / static_cast<double>(samples.size());

        if (depth >= cfg_.max_depth || samples.size() < 2) return idx;
        const double parent_sse = node_sse(targets_, samples);
        if (parent_sse <= 0.0) return idx;
        const Split split = find_split(samples);
        if (!split.found) return idx;

        std::vector<std::size_t> left, right;
        for (std::size_t i : samples) {
            (x_[i][static_cast<std::size_t>(split.feature)] <= split.threshold ? left : right)
                .push_back(i);
        }
        samples.clear();
        samples.shrink_to_fit();
        importance_[static_cast<std::size_t>(split.feature)] +=
            parent_sse - split.children_sse;

        tree.nodes[static_cast<std::size_t>(idx)].feature = split.feature;
        tree.nodes[static_cast<std::size_t>(idx)].threshold = split.threshold;
        const int l = grow(tree, std::move(left), depth + 1);
        tree.nodes[static_cast<std::size_t>(idx)].left = l;
        const int r = grow(tree, std::move(right), depth + 1);
        tree.nodes[static_cast<std::size_t>(idx)].right = r;
        return idx;
    }

    const std::vector<std::vector<double>>& x_;
    const std::vector<double>& targets_;
    TreeBuildConfig cfg_;
    Rng& rng_;
    std::vector<double>& importance_;
};

nlohmann::ordered_json tree_to_json(const Tree& tree) {
    auto nodes = nlohmann::ordered_json::array();
    for (const auto& n : tree.nodes) {
        nodes.push_back({n.feature, n.threshold, n.left, n.right, n.value});
    }
    return nodes;
}

Tree tree_from_json(const nlohmann::json& j) {
    Tree tree;
    for (const auto& n : j) {
        TreeNode node;
        node.feature = n.at(0).get<int>();
        node.threshold = n.at(1).get<double>();
        node.left = n.at(2).get<int>();
        node.right = n.at(3).get<int>();
        node.value = n.at(4).get<double>();
        tree.nodes.push_back(node);
    }
    if (tree.nodes.empty()) throw std::runtime_error("empty tree in model file");
    return tree;
}

void require_two_classes(const Dataset& train) {
    bool has0 = false, has1 = false;
    for (int y : train.y) (y == 1 ? has1 : has0) = true;
    if (!has0 || !has1) {
        throw std::runtime_error("training set has a single class");
    }
}

std::vector<double> normalized_importance(const std::vector<double>& raw, std::size_t dim) {
    std::vector<double> out(dim, 0.0);
    if (raw.size() != dim) return out;
    double total = 0.0;
    for (double v : raw) total += v;
    if (total <= 0.0) return out;
    for (std::size_t i = 0; i < dim; ++i) out[i] = raw[i] / total;
    return out;
}

int hp_int(const nlohmann::json& hp, const char* name) {
    if (!hp.contains(name)) throw std::runtime_error(std::string("missing hyperparameter ") + name);
    return hp.at(name).get<int>();
}

double hp_double(const nlohmann::json& hp, const char* name) {
    if (!hp.contains(name)) throw std::runtime_error(std::string("missing hyperparameter ") + name);
    return hp.at(name).get<double>();
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

std::vector<double> to_double_targets(const std::vector<int>& y) {
    std::vector<double> t(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) t[i] = static_cast<double>(y[i]);
    return t;
}

std::vector<std::size_t> all_indices(std::size_t n) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

int sqrt_mtry(std::size_t dim) {
    return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(dim))));
}

// Single CART tree with exhaustive splits.
class DecisionTreeClassifier final : public Classifier {
public:
    explicit DecisionTreeClassifier(const nlohmann::json& hp) : max_depth_(hp_int(hp, "max_depth")) {
        if (max_depth_ < 1) throw std::runtime_error("DT: max_depth must be >= 1");
    }

    void fit(const Dataset& train, std::uint64_t seed) override {
        (void)seed;
        require_two_classes(train);
        dim_ = train.dim();
        importance_raw_.assign(dim_, 0.0);
        Rng rng(0);
        const auto targets = to_double_targets(train.y);
        TreeBuilder builder(train.x, targets, {max_depth_, 0, false}, rng, importance_raw_);
        tree_ = builder.build(all_indices(train.size()));
    }

    double predict_proba(const std::vector<double>& x) const override { return tree_.predict(x); }
    std::string kind() const override { return "DT"; }

    nlohmann::ordered_json save_state() const override {
        nlohmann::ordered_json j;
        j["tree"] = tree_to_json(tree_);
        j["importance_raw"] = importance_raw_;
        return j;
    }

    void load_state(const nlohmann::json& j) override {
        tree_ = tree_from_json(j.at("tree"));
        importance_raw_ = j.at("importance_raw").get<std::vector<double>>();
        dim_ = importance_raw_.size();
    }

    std::vector<double> importance(std::size_t dim) const override {
        return normalized_importance(importance_raw_, dim);
    }

private:
    int max_depth_;
    std::size_t dim_ = 0;
    Tree tree_;
    std::vector<double> importance_raw_;
};

// Bagged forest: bootstrap per tree, sqrt(d) features per split.
class RandomForestClassifier final : public Classifier {
public:
    explicit RandomForestClassifier(const nlohmann::json& hp)
        : trees_count_(hp_int(hp, "trees")), max_depth_(hp_int(hp, "max_depth")) {
        if (trees_count_ < 1 || max_depth_ < 1) {
            throw std::runtime_error("RF: trees and max_depth must be >= 1");
        }
    }

    void fit(const Dataset& train, std::uint64_t seed) override {
        require_two_classes(train);
        importance_raw_.assign(train.dim(), 0.0);
        const auto targets = to_double_targets(train.y);
        const TreeBuildConfig cfg{max_depth_, sqrt_mtry(train.dim()), false};
        trees_.clear();
        trees_.reserve(static_cast<std::size_t>(trees_count_));
        for (int t = 0; t < trees_count_; ++t) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
            std::vector<std::size_t> bag(train.size());
            for (auto& i : bag) i = rng.index(train.size());
            TreeBuilder builder(train.x, targets, cfg, rng, importance_raw_);
            trees_.push_back(builder.build(std::move(bag)));
        }
    }

    double predict_proba(const std::vector<double>& x) const override {
        double acc = 0.0;
        for (const auto& t : trees_) acc += t.predict(x);
        return acc / static_cast<double>(trees_.size());
    }

    std::string kind() const override { return "RF"; }

    nlohmann::ordered_json save_state() const override {
        nlohmann::ordered_json j;
        auto arr = nlohmann::ordered_json::array();
        for (const auto& t : trees_) arr.push_back(tree_to_json(t));
        j["trees"] = std::move(arr);
        j["importance_raw"] = importance_raw_;
        return j;
    }

    void load_state(const nlohmann::json& j) override {
        trees_.clear();
        for (const auto& tj : j.at("trees")) trees_.push_back(tree_from_json(tj));
        if (trees_.empty()) throw std::runtime_error("RF: model has no trees");
        importance_raw_ = j.at("importance_raw").get<std::vector<double>>();
    }

    std::vector<double> importance(std::size_t dim) const override {
        return normalized_importance(importance_raw_, dim);
    }

private:
    int trees_count_;
    int max_depth_;
    std::vector<Tree> trees_;
    std::vector<double> importance_raw_;
};

// No bootstrap, one uniformly random threshold per candidate feature.
class ExtraTreesClassifier final : public Classifier {
public:
    explicit ExtraTreesClassifier(const nlohmann::json& hp)
        : trees_count_(hp_int(hp, "trees")), max_depth_(hp_int(hp, "max_depth")) {
        if (trees_count_ < 1 || max_depth_ < 1) {
            throw std::runtime_error("ET: trees and max_depth must be >= 1");
        }
    }

    void fit(const Dataset& train, std::uint64_t seed) override {
        require_two_classes(train);
        importance_raw_.assign(train.dim(), 0.0);
        const auto targets = to_double_targets(train.y);
        const TreeBuildConfig cfg{max_depth_, sqrt_mtry(train.dim()), true};
        trees_.clear();
        trees_.reserve(static_cast<std::size_t>(trees_count_));
        for (int t = 0; t < trees_count_; ++t) {
            Rng rng(derive_seed(seed, static_cast<std::uint64_t>(t)));
            TreeBuilder builder(train.x, targets, cfg, rng, importance_raw_);
            trees_.push_back(builder.build(all_indices(train.size())));
        }
    }

    double predict_proba(const std::vector<double>& x) const override {
        double acc = 0.0;
        for (const auto& t : trees_) acc += t.predict(x);
        return acc / static_cast<double>(trees_.size());
    }

    std::string kind() const override { return "ET"; }

    nlohmann::ordered_json save_state() const override {
        nlohmann::ordered_json j;
        auto arr = nlohmann::ordered_json::array();
        for (const auto& t : trees_) arr.push_back(tree_to_json(t));
        j["trees"] = std::move(arr);
        j["importance_raw"] = importance_raw_;
        return j;
    }

    void load_state(const nlohmann::json& j) override {
        trees_.clear();
        for (const auto& tj : j.at("trees")) trees_.push_back(tree_from_json(tj));
        if (trees_.empty()) throw std::runtime_error("ET: model has no trees");
        importance_raw_ = j.at("importance_raw").get<std::vector<double>>();
    }

    std::vector<double> importance(std::size_t dim) const override {
        return normalized_importance(importance_raw_, dim);
    }

private:
    int trees_count_;
    int max_depth_;
    std::vector<Tree> trees_;
    std::vector<double> importance_raw_;
};

// Shallow regression trees on logistic-loss residuals with Newton leaf
// updates.
class GradientBoostingClassifier final : public Classifier {
public:
    explicit GradientBoostingClassifier(const nlohmann::json& hp)
        : trees_count_(hp_int(hp, "trees")),
          learning_rate_(hp_double(hp, "learning_rate")),
          max_depth_(hp_int(hp, "max_depth")) {
        if (trees_count_ < 1 || max_depth_ < 1) {
            throw std::runtime_error("GBC: trees and max_depth must be >= 1");
        }
        if (learning_rate_ <= 0.0) throw std::runtime_error("GBC: learning_rate must be positive");
    }

    void fit(const Dataset& train, std::uint64_t seed) override {
        (void)seed;
        require_two_classes(train);
        const std::size_t n = train.size();
        importance_raw_.assign(train.dim(), 0.0);

        double p1 = 0.0;
        for (int y : train.y) p1 += y;
        p1 = std::clamp(p1 / static_cast<double>(n), 1e-6, 1.0 - 1e-6);
        f0_ = std::log(p1 / (1.0 - p1));

        std::vector<double> f(n, f0_);
        std::vector<double> residuals(n);
        trees_.clear();
        trees_.reserve(static_cast<std::size_t>(trees_count_));
        Rng rng(0);
        const auto idx = all_indices(n);
        for (int t = 0; t < trees_count_; ++t) {
            for (std::size_t i = 0; i < n; ++i) {
                residuals[i] = static_cast<double>(train.y[i]) - sigmoid(f[i]);
            }
            TreeBuilder builder(train.x, residuals, {max_depth_, 0, false}, rng, importance_raw_);
            Tree tree = builder.build(idx);

            std::vector<double> leaf_num(tree.nodes.size(), 0.0);
            std::vector<double> leaf_den(tree.nodes.size(), 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const int leaf = tree.leaf_of(train.x[i]);
                const double p = sigmoid(f[i]);
                leaf_num[static_cast<std::size_t>(leaf)] += residuals[i];
                leaf_den[static_cast<std::size_t>(leaf)] += p * (1.0 - p);
            }
            for (std::size_t node = 0; node < tree.nodes.size(); ++node) {
                if (tree.nodes[node].feature >= 0) continue;
                tree.nodes[node].value = leaf_num[node] / std::max(leaf_den[node], 1e-12);
            }
            for (std::size_t i = 0; i < n; ++i) {
                f[i] += learning_rate_ * tree.predict(train.x[i]);
            }
            trees_.push_back(std::move(tree));
        }
    }

    double predict_proba(const std::vector<double>& x) const override {
        double f = f0_;
        for (const auto& t : trees_) f += learning_rate_ * t.predict(x);
        return sigmoid(f);
    }

    std::string kind() const override { return "GBC"; }

    nlohmann::ordered_json save_state() const override {
        nlohmann::ordered_json j;
        j["f0"] = f0_;
        auto arr = nlohmann::ordered_json::array();
        for (const auto& t : trees_) arr.push_back(tree_to_json(t));
        j["trees"] = std::move(arr);
        j["importance_raw"] = importance_raw_;
        return j;
    }

    void load_state(const nlohmann::json& j) override {
        f0_ = j.at("f0").get<double>();
        trees_.clear();
        for (const auto& tj : j.at("trees")) trees_.push_back(tree_from_json(tj));
        if (trees_.empty()) throw std::runtime_error("GBC: model has no trees");
        importance_raw_ = j.at("importance_raw").get<std::vector<double>>();
    }

    std::vector<double> importance(std::size_t dim) const override {
        return normalized_importance(importance_raw_, dim);
    }

private:
    int trees_count_;
    double learning_rate_;
    int max_depth_;
    double f0_ = 0.0;
    std::vector<Tree> trees_;
    std::vector<double> importance_raw_;
};

// Batch gradient descent, fixed step and iteration cap, unregularized
// bias.
class LogisticRegressionClassifier final : public Classifier {
public:
    explicit LogisticRegressionClassifier(const nlohmann::json& hp) : l2_(hp_double(hp, "l2")) {
        if (l2_ < 0.0) throw std::runtime_error("LR: l2 must be non-negative");
    }

    void fit(const Dataset& train, std::uint64_t seed) override {
        (void)seed;
        require_two_classes(train);
        const std::size_t n = train.size();
        const std::size_t d = train.dim();
        weights_.assign(d, 0.0);
        bias_ = 0.0;
        constexpr double kStep = 0.5;
        constexpr int kIters = 500;
        std::vector<double> grad(d);
        for (int iter = 0; iter < kIters; ++iter) {
            std::fill(grad.begin(), grad.end(), 0.0);
            double grad_b = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                double z = bias_;
                for (std::size_t f = 0; f < d; ++f) z += weights_[f] * train.x[i][f];
                const double err = sigmoid(z) - static_cast<double>(train.y[i]);
                for (std::size_t f = 0; f < d; ++f) grad[f] += err * train.x[i][f];
                grad_b += err;
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t f = 0; f < d; ++f) {
                weights_[f] -= kStep * (grad[f] * inv_n + l2_ * weights_[f]);
            }
            bias_ -= kStep * grad_b * inv_n;
        }
    }

    double predict_proba(const std::vector<double>& x) const override {
        double z = bias_;
        for (std::size_t f = 0; f < weights_.size(); ++f) z += weights_[f] * x[f];
        return sigmoid(z);
    }

    std::string kind() const override { return "LR"; }

    nlohmann::ordered_json save_state() const override {
        nlohmann::ordered_json j;
        j["weights"] = weights_;
        j["bias"] = bias_;
        return j;
    }

    void load_state(const nlohmann::json& j) override {
        weights_ = j.at("weights").get<std::vector<double>>();
        bias_ = j.at("bias").get<double>();
    }

    std::vector<double> importance(std::size_t dim) const override {
        std::vector<double> raw(dim, 0.0);
        for (std::size_t i = 0; i < std::min(dim, weights_.size()); ++i) {
            raw[i] = std::abs(weights_[i]);
        }
        return normalized_importance(raw, dim);
    }

private:
    double l2_;
    std::vector<double> weights_;
    double bias_ = 0.0;
};

// Probability is the class-1 vote fraction among the k nearest
// neighbors; distance ties resolve by training index.
class KnnClassifier final : public Classifier {
public:
    explicit KnnClassifier(const nlohmann::json& hp) : k_(hp_int(hp, "k")) {
        if (k_ < 1) throw std::runtime_error("KNN: k must be >= 1");
    }

    void fit(const Dataset& train, std::uint64_t seed) override {
        (void)seed;
        require_two_classes(train);
        x_ = train.x;
        y_ = train.y;
    }

    double predict_proba(const std::vector<double>& x) const override {
        std::vector<std::pair<double, std::size_t>> dists;
        dists.reserve(x_.size());
        for (std::size_t i = 0; i < x_.size(); ++i) {
            double d2 = 0.0;
            for (std::size_t f = 0; f < x.size(); ++f) {
                const double d = x[f] - x_[i][f];
                d2 += d * d;
            }
            dists.emplace_back(d2, i);
        }
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(k_), dists.size());
        std::partial_sort(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k),
                          dists.end());
        double votes = 0.0;
        for (std::size_t t = 0; t < k; ++t) votes += y_[dists[t].second];
        return votes / static_cast<double>(k);
    }

    std::string kind() const override { return "KNN"; }

    nlohmann::ordered_json save_state() const override {
        nlohmann::ordered_json j;
        j["x"] = x_;
        j["y"] = y_;
        return j;
    }

    void load_state(const nlohmann::json& j) override {
        x_ = j.at("x").get<std::vector<std::vector<double>>>();
        y_ = j.at("y").get<std::vector<int>>();
        if (x_.empty() || x_.size() != y_.size()) {
            throw std::runtime_error("KNN: invalid stored training data");
        }
    }

private:
    int k_;
    std::vector<std::vector<double>> x_;
    std::vector<int> y_;
};

// Per-class Gaussian likelihoods with a variance floor.
class GaussianNbClassifier final : public Classifier {
public:
    explicit GaussianNbClassifier(const nlohmann::json& hp) { (void)hp; }

    void fit(const Dataset& train, std::uint64_t seed) override {
        (void)seed;
        require_two_classes(train);
        const std::size_t d = train.dim();
        mean_.assign(2, std::vector<double>(d, 0.0));
        var_.assign(2, std::vector<double>(d, 0.0));
        std::size_t counts[2] = {0, 0};
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto c = static_cast<std::size_t>(train.y[i]);
            ++counts[c];
            for (std::size_t f = 0; f < d; ++f) mean_[c][f] += train.x[i][f];
        }
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t f = 0; f < d; ++f) mean_[c][f] /= static_cast<double>(counts[c]);
        }
        for (std::size_t i = 0; i < train.size(); ++i) {
            const auto c = static_cast<std::size_t>(train.y[i]);
            for (std::size_t f = 0; f < d; ++f) {
                const double dv = train.x[i][f] - mean_[c][f];
                var_[c][f] += dv * dv;
            }
        }
        constexpr double kVarianceFloor = 1e-9;
        for (std::size_t c = 0; c < 2; ++c) {
            for (std::size_t f = 0; f < d; ++f) {
                var_[c][f] = std::max(var_[c][f] / static_cast<double>(counts[c]), kVarianceFloor);
            }
        }
        log_prior_[0] = std::log(static_cast<double>(counts[0]) / static_cast<double>(train.size()));
        log_prior_[1] = std::log(static_cast<double>(counts[1]) / static_cast<double>(train.size()));
    }

    double predict_proba(const std::vector<double>& x) const override {
        double log_like[2];
        for (std::size_t c = 0; c < 2; ++c) {
            double acc = log_prior_[c];
            for (std::size_t f = 0; f < x.size(); ++f) {
                const double dv = x[f] - mean_[c][f];
                acc += -0.5 * std::log(2.0 * M_PI * var_[c][f]) - dv * dv / (2.0 * var_[c][f]);
            }
            log_like[c] = acc;
        }
        const double hi = std::max(log_like[0], log_like[1]);
        const double e0 = std::exp(log_like[0] - hi);
        const double e1 = std::exp(log_like[1] - hi);
        return e1 / (e0 + e1);
    }

    std::string kind() const override { return "NB"; }

    nlohmann::ordered_json save_state() const override {
        nlohmann::ordered_json j;
        j["mean"] = mean_;
        j["var"] = var_;
        j["log_prior"] = std::vector<double>{log_prior_[0], log_prior_[1]};
        return j;
    }

    void load_state(const nlohmann::json& j) override {
        mean_ = j.at("mean").get<std::vector<std::vector<double>>>();
        var_ = j.at("var").get<std::vector<std::vector<double>>>();
        const auto lp = j.at("log_prior").get<std::vector<double>>();
        if (mean_.size() != 2 || var_.size() != 2 || lp.size() != 2) {
            throw std::runtime_error("NB: invalid stored state");
        }
        log_prior_[0] = lp[0];
        log_prior_[1] = lp[1];
    }

private:
    std::vector<std::vector<double>> mean_;
    std::vector<std::vector<double>> var_;
    double log_prior_[2] = {0.0, 0.0};
};

}  // namespace

std::unique_ptr<Classifier> make_classifier(const std::string& kind,
                                            const nlohmann::json& hyperparameters) {
    if (kind == "DT") return std::make_unique<DecisionTreeClassifier>(hyperparameters);
    if (kind == "RF") return std::make_unique<RandomForestClassifier>(hyperparameters);
    if (kind == "ET") return std::make_unique<ExtraTreesClassifier>(hyperparameters);
    if (kind == "GBC") return std::make_unique<GradientBoostingClassifier>(hyperparameters);
    if (kind == "LR") return std::make_unique<LogisticRegressionClassifier>(hyperparameters);
    if (kind == "KNN") return std::make_unique<KnnClassifier>(hyperparameters);
    if (kind == "NB") return std::make_unique<GaussianNbClassifier>(hyperparameters);
    throw std::runtime_error("unknown classifier kind: " + kind);
}

nlohmann::ordered_json sample_hyperparameters(const std::string& kind, Rng& rng) {
    nlohmann::ordered_json hp;
    if (kind == "DT") {
        hp["max_depth"] = static_cast<int>(rng.uniform_int(1, 20));
    } else if (kind == "RF" || kind == "ET") {
        hp["trees"] = static_cast<int>(rng.uniform_int(10, 500));
        hp["max_depth"] = static_cast<int>(rng.uniform_int(1, 20));
    } else if (kind == "GBC") {
        hp["trees"] = static_cast<int>(rng.uniform_int(10, 500));
        hp["learning_rate"] = rng.uniform(0.01, 0.3);
        hp["max_depth"] = static_cast<int>(rng.uniform_int(1, 3));
    } else if (kind == "LR") {
        hp["l2"] = rng.log_uniform(1e-4, 10.0);
    } else if (kind == "KNN") {
        hp["k"] = static_cast<int>(rng.uniform_int(1, 15));
    } else if (kind == "NB") {
        // no tunable parameters
    } else {
        throw std::runtime_error("unknown classifier kind: " + kind);
    }
    return hp;
}

std::vector<std::vector<std::size_t>> stratified_folds(const std::vector<int>& y, int folds,
                                                       std::uint64_t seed) {
    if (folds < 2) throw std::runtime_error("stratified_folds: folds must be >= 2");
    std::vector<std::size_t> class_idx[2];
    for (std::size_t i = 0; i < y.size(); ++i) {
        class_idx[y[i] == 1 ? 1 : 0].push_back(i);
    }
    for (int c = 0; c < 2; ++c) {
        if (class_idx[c].size() < static_cast<std::size_t>(folds)) {
            throw std::runtime_error("stratified_folds: class " + std::to_string(c) +
                                     " has fewer records than folds");
        }
    }
    std::vector<std::vector<std::size_t>> out(static_cast<std::size_t>(folds));
    for (int c = 0; c < 2; ++c) {
        auto& idx = class_idx[c];
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(c)));
        for (std::size_t i = idx.size(); i > 1; --i) {
            std::swap(idx[i - 1], idx[rng.index(i)]);
        }
        for (std::size_t j = 0; j < idx.size(); ++j) {
            out[j % static_cast<std::size_t>(folds)].push_back(idx[j]);
        }
    }
    for (auto& fold : out) std::sort(fold.begin(), fold.end());
    return out;
}

namespace {

std::unique_ptr<Classifier> fit_with_smote(const std::string& kind, const nlohmann::json& hp,
                                           const Dataset& train, std::uint64_t seed) {
    require_two_classes(train);
    const Dataset balanced = balance_with_smote(train, derive_seed(seed, 0));
    auto clf = make_classifier(kind, hp);
    clf->fit(balanced, derive_seed(seed, 1));
    return clf;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& keep) {
    Dataset out;
    out.x.reserve(keep.size());
    out.y.reserve(keep.size());
    for (std::size_t i : keep) {
        out.x.push_back(data.x[i]);
        out.y.push_back(data.y[i]);
    }
    return out;
}

}  // namespace

SearchOutcome search_hyperparameters(const Dataset& data, const std::vector<std::string>& kinds,
                                     int iterations, int folds, std::uint64_t seed, int threads) {
    if (iterations < 1) throw std::runtime_error("search: iterations must be >= 1");
    if (kinds.empty()) throw std::runtime_error("search: no classifier kinds enabled");
    const auto fold_sets = stratified_folds(data.y, folds, derive_seed(seed, 0));

    std::vector<std::vector<std::size_t>> train_sets(fold_sets.size());
    for (std::size_t f = 0; f < fold_sets.size(); ++f) {
        for (std::size_t g = 0; g < fold_sets.size(); ++g) {
            if (g == f) continue;
            train_sets[f].insert(train_sets[f].end(), fold_sets[g].begin(), fold_sets[g].end());
        }
        std::sort(train_sets[f].begin(), train_sets[f].end());
    }

    struct IterResult {
        std::string kind;
        nlohmann::ordered_json hp;
        double accuracy = -1.0;
    };
    std::vector<IterResult> results(static_cast<std::size_t>(iterations));
    parallel_for(static_cast<std::size_t>(iterations), threads, [&](std::size_t it) {
        const std::uint64_t iter_seed = derive_seed(seed, 1 + it);
        Rng rng(iter_seed);
        IterResult res;
        res.kind = kinds[rng.index(kinds.size())];
        res.hp = sample_hyperparameters(res.kind, rng);

        double correct = 0.0;
        std::size_t total = 0;
        for (std::size_t f = 0; f < fold_sets.size(); ++f) {
            const Dataset train = subset(data, train_sets[f]);
            const auto clf = fit_with_smote(res.kind, res.hp, train, derive_seed(iter_seed, f));
            for (std::size_t i : fold_sets[f]) {
                const int pred = clf->predict_proba(data.x[i]) >= 0.5 ? 1 : 0;
                if (pred == data.y[i]) correct += 1.0;
                ++total;
            }
        }
        res.accuracy = correct / static_cast<double>(total);
        results[it] = std::move(res);
    });

    SearchOutcome out;
    for (std::size_t it = 0; it < results.size(); ++it) {
        const IterResult& res = results[it];
        SearchResult sr{res.kind, res.hp, res.accuracy, static_cast<int>(it)};
        auto found = out.best_per_kind.find(res.kind);
        if (found == out.best_per_kind.end() || res.accuracy > found->second.cv_accuracy) {
            out.best_per_kind[res.kind] = sr;
        }
        if (out.best.iteration < 0 || res.accuracy > out.best.cv_accuracy) {
            out.best = sr;
        }
    }
    return out;
}

std::vector<double> fit_predict_loocv(const Dataset& data, const std::string& kind,
                                      const nlohmann::json& hyperparameters, std::uint64_t seed,
                                      int threads) {
    if (data.size() < 3) throw std::runtime_error("loocv: need at least 3 records");
    std::vector<double> probs(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        Dataset train;
        train.x.reserve(data.size() - 1);
        train.y.reserve(data.size() - 1);
        for (std::size_t j = 0; j < data.size(); ++j) {
            if (j == i) continue;
            train.x.push_back(data.x[j]);
            train.y.push_back(data.y[j]);
        }
        const auto clf = fit_with_smote(kind, hyperparameters, train, derive_seed(seed, i));
        probs[i] = clf->predict_proba(data.x[i]);
    });
    return probs;
}

double calibrate_zfn(const std::vector<double>& probs, const std::vector<int>& labels) {
    if (probs.size() != labels.size()) throw std::runtime_error("calibrate_zfn: length mismatch");
    double threshold = std::numeric_limits<double>::infinity();
    bool any = false;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (labels[i] == 1) {
            threshold = std::min(threshold, probs[i]);
            any = true;
        }
    }
    if (!any) throw std::runtime_error("calibrate_zfn: no abnormal records");
    return threshold;
}

std::string schema_hash(const std::vector<std::string>& schema) {
    std::string joined;
    for (const auto& name : schema) {
        joined += name;
        joined += '\n';
    }
    return hex64(fnv1a(joined));
}

double composite_score(const ScoreModel& model, const MetricRecord& record) {
    if (!model.classifier) throw std::runtime_error("composite_score: model is not fitted");
    return model.classifier->predict_proba(transform_record(model.preproc, record));
}

void save_model(const ScoreModel& model, const std::string& path) {
    if (!model.classifier) throw std::runtime_error("save_model: model is not fitted");
    nlohmann::ordered_json j;
    j["format"] = "zfn-score-model";
    j["version"] = 1;
    j["seed"] = model.seed;
    j["schema_hash"] = model.schema_hash;
    j["zfn_threshold"] = model.zfn_threshold;

    nlohmann::ordered_json pre;
    pre["schema"] = model.preproc.schema;
    pre["kept"] = model.preproc.kept;
    pre["kept_index"] = model.preproc.kept_index;
    pre["min"] = model.preproc.min_vals;
    pre["max"] = model.preproc.max_vals;
    pre["dropped_missing"] = model.preproc.dropped_missing;
    pre["dropped_constant"] = model.preproc.dropped_constant;
    auto corr = nlohmann::ordered_json::array();
    for (const auto& [dropped, kept] : model.preproc.dropped_correlated) {
        corr.push_back({dropped, kept});
    }
    pre["dropped_correlated"] = std::move(corr);
    j["preprocess"] = std::move(pre);

    nlohmann::ordered_json clf;
    clf["kind"] = model.classifier_kind;
    clf["hyperparameters"] = model.hyperparameters;
    clf["state"] = model.classifier->save_state();
    j["classifier"] = std::move(clf);

    write_text_file(path, j.dump(2) + "\n");
}

ScoreModel load_model(const std::string& path) {
    const auto j = nlohmann::json::parse(read_text_file(path));
    if (!j.contains("format") || j.at("format") != "zfn-score-model") {
        throw std::runtime_error("not a score model file: " + path);
    }
    ScoreModel model;
    model.seed = j.at("seed").get<std::uint64_t>();
    model.schema_hash = j.at("schema_hash").get<std::string>();
    model.zfn_threshold = j.at("zfn_threshold").get<double>();

    const auto& pre = j.at("preprocess");
    model.preproc.schema = pre.at("schema").get<std::vector<std::string>>();
    model.preproc.kept = pre.at("kept").get<std::vector<std::string>>();
    model.preproc.kept_index = pre.at("kept_index").get<std::vector<std::size_t>>();
    model.preproc.min_vals = pre.at("min").get<std::vector<double>>();
    model.preproc.max_vals = pre.at("max").get<std::vector<double>>();
    model.preproc.dropped_missing = pre.at("dropped_missing").get<std::vector<std::string>>();
    model.preproc.dropped_constant = pre.at("dropped_constant").get<std::vector<std::string>>();
    for (const auto& pair : pre.at("dropped_correlated")) {
        model.preproc.dropped_correlated.emplace_back(pair.at(0).get<std::string>(),
                                                      pair.at(1).get<std::string>());
    }

    const auto& clf = j.at("classifier");
    model.classifier_kind = clf.at("kind").get<std::string>();
    model.hyperparameters = clf.at("hyperparameters");
    model.classifier = make_classifier(model.classifier_kind, model.hyperparameters);
    model.classifier->load_state(clf.at("state"));
    return model;
}

FitOutcome fit_score_model(const MetricTable& table, const FitOptions& opts) {
    if (opts.folds < 2) throw std::runtime_error("fit_score_model: folds must be >= 2");
    FitOutcome out;
    out.model.preproc = preprocess_fit(table);
    out.model.seed = opts.seed;
    out.model.schema_hash = schema_hash(table.schema);
    const Dataset data = preprocess_transform(out.model.preproc, table);
    out.labels = data.y;
    for (const auto& r : table.records) out.image_ids.push_back(r.image_id);

    const std::uint64_t seed_search = derive_seed(opts.seed, 1);
    const std::uint64_t seed_loocv = derive_seed(opts.seed, 2);
    const std::uint64_t seed_refit = derive_seed(opts.seed, 3);
    const std::uint64_t seed_nested = derive_seed(opts.seed, 4);

    const SearchOutcome search =
        search_hyperparameters(data, opts.kinds, opts.iterations, opts.folds, seed_search,
                               opts.threads);

    for (std::size_t ki = 0; ki < opts.kinds.size(); ++ki) {
        const std::string& kind = opts.kinds[ki];
        const auto found = search.best_per_kind.find(kind);
        if (found == search.best_per_kind.end()) continue;
        KindEvaluation eval;
        eval.search = found->second;
        eval.loocv_probs = fit_predict_loocv(data, kind, found->second.hyperparameters,
                                             derive_seed(seed_loocv, ki), opts.threads);
        eval.zfn_threshold = calibrate_zfn(eval.loocv_probs, data.y);
        out.per_kind[kind] = std::move(eval);
    }

    out.model.classifier_kind = search.best.kind;
    out.model.hyperparameters = search.best.hyperparameters;

    if (opts.nested_search) {
        // Leak-free variant: model selection re-run inside every
        // leave-one-out split.
        out.loocv_probs.resize(data.size());
        parallel_for(data.size(), opts.threads, [&](std::size_t i) {
            std::vector<std::size_t> keep;
            for (std::size_t j = 0; j < data.size(); ++j) {
                if (j != i) keep.push_back(j);
            }
            const Dataset train = subset(data, keep);
            const std::uint64_t rec_seed = derive_seed(seed_nested, i);
            const SearchOutcome inner = search_hyperparameters(
                train, opts.kinds, opts.iterations, opts.folds, derive_seed(rec_seed, 0), 1);
            const auto clf = fit_with_smote(inner.best.kind, inner.best.hyperparameters, train,
                                            derive_seed(rec_seed, 1));
            out.loocv_probs[i] = clf->predict_proba(data.x[i]);
        });
    } else {
        out.loocv_probs = out.per_kind.at(search.best.kind).loocv_probs;
    }

    out.model.classifier = fit_with_smote(search.best.kind, search.best.hyperparameters, data,
                                          seed_refit);

    std::vector<double> refit_probs(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        refit_probs[i] = out.model.classifier->predict_proba(data.x[i]);
    }
    const double refit_threshold = calibrate_zfn(refit_probs, data.y);
    if (opts.threshold_source == "refit") {
        out.model.zfn_threshold = refit_threshold;
    } else if (opts.threshold_source == "loocv") {
        // The refit clamp keeps the fitted model's zero-false-negative
        // guarantee exact when an abnormal record scores lower under the
        // refit model than under its leave-one-out model.
        out.model.zfn_threshold =
            std::min(calibrate_zfn(out.loocv_probs, data.y), refit_threshold);
    } else {
        throw std::runtime_error("fit_score_model: threshold_source must be loocv or refit");
    }
    return out;
}

}  // namespace zfn
