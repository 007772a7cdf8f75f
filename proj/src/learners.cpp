#include "tel/learners.hpp"

#include "tel/json_util.hpp"
#include "tel/random.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <stdexcept>

namespace tel {

using nlohmann::json;

namespace {

constexpr double kLogitGradientTolerance = 1e-6;
constexpr std::size_t kSmoMaxSweeps = 2000;
constexpr double kSmoMinStep = 1e-5;

// Most frequent label; lowest label on ties.
Label majority_label(std::span<const Label> labels) {
    std::map<Label, std::size_t> counts;
    for (auto y : labels) ++counts[y];
    Label best = 0;
    std::size_t best_count = 0;
    for (const auto& [label, count] : counts) {
        if (count > best_count) {
            best = label;
            best_count = count;
        }
    }
    return best;
}

std::size_t index_of(const LabelVector& sorted, Label y) {
    auto it = std::lower_bound(sorted.begin(), sorted.end(), y);
    return static_cast<std::size_t>(it - sorted.begin());
}

void require(bool condition, const std::string& message) {
    if (!condition) throw std::invalid_argument(message);
}

template <typename T>
T get_or(const json& j, const char* key, T fallback) {
    return j.contains(key) ? j.at(key).get<T>() : fallback;
}

std::size_t get_count(const json& j, const char* key, std::size_t fallback) {
    if (!j.contains(key)) return fallback;
    const auto& v = j.at(key);
    if (v.is_number_integer() && v.get<long long>() >= 0) return v.get<std::size_t>();
    if (v.is_number_float() && v.get<double>() >= 0 && std::floor(v.get<double>()) == v.get<double>()) {
        return static_cast<std::size_t>(v.get<double>());
    }
    throw std::invalid_argument(std::string("classifier spec: '") + key + "' must be a nonnegative integer");
}

} // namespace

// ---------------------------------------------------------------------------
// ClassifierSpec

std::string to_string(LearnerKind kind) {
    switch (kind) {
    case LearnerKind::knn: return "knn";
    case LearnerKind::tree: return "tree";
    case LearnerKind::logit: return "logit";
    case LearnerKind::svm: return "svm";
    }
    return "unknown";
}

LearnerKind learner_kind_from_string(const std::string& name) {
    std::string lower;
    for (char c : name) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "knn") return LearnerKind::knn;
    if (lower == "tree") return LearnerKind::tree;
    if (lower == "logit") return LearnerKind::logit;
    if (lower == "svm") return LearnerKind::svm;
    throw std::invalid_argument("unknown classifier kind '" + name + "'");
}

ClassifierSpec::ClassifierSpec(Params params) : params_(std::move(params)) { validate(); }

void ClassifierSpec::validate() const {
    std::visit(
        [](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, KnnParams>) {
                require(p.k >= 1, "knn: k must be >= 1");
            } else if constexpr (std::is_same_v<T, TreeParams>) {
                require(p.max_depth >= 1, "tree: max_depth must be >= 1");
                require(p.min_samples_split >= 2, "tree: min_samples_split must be >= 2");
            } else if constexpr (std::is_same_v<T, LogitParams>) {
                require(p.l2_penalty >= 0 && std::isfinite(p.l2_penalty), "logit: l2_penalty must be >= 0");
                require(p.max_iterations >= 1, "logit: max_iterations must be >= 1");
                require(p.learning_rate > 0 && std::isfinite(p.learning_rate), "logit: learning_rate must be > 0");
            } else {
                require(p.c > 0 && std::isfinite(p.c), "svm: C must be > 0");
                require(p.gamma > 0 && std::isfinite(p.gamma), "svm: gamma must be > 0");
                require(p.degree >= 1, "svm: degree must be >= 1");
                require(p.coef0 >= 0 && std::isfinite(p.coef0), "svm: coef0 must be >= 0");
                require(p.tolerance > 0 && std::isfinite(p.tolerance), "svm: tolerance must be > 0");
                require(p.max_passes >= 1, "svm: max_passes must be >= 1");
            }
        },
        params_);
}

json ClassifierSpec::to_json() const {
    return std::visit(
        [](const auto& p) -> json {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, KnnParams>) {
                return {{"kind", "knn"}, {"k", p.k}, {"distance", "euclidean"}};
            } else if constexpr (std::is_same_v<T, TreeParams>) {
                return {{"kind", "tree"},
                        {"max_depth", p.max_depth},
                        {"min_samples_split", p.min_samples_split},
                        {"criterion", "gini"}};
            } else if constexpr (std::is_same_v<T, LogitParams>) {
                return {{"kind", "logit"},
                        {"l2_penalty", p.l2_penalty},
                        {"max_iterations", p.max_iterations},
                        {"learning_rate", p.learning_rate}};
            } else {
                return {{"kind", "svm"},
                        {"kernel", p.kernel == KernelKind::poly ? "poly" : "rbf"},
                        {"C", p.c},
                        {"gamma", p.gamma},
                        {"degree", p.degree},
                        {"coef0", p.coef0},
                        {"tolerance", p.tolerance},
                        {"max_passes", p.max_passes}};
            }
        },
        params_);
}

ClassifierSpec ClassifierSpec::from_json(const json& j) {
    if (!j.is_object()) throw std::invalid_argument("classifier spec must be a JSON object");
    const auto kind = learner_kind_from_string(j.at("kind").get<std::string>());
    std::set<std::string> allowed{"kind"};
    Params params;
    switch (kind) {
    case LearnerKind::knn: {
        allowed.insert({"k", "distance"});
        if (get_or<std::string>(j, "distance", "euclidean") != "euclidean") {
            throw std::invalid_argument("knn: only euclidean distance is supported");
        }
        params = KnnParams{get_count(j, "k", KnnParams{}.k)};
        break;
    }
    case LearnerKind::tree: {
        allowed.insert({"max_depth", "min_samples_split", "criterion"});
        if (get_or<std::string>(j, "criterion", "gini") != "gini") {
            throw std::invalid_argument("tree: only the gini criterion is supported");
        }
        const TreeParams d;
        params = TreeParams{get_count(j, "max_depth", d.max_depth),
                            get_count(j, "min_samples_split", d.min_samples_split)};
        break;
    }
    case LearnerKind::logit: {
        allowed.insert({"l2_penalty", "max_iterations", "learning_rate"});
        const LogitParams d;
        params = LogitParams{get_or<double>(j, "l2_penalty", d.l2_penalty),
                             get_count(j, "max_iterations", d.max_iterations),
                             get_or<double>(j, "learning_rate", d.learning_rate)};
        break;
    }
    case LearnerKind::svm: {
        allowed.insert({"kernel", "C", "gamma", "degree", "coef0", "tolerance", "max_passes"});
        const SvmParams d;
        SvmParams p;
        const auto kernel = get_or<std::string>(j, "kernel", "rbf");
        if (kernel == "poly") {
            p.kernel = KernelKind::poly;
        } else if (kernel == "rbf") {
            p.kernel = KernelKind::rbf;
        } else {
            throw std::invalid_argument("svm: unknown kernel '" + kernel + "'");
        }
        p.c = get_or<double>(j, "C", d.c);
        p.gamma = get_or<double>(j, "gamma", d.gamma);
        p.degree = get_count(j, "degree", d.degree);
        p.coef0 = get_or<double>(j, "coef0", d.coef0);
        p.tolerance = get_or<double>(j, "tolerance", d.tolerance);
        p.max_passes = get_count(j, "max_passes", d.max_passes);
        params = p;
        break;
    }
    }
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) {
            throw std::invalid_argument("classifier spec: unknown key '" + key + "' for kind " + to_string(kind));
        }
    }
    return ClassifierSpec(std::move(params));
}

// ---------------------------------------------------------------------------
// Datasets

void VectorDataset::validate() const {
    if (static_cast<std::size_t>(features.rows()) != labels.size()) {
        throw std::invalid_argument("dataset has " + std::to_string(features.rows()) + " rows but " +
                                    std::to_string(labels.size()) + " labels");
    }
}

VectorDataset VectorDataset::subset(std::span<const std::size_t> rows) const {
    VectorDataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
    out.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = features.row(static_cast<Eigen::Index>(rows[i]));
        out.labels.push_back(labels.at(rows[i]));
    }
    return out;
}

LabelVector distinct_labels(std::span<const Label> labels) {
    LabelVector out(labels.begin(), labels.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

double accuracy(std::span<const Label> predicted, std::span<const Label> truth) {
    if (predicted.size() != truth.size()) throw std::invalid_argument("accuracy: length mismatch");
    if (truth.empty()) return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) hits += predicted[i] == truth[i] ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(truth.size());
}

// ---------------------------------------------------------------------------
// Standardizer

Standardizer Standardizer::fit(const Matrix& features) {
    Standardizer s;
    const auto n = static_cast<double>(features.rows());
    s.mean = features.colwise().mean().transpose();
    s.scale = Vector::Zero(features.cols());
    for (Eigen::Index c = 0; c < features.cols(); ++c) {
        const double var = (features.col(c).array() - s.mean(c)).square().sum() / n;
        const double sd = std::sqrt(var);
        // Near-constant columns would blow up rounding noise.
        if (sd > 1e-12 * std::max(1.0, std::abs(s.mean(c)))) s.scale(c) = 1.0 / sd;
    }
    return s;
}

Matrix Standardizer::apply(const Matrix& features) const {
    return (features.rowwise() - mean.transpose()) * scale.asDiagonal();
}

// ---------------------------------------------------------------------------
// KNN

namespace {

KnnModel fit_knn(const VectorDataset& data) { return KnnModel{data.features, data.labels}; }

LabelVector predict_knn(const KnnParams& params, const KnnModel& model, const LabelVector& classes,
                        const Matrix& x) {
    const std::size_t n = model.labels.size();
    const std::size_t k = std::min(params.k, n);
    LabelVector out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    std::vector<std::pair<double, std::size_t>> dist(n);
    std::vector<std::size_t> votes(classes.size());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        for (std::size_t i = 0; i < n; ++i) {
            dist[i] = {(model.features.row(static_cast<Eigen::Index>(i)) - x.row(r)).squaredNorm(), i};
        }
        // (distance, index) ordering: equal distances go to the lower sample index.
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
        std::fill(votes.begin(), votes.end(), 0);
        for (std::size_t i = 0; i < k; ++i) ++votes[index_of(classes, model.labels[dist[i].second])];
        std::size_t best = 0;
        for (std::size_t c = 1; c < votes.size(); ++c) {
            if (votes[c] > votes[best]) best = c;
        }
        out.push_back(classes[best]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// TREE (CART, Gini)

class TreeBuilder {
public:
    TreeBuilder(const TreeParams& params, const VectorDataset& data, const LabelVector& classes)
        : params_(params), data_(data), classes_(classes) {}

    TreeModel build() {
        std::vector<std::size_t> all(data_.size());
        std::iota(all.begin(), all.end(), 0);
        grow(all, 0);
        return TreeModel{std::move(nodes_)};
    }

private:
    struct Split {
        int feature = -1;
        double threshold = 0.0;
        double impurity = 0.0; // sum over children of n_c * gini_c
    };

    // n * gini = n - sum_k count_k^2 / n
    static double weighted_gini(const std::vector<double>& counts, double n) {
        if (n == 0) return 0.0;
        double sq = 0.0;
        for (double c : counts) sq += c * c;
        return n - sq / n;
    }

    std::vector<double> class_counts(std::span<const std::size_t> rows) const {
        std::vector<double> counts(classes_.size(), 0.0);
        for (auto i : rows) counts[index_of(classes_, data_.labels[i])] += 1.0;
        return counts;
    }

    Split best_split(std::span<const std::size_t> rows) const {
        Split best;
        const auto n = static_cast<double>(rows.size());
        const std::vector<double> total = class_counts(rows);
        std::vector<std::size_t> order(rows.begin(), rows.end());
        for (Eigen::Index f = 0; f < data_.features.cols(); ++f) {
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return data_.features(static_cast<Eigen::Index>(a), f) < data_.features(static_cast<Eigen::Index>(b), f);
            });
            std::vector<double> left(classes_.size(), 0.0);
            for (std::size_t i = 0; i + 1 < order.size(); ++i) {
                left[index_of(classes_, data_.labels[order[i]])] += 1.0;
                const double a = data_.features(static_cast<Eigen::Index>(order[i]), f);
                const double b = data_.features(static_cast<Eigen::Index>(order[i + 1]), f);
                if (!(a < b)) continue;
                std::vector<double> right(classes_.size());
                for (std::size_t c = 0; c < right.size(); ++c) right[c] = total[c] - left[c];
                const double nl = static_cast<double>(i + 1);
                const double impurity = weighted_gini(left, nl) + weighted_gini(right, n - nl);
                if (best.feature < 0 || impurity < best.impurity) {
                    double mid = a + (b - a) / 2.0;
                    if (!(mid < b)) mid = a;
                    best = Split{static_cast<int>(f), mid, impurity};
                }
            }
        }
        return best;
    }

    int grow(const std::vector<std::size_t>& rows, std::size_t depth) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        LabelVector labels;
        for (auto i : rows) labels.push_back(data_.labels[i]);
        nodes_[id].label = majority_label(labels);
        const bool pure = distinct_labels(labels).size() <= 1;
        if (pure || depth >= params_.max_depth || rows.size() < params_.min_samples_split) return id;
        const Split split = best_split(rows);
        if (split.feature < 0) return id;
        std::vector<std::size_t> left_rows;
        std::vector<std::size_t> right_rows;
        for (auto i : rows) {
            (data_.features(static_cast<Eigen::Index>(i), split.feature) <= split.threshold ? left_rows : right_rows)
                .push_back(i);
        }
        const int left = grow(left_rows, depth + 1);
        const int right = grow(right_rows, depth + 1);
        nodes_[id].feature = split.feature;
        nodes_[id].threshold = split.threshold;
        nodes_[id].left = left;
        nodes_[id].right = right;
        return id;
    }

    const TreeParams& params_;
    const VectorDataset& data_;
    const LabelVector& classes_;
    std::vector<TreeNode> nodes_;
};

LabelVector predict_tree(const TreeModel& model, const Matrix& x) {
    LabelVector out;
    out.reserve(static_cast<std::size_t>(x.rows()));
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        int node = 0;
        while (model.nodes[node].feature >= 0) {
            const auto& nd = model.nodes[node];
            node = x(r, nd.feature) <= nd.threshold ? nd.left : nd.right;
        }
        out.push_back(model.nodes[node].label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// LOGIT

LogitModel fit_logit(const LogitParams& params, const VectorDataset& data, const LabelVector& classes) {
    LogitModel model;
    model.standardizer = Standardizer::fit(data.features);
    const Matrix x = model.standardizer.apply(data.features);
    std::vector<std::size_t> targets;
    for (auto y : data.labels) targets.push_back(index_of(classes, y));
    const auto k = static_cast<Eigen::Index>(classes.size());
    model.weights = Matrix::Zero(k, x.cols());
    model.bias = Vector::Zero(k);
    for (model.iterations = 0; model.iterations < params.max_iterations; ++model.iterations) {
        const auto obj = logit_objective(model.weights, model.bias, x, targets, params.l2_penalty);
        const double grad_norm = std::sqrt(obj.grad_weights.squaredNorm() + obj.grad_bias.squaredNorm());
        if (grad_norm <= kLogitGradientTolerance) break;
        model.weights -= params.learning_rate * obj.grad_weights;
        model.bias -= params.learning_rate * obj.grad_bias;
    }
    return model;
}

LabelVector predict_logit(const LogitModel& model, const LabelVector& classes, const Matrix& features) {
    const Matrix scores = (model.standardizer.apply(features) * model.weights.transpose()).rowwise() +
                          model.bias.transpose();
    LabelVector out;
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c) {
            if (scores(r, c) > scores(r, best)) best = c;
        }
        out.push_back(classes[static_cast<std::size_t>(best)]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// SVM (simplified SMO, one-vs-rest)

SvmBinary smo(const SvmParams& p, const Matrix& x, const Matrix& gram, const Vector& y, std::uint64_t seed) {
    const auto n = x.rows();
    Vector alpha = Vector::Zero(n);
    double b = 0.0;
    Rng rng(seed);
    auto f = [&](Eigen::Index i) { return gram.col(i).dot(alpha.cwiseProduct(y)) + b; };

    std::size_t passes = 0;
    std::size_t sweeps = 0;
    while (passes < p.max_passes && sweeps < kSmoMaxSweeps) {
        ++sweeps;
        std::size_t changed = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double ei = f(i) - y(i);
            if (!((y(i) * ei < -p.tolerance && alpha(i) < p.c) || (y(i) * ei > p.tolerance && alpha(i) > 0))) {
                continue;
            }
            auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(n - 1)));
            if (j >= i) ++j;
            const double ej = f(j) - y(j);
            const double ai_old = alpha(i);
            const double aj_old = alpha(j);
            double lo;
            double hi;
            if (y(i) != y(j)) {
                lo = std::max(0.0, aj_old - ai_old);
                hi = std::min(p.c, p.c + aj_old - ai_old);
            } else {
                lo = std::max(0.0, ai_old + aj_old - p.c);
                hi = std::min(p.c, ai_old + aj_old);
            }
            if (lo >= hi) continue;
            const double eta = 2.0 * gram(i, j) - gram(i, i) - gram(j, j);
            if (eta >= 0) continue;
            double aj = std::clamp(aj_old - y(j) * (ei - ej) / eta, lo, hi);
            if (std::abs(aj - aj_old) < kSmoMinStep) continue;
            const double ai = std::clamp(ai_old + y(i) * y(j) * (aj_old - aj), 0.0, p.c);
            alpha(i) = ai;
            alpha(j) = aj;
            const double b1 = b - ei - y(i) * (ai - ai_old) * gram(i, i) - y(j) * (aj - aj_old) * gram(i, j);
            const double b2 = b - ej - y(i) * (ai - ai_old) * gram(i, j) - y(j) * (aj - aj_old) * gram(j, j);
            if (ai > 0 && ai < p.c) {
                b = b1;
            } else if (aj > 0 && aj < p.c) {
                b = b2;
            } else {
                b = (b1 + b2) / 2.0;
            }
            ++changed;
        }
        passes = changed == 0 ? passes + 1 : 0;
    }

    SvmBinary out;
    out.bias = b;
    out.passes = sweeps;
    out.dual_balance = alpha.dot(y);
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (alpha(i) > 0) support.push_back(i);
    }
    const auto m = static_cast<Eigen::Index>(support.size());
    out.support_vectors.resize(m, x.cols());
    out.alpha.resize(m);
    out.targets.resize(m);
    for (Eigen::Index s = 0; s < m; ++s) {
        out.support_vectors.row(s) = x.row(support[static_cast<std::size_t>(s)]);
        out.alpha(s) = alpha(support[static_cast<std::size_t>(s)]);
        out.targets(s) = y(support[static_cast<std::size_t>(s)]);
    }
    return out;
}

SvmModel fit_svm(const SvmParams& p, const VectorDataset& data, const LabelVector& classes, std::uint64_t seed) {
    SvmModel model;
    model.standardizer = Standardizer::fit(data.features);
    const Matrix x = model.standardizer.apply(data.features);
    const auto n = x.rows();
    Matrix gram(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j <= i; ++j) {
            gram(i, j) = gram(j, i) = kernel_value(p, x.row(i).transpose(), x.row(j).transpose());
        }
    }
    for (std::size_t c = 0; c < classes.size(); ++c) {
        Vector y(n);
        for (Eigen::Index i = 0; i < n; ++i) y(i) = data.labels[static_cast<std::size_t>(i)] == classes[c] ? 1.0 : -1.0;
        model.machines.push_back(smo(p, x, gram, y, derive_seed(seed, c)));
    }
    return model;
}

LabelVector predict_svm(const SvmParams& p, const SvmModel& model, const LabelVector& classes,
                        const Matrix& features) {
    const Matrix x = model.standardizer.apply(features);
    LabelVector out;
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < model.machines.size(); ++c) {
            const auto& m = model.machines[c];
            double score = m.bias;
            for (Eigen::Index s = 0; s < m.alpha.size(); ++s) {
                score += m.alpha(s) * m.targets(s) * kernel_value(p, m.support_vectors.row(s).transpose(), x.row(r).transpose());
            }
            if (score > best_score) {
                best_score = score;
                best = c;
            }
        }
        out.push_back(classes[best]);
    }
    return out;
}

} // namespace

std::size_t TreeModel::depth() const {
    std::vector<std::size_t> level(nodes.size(), 0);
    std::size_t deepest = 0;
    // Children are always appended after their parent.
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        deepest = std::max(deepest, level[i]);
        if (nodes[i].feature >= 0) {
            level[static_cast<std::size_t>(nodes[i].left)] = level[i] + 1;
            level[static_cast<std::size_t>(nodes[i].right)] = level[i] + 1;
        }
    }
    return deepest;
}

LogitObjective logit_objective(const Matrix& weights, const Vector& bias, const Matrix& features,
                               std::span<const std::size_t> targets, double l2_penalty) {
    const auto n = features.rows();
    if (static_cast<std::size_t>(n) != targets.size()) throw std::invalid_argument("logit_objective: target count");
    Matrix scores = (features * weights.transpose()).rowwise() + bias.transpose();
    LogitObjective out;
    Matrix residual = Matrix::Zero(n, weights.rows());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mx = scores.row(r).maxCoeff();
        const Eigen::RowVectorXd e = (scores.row(r).array() - mx).exp().matrix();
        const double z = e.sum();
        const auto t = static_cast<Eigen::Index>(targets[static_cast<std::size_t>(r)]);
        loss -= scores(r, t) - mx - std::log(z);
        residual.row(r) = e / z;
        residual(r, t) -= 1.0;
    }
    const double inv_n = n > 0 ? 1.0 / static_cast<double>(n) : 0.0;
    out.loss = loss * inv_n + 0.5 * l2_penalty * weights.squaredNorm();
    out.grad_weights = residual.transpose() * features * inv_n + l2_penalty * weights;
    out.grad_bias = residual.colwise().sum().transpose() * inv_n;
    return out;
}

double kernel_value(const SvmParams& p, const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
    if (p.kernel == KernelKind::poly) {
        return std::pow(p.gamma * a.dot(b) + p.coef0, static_cast<double>(p.degree));
    }
    return std::exp(-p.gamma * (a - b).squaredNorm());
}

// ---------------------------------------------------------------------------
// TrainedModel, fit, predict

TrainedModel::TrainedModel(ClassifierSpec spec, LabelVector class_labels, std::size_t dim, Params params)
    : spec_(std::move(spec)), class_labels_(std::move(class_labels)), dim_(dim), params_(std::move(params)) {
    if (class_labels_.empty()) throw std::invalid_argument("trained model needs at least one class label");
    if (params_.index() != spec_.params().index()) throw std::invalid_argument("trained model kind does not match spec");
}

TrainedModel fit(const ClassifierSpec& spec, const VectorDataset& data, std::uint64_t seed) {
    data.validate();
    if (data.size() == 0) throw std::invalid_argument("fit: empty dataset");
    if (!data.features.allFinite()) throw std::domain_error("fit: non-finite features");
    LabelVector classes = distinct_labels(data.labels);
    if (spec.needs_two_classes()) {
        if (data.size() < 2) throw std::invalid_argument("fit: need at least 2 samples");
        if (classes.size() < 2) {
            throw std::invalid_argument("fit: " + to_string(spec.kind()) + " needs at least 2 classes, data has 1");
        }
    }
    TrainedModel::Params params = std::visit(
        [&](const auto& p) -> TrainedModel::Params {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, KnnParams>) {
                return fit_knn(data);
            } else if constexpr (std::is_same_v<T, TreeParams>) {
                return TreeBuilder(p, data, classes).build();
            } else if constexpr (std::is_same_v<T, LogitParams>) {
                return fit_logit(p, data, classes);
            } else {
                return fit_svm(p, data, classes, seed);
            }
        },
        spec.params());
    return TrainedModel(spec, std::move(classes), data.dim(), std::move(params));
}

LabelVector predict(const TrainedModel& model, const Matrix& features) {
    if (features.rows() == 0) return {};
    if (static_cast<std::size_t>(features.cols()) != model.dim()) {
        throw std::invalid_argument("predict: features have width " + std::to_string(features.cols()) +
                                    ", model expects " + std::to_string(model.dim()));
    }
    const auto& classes = model.class_labels();
    switch (model.spec().kind()) {
    case LearnerKind::knn: return predict_knn(model.spec().as<KnnParams>(), model.as<KnnModel>(), classes, features);
    case LearnerKind::tree: return predict_tree(model.as<TreeModel>(), features);
    case LearnerKind::logit: return predict_logit(model.as<LogitModel>(), classes, features);
    case LearnerKind::svm: return predict_svm(model.spec().as<SvmParams>(), model.as<SvmModel>(), classes, features);
    }
    return {};
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json standardizer_to_json(const Standardizer& s) {
    return {{"mean", vector_to_json(s.mean)}, {"scale", vector_to_json(s.scale)}};
}

Standardizer standardizer_from_json(const json& j) {
    return Standardizer{vector_from_json(j.at("mean")), vector_from_json(j.at("scale"))};
}

} // namespace

json TrainedModel::to_json() const {
    json params = std::visit(
        [](const auto& m) -> json {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, KnnModel>) {
                return {{"features", matrix_to_json(m.features)}, {"labels", m.labels}};
            } else if constexpr (std::is_same_v<T, TreeModel>) {
                json nodes = json::array();
                for (const auto& n : m.nodes) {
                    nodes.push_back({{"feature", n.feature},
                                     {"threshold", n.threshold},
                                     {"left", n.left},
                                     {"right", n.right},
                                     {"label", n.label}});
                }
                return {{"nodes", std::move(nodes)}};
            } else if constexpr (std::is_same_v<T, LogitModel>) {
                return {{"standardizer", standardizer_to_json(m.standardizer)},
                        {"weights", matrix_to_json(m.weights)},
                        {"bias", vector_to_json(m.bias)},
                        {"iterations", m.iterations}};
            } else {
                json machines = json::array();
                for (const auto& b : m.machines) {
                    machines.push_back({{"support_vectors", matrix_to_json(b.support_vectors)},
                                        {"alpha", vector_to_json(b.alpha)},
                                        {"targets", vector_to_json(b.targets)},
                                        {"bias", b.bias},
                                        {"passes", b.passes},
                                        {"dual_balance", b.dual_balance}});
                }
                return {{"standardizer", standardizer_to_json(m.standardizer)}, {"machines", std::move(machines)}};
            }
        },
        params_);
    return {{"spec", spec_.to_json()}, {"class_labels", class_labels_}, {"dim", dim_}, {"params", std::move(params)}};
}

TrainedModel TrainedModel::from_json(const json& j) {
    ClassifierSpec spec = ClassifierSpec::from_json(j.at("spec"));
    auto classes = j.at("class_labels").get<LabelVector>();
    const auto dim = j.at("dim").get<std::size_t>();
    const json& p = j.at("params");
    Params params;
    switch (spec.kind()) {
    case LearnerKind::knn:
        params = KnnModel{matrix_from_json(p.at("features")), p.at("labels").get<LabelVector>()};
        break;
    case LearnerKind::tree: {
        TreeModel m;
        for (const auto& n : p.at("nodes")) {
            m.nodes.push_back(TreeNode{n.at("feature").get<int>(), n.at("threshold").get<double>(),
                                       n.at("left").get<int>(), n.at("right").get<int>(), n.at("label").get<Label>()});
        }
        for (const auto& n : m.nodes) {
            const auto count = static_cast<int>(m.nodes.size());
            if (n.feature >= 0 && (n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count ||
                                   static_cast<std::size_t>(n.feature) >= dim)) {
                throw std::invalid_argument("tree model: malformed node");
            }
        }
        if (m.nodes.empty()) throw std::invalid_argument("tree model: no nodes");
        params = std::move(m);
        break;
    }
    case LearnerKind::logit:
        params = LogitModel{standardizer_from_json(p.at("standardizer")), matrix_from_json(p.at("weights")),
                            vector_from_json(p.at("bias")), p.at("iterations").get<std::size_t>()};
        break;
    case LearnerKind::svm: {
        SvmModel m;
        m.standardizer = standardizer_from_json(p.at("standardizer"));
        for (const auto& b : p.at("machines")) {
            m.machines.push_back(SvmBinary{matrix_from_json(b.at("support_vectors")), vector_from_json(b.at("alpha")),
                                           vector_from_json(b.at("targets")), b.at("bias").get<double>(),
                                           b.at("passes").get<std::size_t>(), b.at("dual_balance").get<double>()});
        }
        if (m.machines.size() != classes.size()) throw std::invalid_argument("svm model: machine count mismatch");
        params = std::move(m);
        break;
    }
    }
    return TrainedModel(std::move(spec), std::move(classes), dim, std::move(params));
}

// ---------------------------------------------------------------------------
// Cross-validation

std::vector<std::vector<std::size_t>> make_folds(std::size_t samples, std::size_t folds, std::uint64_t seed) {
    if (folds < 2) throw std::invalid_argument("cross-validation needs at least 2 folds");
    if (folds > samples) {
        throw std::invalid_argument("cross-validation: " + std::to_string(folds) + " folds exceed " +
                                    std::to_string(samples) + " samples");
    }
    std::vector<std::size_t> perm(samples);
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(seed);
    for (std::size_t i = samples; i-- > 1;) std::swap(perm[i], perm[rng.below(i + 1)]);
    std::vector<std::vector<std::size_t>> out(folds);
    for (std::size_t f = 0; f < folds; ++f) {
        out[f].assign(perm.begin() + static_cast<std::ptrdiff_t>(f * samples / folds),
                      perm.begin() + static_cast<std::ptrdiff_t>((f + 1) * samples / folds));
    }
    return out;
}

GridSearchResult grid_search_cv_scored(std::span<const ClassifierSpec> grid, const VectorDataset& data,
                                       std::size_t folds, std::uint64_t seed) {
    if (grid.empty()) throw std::invalid_argument("grid_search_cv: empty grid");
    data.validate();
    const auto fold_rows = make_folds(data.size(), folds, seed);
    std::vector<VectorDataset> train_sets;
    std::vector<VectorDataset> valid_sets;
    for (std::size_t f = 0; f < folds; ++f) {
        std::vector<std::size_t> train;
        for (std::size_t g = 0; g < folds; ++g) {
            if (g != f) train.insert(train.end(), fold_rows[g].begin(), fold_rows[g].end());
        }
        train_sets.push_back(data.subset(train));
        valid_sets.push_back(data.subset(fold_rows[f]));
    }

    GridSearchResult result;
    for (std::size_t s = 0; s < grid.size(); ++s) {
        double total = 0.0;
        for (std::size_t f = 0; f < folds; ++f) {
            const auto& train = train_sets[f];
            const auto& valid = valid_sets[f];
            const auto classes = distinct_labels(train.labels);
            if (grid[s].needs_two_classes() && classes.size() < 2) {
                // A single-class training fold can only ever predict that class.
                const LabelVector constant(valid.size(), classes.front());
                total += accuracy(constant, valid.labels);
                continue;
            }
            const auto model = fit(grid[s], train, derive_seed(seed, f));
            total += accuracy(predict(model, valid.features), valid.labels);
        }
        result.mean_accuracy.push_back(total / static_cast<double>(folds));
        if (result.mean_accuracy[s] > result.mean_accuracy[result.best_index]) result.best_index = s;
    }
    return result;
}

ClassifierSpec grid_search_cv(std::span<const ClassifierSpec> grid, const VectorDataset& data, std::size_t folds,
                              std::uint64_t seed) {
    return grid[grid_search_cv_scored(grid, data, folds, seed).best_index];
}

} // namespace tel
