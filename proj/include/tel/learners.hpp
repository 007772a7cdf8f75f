#pragma once

#include "tel/tensor.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

namespace tel {

using Label = int;
using LabelVector = std::vector<Label>;

enum class LearnerKind { knn, tree, logit, svm };
enum class KernelKind { poly, rbf };

std::string to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& name);

struct KnnParams {
    std::size_t k = 1;
    friend bool operator==(const KnnParams&, const KnnParams&) = default;
};

struct TreeParams {
    std::size_t max_depth = 8;
    std::size_t min_samples_split = 2;
    friend bool operator==(const TreeParams&, const TreeParams&) = default;
};

struct LogitParams {
    double l2_penalty = 1e-3;
    std::size_t max_iterations = 2000;
    double learning_rate = 0.5;
    friend bool operator==(const LogitParams&, const LogitParams&) = default;
};

// Polynomial kernel is (gamma <x,y> + coef0)^degree; RBF is exp(-gamma ||x-y||^2).
struct SvmParams {
    KernelKind kernel = KernelKind::rbf;
    double c = 1.0;
    double gamma = 0.5;
    std::size_t degree = 3;
    double coef0 = 1.0;
    double tolerance = 1e-3;
    std::size_t max_passes = 10;
    friend bool operator==(const SvmParams&, const SvmParams&) = default;
};

// A base learner kind with its hyperparameters.
class ClassifierSpec {
public:
    using Params = std::variant<KnnParams, TreeParams, LogitParams, SvmParams>;

    ClassifierSpec() : params_(KnnParams{}) {}
    ClassifierSpec(Params params); // NOLINT(google-explicit-constructor)
    template <typename T>
        requires(std::is_same_v<T, KnnParams> || std::is_same_v<T, TreeParams> || std::is_same_v<T, LogitParams> ||
                 std::is_same_v<T, SvmParams>)
    ClassifierSpec(T params) : ClassifierSpec(Params(std::move(params))) {} // NOLINT(google-explicit-constructor)

    LearnerKind kind() const { return static_cast<LearnerKind>(params_.index()); }
    const Params& params() const { return params_; }

    template <typename T>
    const T& as() const {
        return std::get<T>(params_);
    }

    // KNN accepts single-class data; the others need two classes.
    bool needs_two_classes() const { return kind() != LearnerKind::knn; }

    // {"kind":"svm","kernel":"poly","C":1,...}; missing keys take defaults.
    nlohmann::json to_json() const;
    static ClassifierSpec from_json(const nlohmann::json& j);

    friend bool operator==(const ClassifierSpec&, const ClassifierSpec&) = default;

private:
    void validate() const;
    Params params_;
};

struct VectorDataset {
    Matrix features; // samples x dim
    LabelVector labels;

    std::size_t size() const { return labels.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

    // Throws if rows and labels disagree.
    void validate() const;
    VectorDataset subset(std::span<const std::size_t> rows) const;
};

// Sorted distinct labels.
LabelVector distinct_labels(std::span<const Label> labels);

struct KnnModel {
    Matrix features;
    LabelVector labels;
};

struct TreeNode {
    // Leaf when feature < 0.
    int feature = -1;
    double threshold = 0.0;
    int left = -1;  // features[feature] <= threshold
    int right = -1; // features[feature] > threshold
    Label label = 0;
};

struct TreeModel {
    std::vector<TreeNode> nodes; // nodes[0] is the root

    std::size_t depth() const;
};

// Per-feature z-scoring; constant features map to 0.
struct Standardizer {
    Vector mean;
    Vector scale; // 1 / stddev, 0 for constant features

    static Standardizer fit(const Matrix& features);
    Matrix apply(const Matrix& features) const;
};

struct LogitModel {
    Standardizer standardizer;
    Matrix weights; // classes x dim
    Vector bias;    // classes
    std::size_t iterations = 0;
};

// One-vs-rest binary problem for class_labels[index].
struct SvmBinary {
    Matrix support_vectors; // rows, standardized
    Vector alpha;           // dual coefficients, 0 < alpha <= C
    Vector targets;         // +1 / -1
    double bias = 0.0;
    std::size_t passes = 0;
    // sum_i alpha_i y_i over all training points, support or not.
    double dual_balance = 0.0;
};

struct SvmModel {
    Standardizer standardizer;
    std::vector<SvmBinary> machines; // one per class label
};

class TrainedModel {
public:
    using Params = std::variant<KnnModel, TreeModel, LogitModel, SvmModel>;

    TrainedModel(ClassifierSpec spec, LabelVector class_labels, std::size_t dim, Params params);

    const ClassifierSpec& spec() const { return spec_; }
    const LabelVector& class_labels() const { return class_labels_; }
    std::size_t dim() const { return dim_; }
    const Params& params() const { return params_; }

    template <typename T>
    const T& as() const {
        return std::get<T>(params_);
    }

    nlohmann::json to_json() const;
    static TrainedModel from_json(const nlohmann::json& j);

private:
    ClassifierSpec spec_;
    LabelVector class_labels_;
    std::size_t dim_ = 0;
    Params params_;
};

TrainedModel fit(const ClassifierSpec& spec, const VectorDataset& data, std::uint64_t seed);

LabelVector predict(const TrainedModel& model, const Matrix& features);

// Fraction of matching entries; 0 for empty input.
double accuracy(std::span<const Label> predicted, std::span<const Label> truth);

// Mean CE + (l2/2)||W||^2 and its gradient w.r.t. [W | b], for already
// standardized features. `targets` holds class indices in [0, classes).
struct LogitObjective {
    double loss = 0.0;
    Matrix grad_weights;
    Vector grad_bias;
};
LogitObjective logit_objective(const Matrix& weights, const Vector& bias, const Matrix& features,
                               std::span<const std::size_t> targets, double l2_penalty);

double kernel_value(const SvmParams& params, const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

// Fold assignment: seeded shuffle, then contiguous blocks.
std::vector<std::vector<std::size_t>> make_folds(std::size_t samples, std::size_t folds, std::uint64_t seed);

struct GridSearchResult {
    std::size_t best_index = 0;
    std::vector<double> mean_accuracy; // per grid entry
};

// Picks the grid entry with highest mean validation accuracy; earliest wins ties.
GridSearchResult grid_search_cv_scored(std::span<const ClassifierSpec> grid, const VectorDataset& data,
                                       std::size_t folds, std::uint64_t seed);

ClassifierSpec grid_search_cv(std::span<const ClassifierSpec> grid, const VectorDataset& data, std::size_t folds,
                              std::uint64_t seed);

} // namespace tel
