#pragma once

#include "tel/factorizations.hpp"
#include "tel/hosvd.hpp"
#include "tel/learners.hpp"
#include "tel/tensor.hpp"

#include <json.hpp>

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

namespace tel {

struct LabeledTensorDataset {
    std::vector<DenseTensor> samples;
    LabelVector labels;

    std::size_t size() const { return samples.size(); }
    const Shape& shape() const;
    // max label + 1
    std::size_t class_count() const;

    // Equal lengths, identical shapes, labels >= 0.
    void validate() const;
    LabeledTensorDataset subset(std::span<const std::size_t> indices) const;
    // samples x prod(shape), each row the column-major flattening of a sample.
    Matrix vectorized() const;
};

// (mode n, component r): which factor column a base learner sees.
struct FactorKey {
    std::size_t mode = 0;
    std::size_t component = 0;
    friend auto operator<=>(const FactorKey&, const FactorKey&) = default;
};

// Keys in training order: mode-major, then component.
std::vector<FactorKey> factor_keys(const MultilinearRank& rank);

// Dataset (n, r) row m is column r of sample m's mode-n factor; labels copied.
std::map<FactorKey, VectorDataset> regroup(std::span<const HosvdFactors> decompositions, std::span<const Label> labels);

struct VoteTally {
    LabelVector labels;         // candidate classes, ascending
    std::vector<double> counts; // votes (or summed weights) per class
    Label winner = 0;

    double total() const;
    double count_for(Label label) const;
};

// Majority vote over `classes`; ties go to the lowest label. Optional
// per-voter weights default to 1. Votes outside `classes` are rejected.
VoteTally majority_vote(std::span<const Label> votes, std::span<const Label> classes,
                        std::span<const double> weights = {});

struct Prediction {
    Label label = 0;
    VoteTally tally;
};

struct BaseLearner {
    FactorKey key;
    TrainedModel model;
};

struct TelviModel {
    MultilinearRank rank; // effective, after clamping
    Shape shape;          // training sample shape
    std::vector<BaseLearner> base_models;
    LabelVector class_labels;
    ClassifierSpec base_spec;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
    static TelviModel from_json(const nlohmann::json& j);
};

struct ExecutionOptions {
    // 0 picks the hardware concurrency. Results do not depend on this.
    std::size_t threads = 1;
    // Train base learners in reverse key order; used to check schedule independence.
    bool reverse_order = false;
};

// Seed handed to the base learner at `flat_index` in factor_keys order.
std::uint64_t learner_seed(std::uint64_t master_seed, std::size_t flat_index);

// Stage 1: HOSVD of every sample at `rank`.
std::vector<HosvdFactors> decompose_all(std::span<const DenseTensor> samples, const MultilinearRank& rank,
                                        const ExecutionOptions& options = {});

// Stages 1-3.
TelviModel telvi_fit(const LabeledTensorDataset& data, const MultilinearRank& rank, const ClassifierSpec& base,
                     std::uint64_t seed, const ExecutionOptions& options = {});

// Stages 3 only, from already regrouped factor datasets.
TelviModel telvi_fit_regrouped(const std::map<FactorKey, VectorDataset>& datasets, const MultilinearRank& rank,
                               const Shape& shape, const ClassifierSpec& base, std::uint64_t seed,
                               const ExecutionOptions& options = {});

// Grid search for a shared base spec: each grid entry is scored by the
// ensemble's mean validation accuracy over `folds` folds of the samples behind
// the regrouped datasets (same fold scheme as grid_search_cv). Earliest entry
// wins ties.
GridSearchResult telvi_grid_search_cv(std::span<const ClassifierSpec> grid,
                                      const std::map<FactorKey, VectorDataset>& datasets, const MultilinearRank& rank,
                                      const Shape& shape, std::size_t folds, std::uint64_t seed,
                                      const ExecutionOptions& options = {});

// Per-base-model votes for x, in base_models order.
LabelVector telvi_votes(const TelviModel& model, const DenseTensor& x);

// Stage 4.
Prediction telvi_predict(const TelviModel& model, const DenseTensor& x);

struct BaggingModel {
    PcaModel pca;
    std::vector<TrainedModel> estimators;
    std::vector<std::uint64_t> bootstrap_seeds;
    LabelVector class_labels;
    Shape shape;

    nlohmann::json to_json() const;
    static BaggingModel from_json(const nlohmann::json& j);
};

// M indices drawn uniformly with replacement.
std::vector<std::size_t> bootstrap_indices(std::size_t count, std::uint64_t seed);

BaggingModel bagging_fit(const LabeledTensorDataset& data, std::size_t n_estimators, std::size_t pca_dim,
                         const ClassifierSpec& base, std::uint64_t seed);

LabelVector bagging_votes(const BaggingModel& model, const DenseTensor& x);

Prediction bagging_predict(const BaggingModel& model, const DenseTensor& x);

// Probability that a majority of n_voters independent voters, each wrong with
// probability p, is wrong: sum_{n=ceil(N/2)}^{N} C(N,n) p^n (1-p)^(N-n).
double majority_error_probability(double p, std::size_t n_voters);

} // namespace tel
