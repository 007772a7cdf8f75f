#include "tel/ensemble.hpp"

#include "tel/json_util.hpp"
#include "tel/random.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <optional>
#include <stdexcept>
#include <thread>

namespace tel {

using nlohmann::json;

namespace {

// Runs body(i) for i in [0, count) on up to `threads` workers. Each index
// writes only its own slot, so results match a sequential loop. The first
// exception by index is rethrown.
template <typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body body) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, count);
    std::vector<std::exception_ptr> errors(count);
    auto run = [&](std::size_t i) {
        try {
            body(i);
        } catch (...) {
            errors[i] = std::current_exception();
        }
    };
    if (threads <= 1) {
        for (std::size_t i = 0; i < count; ++i) run(i);
    } else {
        std::vector<std::thread> workers;
        for (std::size_t t = 0; t < threads; ++t) {
            workers.emplace_back([&, t] {
                for (std::size_t i = t; i < count; i += threads) run(i);
            });
        }
        for (auto& w : workers) w.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

void require_trainable(const LabeledTensorDataset& data, const char* who) {
    data.validate();
    if (data.size() < 2) throw std::invalid_argument(std::string(who) + ": need at least 2 samples");
    if (distinct_labels(data.labels).size() < 2) {
        throw std::invalid_argument(std::string(who) + ": need at least 2 classes, data has 1");
    }
}

Matrix row_of(const Vector& v) { return v.transpose(); }

} // namespace

// ---------------------------------------------------------------------------
// LabeledTensorDataset

const Shape& LabeledTensorDataset::shape() const {
    if (samples.empty()) throw std::logic_error("empty dataset has no shape");
    return samples.front().shape();
}

std::size_t LabeledTensorDataset::class_count() const {
    if (labels.empty()) return 0;
    return static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
}

void LabeledTensorDataset::validate() const {
    if (samples.size() != labels.size()) {
        throw std::invalid_argument("dataset has " + std::to_string(samples.size()) + " samples but " +
                                    std::to_string(labels.size()) + " labels");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (samples[i].shape() != samples.front().shape()) {
            throw std::invalid_argument("sample " + std::to_string(i) + " has shape " +
                                        shape_to_string(samples[i].shape()) + ", expected " +
                                        shape_to_string(samples.front().shape()));
        }
        if (labels[i] < 0) throw std::invalid_argument("negative label at sample " + std::to_string(i));
    }
}

LabeledTensorDataset LabeledTensorDataset::subset(std::span<const std::size_t> indices) const {
    LabeledTensorDataset out;
    for (auto i : indices) {
        out.samples.push_back(samples.at(i));
        out.labels.push_back(labels.at(i));
    }
    return out;
}

Matrix LabeledTensorDataset::vectorized() const {
    Matrix out(static_cast<Eigen::Index>(samples.size()), static_cast<Eigen::Index>(shape_size(shape())));
    for (std::size_t i = 0; i < samples.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = samples[i].flatten();
    return out;
}

// ---------------------------------------------------------------------------
// Regrouping and voting

std::vector<FactorKey> factor_keys(const MultilinearRank& rank) {
    std::vector<FactorKey> keys;
    for (std::size_t n = 0; n < rank.order(); ++n) {
        for (std::size_t r = 0; r < rank[n]; ++r) keys.push_back({n, r});
    }
    return keys;
}

std::map<FactorKey, VectorDataset> regroup(std::span<const HosvdFactors> decompositions,
                                           std::span<const Label> labels) {
    if (decompositions.size() != labels.size()) throw std::invalid_argument("regroup: label count mismatch");
    std::map<FactorKey, VectorDataset> out;
    if (decompositions.empty()) return out;
    const auto& rank = decompositions.front().effective_rank;
    const Shape shape = decompositions.front().shape();
    for (std::size_t m = 0; m < decompositions.size(); ++m) {
        if (decompositions[m].effective_rank != rank || decompositions[m].shape() != shape) {
            throw std::invalid_argument("regroup: sample " + std::to_string(m) + " has rank " +
                                        decompositions[m].effective_rank.to_string() + ", expected " +
                                        rank.to_string());
        }
    }
    const auto m_count = static_cast<Eigen::Index>(decompositions.size());
    for (const auto& key : factor_keys(rank)) {
        VectorDataset ds;
        ds.features.resize(m_count, static_cast<Eigen::Index>(shape[key.mode]));
        for (Eigen::Index m = 0; m < m_count; ++m) {
            ds.features.row(m) =
                decompositions[static_cast<std::size_t>(m)].factors[key.mode].col(static_cast<Eigen::Index>(key.component));
        }
        ds.labels.assign(labels.begin(), labels.end());
        out.emplace(key, std::move(ds));
    }
    return out;
}

double VoteTally::total() const {
    double sum = 0.0;
    for (double c : counts) sum += c;
    return sum;
}

double VoteTally::count_for(Label label) const {
    auto it = std::lower_bound(labels.begin(), labels.end(), label);
    if (it == labels.end() || *it != label) return 0.0;
    return counts[static_cast<std::size_t>(it - labels.begin())];
}

VoteTally majority_vote(std::span<const Label> votes, std::span<const Label> classes, std::span<const double> weights) {
    if (classes.empty()) throw std::invalid_argument("majority_vote: no candidate classes");
    if (!weights.empty() && weights.size() != votes.size()) {
        throw std::invalid_argument("majority_vote: weight count does not match vote count");
    }
    VoteTally tally;
    tally.labels = distinct_labels(classes);
    tally.counts.assign(tally.labels.size(), 0.0);
    for (std::size_t v = 0; v < votes.size(); ++v) {
        auto it = std::lower_bound(tally.labels.begin(), tally.labels.end(), votes[v]);
        if (it == tally.labels.end() || *it != votes[v]) {
            throw std::invalid_argument("majority_vote: vote for unknown class " + std::to_string(votes[v]));
        }
        tally.counts[static_cast<std::size_t>(it - tally.labels.begin())] += weights.empty() ? 1.0 : weights[v];
    }
    std::size_t best = 0;
    for (std::size_t c = 1; c < tally.counts.size(); ++c) {
        if (tally.counts[c] > tally.counts[best]) best = c;
    }
    tally.winner = tally.labels[best];
    return tally;
}

// ---------------------------------------------------------------------------
// TELVI

std::uint64_t learner_seed(std::uint64_t master_seed, std::size_t flat_index) {
    return derive_seed(master_seed, flat_index);
}

std::vector<HosvdFactors> decompose_all(std::span<const DenseTensor> samples, const MultilinearRank& rank,
                                        const ExecutionOptions& options) {
    std::vector<std::optional<HosvdFactors>> slots(samples.size());
    parallel_for(samples.size(), options.threads, [&](std::size_t i) { slots[i] = hosvd(samples[i], rank); });
    std::vector<HosvdFactors> out;
    out.reserve(slots.size());
    for (auto& s : slots) out.push_back(std::move(*s));
    return out;
}

TelviModel telvi_fit_regrouped(const std::map<FactorKey, VectorDataset>& datasets, const MultilinearRank& rank,
                               const Shape& shape, const ClassifierSpec& base, std::uint64_t seed,
                               const ExecutionOptions& options) {
    const auto keys = factor_keys(rank);
    if (datasets.size() != keys.size()) throw std::invalid_argument("telvi: dataset count does not match rank");
    std::vector<std::optional<TrainedModel>> slots(keys.size());
    parallel_for(keys.size(), options.threads, [&](std::size_t t) {
        const std::size_t i = options.reverse_order ? keys.size() - 1 - t : t;
        slots[i] = fit(base, datasets.at(keys[i]), learner_seed(seed, i));
    });
    TelviModel model{rank, shape, {}, {}, base, seed};
    for (std::size_t i = 0; i < keys.size(); ++i) model.base_models.push_back({keys[i], std::move(*slots[i])});
    LabelVector all;
    for (const auto& [key, ds] : datasets) all.insert(all.end(), ds.labels.begin(), ds.labels.end());
    model.class_labels = distinct_labels(all);
    return model;
}

TelviModel telvi_fit(const LabeledTensorDataset& data, const MultilinearRank& rank, const ClassifierSpec& base,
                     std::uint64_t seed, const ExecutionOptions& options) {
    require_trainable(data, "telvi_fit");
    const MultilinearRank effective = rank.clamped_to(data.shape());
    const auto decompositions = decompose_all(data.samples, effective, options);
    const auto datasets = regroup(decompositions, data.labels);
    return telvi_fit_regrouped(datasets, effective, data.shape(), base, seed, options);
}

GridSearchResult telvi_grid_search_cv(std::span<const ClassifierSpec> grid,
                                      const std::map<FactorKey, VectorDataset>& datasets, const MultilinearRank& rank,
                                      const Shape& shape, std::size_t folds, std::uint64_t seed,
                                      const ExecutionOptions& options) {
    if (grid.empty()) throw std::invalid_argument("telvi_grid_search_cv: empty grid");
    if (datasets.empty()) throw std::invalid_argument("telvi_grid_search_cv: no datasets");
    const LabelVector& labels = datasets.begin()->second.labels;
    const auto fold_rows = make_folds(labels.size(), folds, seed);
    const auto keys = factor_keys(rank);

    GridSearchResult result;
    for (std::size_t s = 0; s < grid.size(); ++s) {
        double total = 0.0;
        for (std::size_t f = 0; f < folds; ++f) {
            std::vector<std::size_t> train_rows;
            for (std::size_t g = 0; g < folds; ++g) {
                if (g != f) train_rows.insert(train_rows.end(), fold_rows[g].begin(), fold_rows[g].end());
            }
            LabelVector valid_labels;
            for (auto r : fold_rows[f]) valid_labels.push_back(labels[r]);
            LabelVector train_labels;
            for (auto r : train_rows) train_labels.push_back(labels[r]);
            const LabelVector classes = distinct_labels(train_labels);
            if (grid[s].needs_two_classes() && classes.size() < 2) {
                const LabelVector constant(valid_labels.size(), classes.front());
                total += accuracy(constant, valid_labels);
                continue;
            }
            std::map<FactorKey, VectorDataset> train_sets;
            for (const auto& [key, ds] : datasets) train_sets.emplace(key, ds.subset(train_rows));
            const auto model = telvi_fit_regrouped(train_sets, rank, shape, grid[s], derive_seed(seed, f), options);
            std::vector<LabelVector> votes(fold_rows[f].size());
            for (std::size_t i = 0; i < keys.size(); ++i) {
                const auto valid = datasets.at(keys[i]).subset(fold_rows[f]);
                const auto predicted = predict(model.base_models[i].model, valid.features);
                for (std::size_t v = 0; v < predicted.size(); ++v) votes[v].push_back(predicted[v]);
            }
            LabelVector winners;
            for (const auto& v : votes) winners.push_back(majority_vote(v, model.class_labels).winner);
            total += accuracy(winners, valid_labels);
        }
        result.mean_accuracy.push_back(total / static_cast<double>(folds));
        if (result.mean_accuracy[s] > result.mean_accuracy[result.best_index]) result.best_index = s;
    }
    return result;
}

LabelVector telvi_votes(const TelviModel& model, const DenseTensor& x) {
    if (x.shape() != model.shape) {
        throw std::invalid_argument("telvi_predict: sample shape " + shape_to_string(x.shape()) +
                                    " does not match training shape " + shape_to_string(model.shape));
    }
    const auto f = hosvd(x, model.rank);
    LabelVector votes;
    votes.reserve(model.base_models.size());
    for (const auto& b : model.base_models) {
        const Vector column = f.factors[b.key.mode].col(static_cast<Eigen::Index>(b.key.component));
        votes.push_back(predict(b.model, row_of(column)).front());
    }
    return votes;
}

Prediction telvi_predict(const TelviModel& model, const DenseTensor& x) {
    auto tally = majority_vote(telvi_votes(model, x), model.class_labels);
    const Label winner = tally.winner;
    return {winner, std::move(tally)};
}

namespace {

json rank_json(const MultilinearRank& r) { return r.values(); }

} // namespace

json TelviModel::to_json() const {
    json learners = json::array();
    for (const auto& b : base_models) {
        learners.push_back({{"mode", b.key.mode}, {"component", b.key.component}, {"model", b.model.to_json()}});
    }
    return {{"type", "telvi"},
            {"rank", rank_json(rank)},
            {"shape", shape},
            {"class_labels", class_labels},
            {"base_spec", base_spec.to_json()},
            {"seed", seed},
            {"base_models", std::move(learners)}};
}

TelviModel TelviModel::from_json(const json& j) {
    if (j.at("type").get<std::string>() != "telvi") throw std::invalid_argument("not a telvi model");
    TelviModel m{MultilinearRank(j.at("rank").get<std::vector<std::size_t>>()),
                 j.at("shape").get<Shape>(),
                 {},
                 j.at("class_labels").get<LabelVector>(),
                 ClassifierSpec::from_json(j.at("base_spec")),
                 j.at("seed").get<std::uint64_t>()};
    for (const auto& b : j.at("base_models")) {
        m.base_models.push_back({FactorKey{b.at("mode").get<std::size_t>(), b.at("component").get<std::size_t>()},
                                 TrainedModel::from_json(b.at("model"))});
    }
    const auto keys = factor_keys(m.rank);
    if (keys.size() != m.base_models.size()) throw std::invalid_argument("telvi model: base model count mismatch");
    for (std::size_t i = 0; i < keys.size(); ++i) {
        if (m.base_models[i].key != keys[i]) throw std::invalid_argument("telvi model: unexpected base model key");
    }
    return m;
}

// ---------------------------------------------------------------------------
// Bagging

std::vector<std::size_t> bootstrap_indices(std::size_t count, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::size_t> out(count);
    for (auto& i : out) i = rng.below(count);
    return out;
}

BaggingModel bagging_fit(const LabeledTensorDataset& data, std::size_t n_estimators, std::size_t pca_dim,
                         const ClassifierSpec& base, std::uint64_t seed) {
    require_trainable(data, "bagging_fit");
    if (n_estimators < 1) throw std::invalid_argument("bagging_fit: need at least one estimator");
    BaggingModel model;
    model.shape = data.shape();
    model.class_labels = distinct_labels(data.labels);
    model.pca = pca_fit(data.vectorized(), pca_dim);
    VectorDataset transformed{pca_transform(model.pca, data.vectorized()), data.labels};
    constexpr std::size_t kMaxRedraws = 1000;
    for (std::size_t e = 0; e < n_estimators; ++e) {
        std::uint64_t bseed = derive_seed(seed, e);
        auto rows = bootstrap_indices(data.size(), bseed);
        // A resample without two classes cannot train kinds that need them; redraw deterministically.
        for (std::size_t attempt = 1; base.needs_two_classes(); ++attempt) {
            LabelVector drawn;
            for (auto r : rows) drawn.push_back(data.labels[r]);
            if (distinct_labels(drawn).size() >= 2) break;
            if (attempt > kMaxRedraws) throw std::runtime_error("bagging_fit: could not draw a two-class resample");
            bseed = derive_seed(bseed, attempt);
            rows = bootstrap_indices(data.size(), bseed);
        }
        model.bootstrap_seeds.push_back(bseed);
        model.estimators.push_back(fit(base, transformed.subset(rows), bseed));
    }
    return model;
}

LabelVector bagging_votes(const BaggingModel& model, const DenseTensor& x) {
    if (x.shape() != model.shape) {
        throw std::invalid_argument("bagging_predict: sample shape " + shape_to_string(x.shape()) +
                                    " does not match training shape " + shape_to_string(model.shape));
    }
    const Matrix z = pca_transform(model.pca, row_of(x.flatten()));
    LabelVector votes;
    for (const auto& est : model.estimators) votes.push_back(predict(est, z).front());
    return votes;
}

Prediction bagging_predict(const BaggingModel& model, const DenseTensor& x) {
    auto tally = majority_vote(bagging_votes(model, x), model.class_labels);
    const Label winner = tally.winner;
    return {winner, std::move(tally)};
}

json BaggingModel::to_json() const {
    json est = json::array();
    for (const auto& e : estimators) est.push_back(e.to_json());
    return {{"type", "bagging"},
            {"pca", {{"mean", vector_to_json(pca.mean)}, {"components", matrix_to_json(pca.components)}}},
            {"estimators", std::move(est)},
            {"bootstrap_seeds", bootstrap_seeds},
            {"class_labels", class_labels},
            {"shape", shape}};
}

BaggingModel BaggingModel::from_json(const json& j) {
    if (j.at("type").get<std::string>() != "bagging") throw std::invalid_argument("not a bagging model");
    BaggingModel m;
    m.pca.mean = vector_from_json(j.at("pca").at("mean"));
    m.pca.components = matrix_from_json(j.at("pca").at("components"));
    for (const auto& e : j.at("estimators")) m.estimators.push_back(TrainedModel::from_json(e));
    m.bootstrap_seeds = j.at("bootstrap_seeds").get<std::vector<std::uint64_t>>();
    m.class_labels = j.at("class_labels").get<LabelVector>();
    m.shape = j.at("shape").get<Shape>();
    return m;
}

// ---------------------------------------------------------------------------
// Vote-error analysis

double majority_error_probability(double p, std::size_t n_voters) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("majority_error_probability: p must lie in [0, 1]");
    if (n_voters < 1) throw std::invalid_argument("majority_error_probability: need at least one voter");
    if (p == 0.0) return 0.0;
    if (p == 1.0) return 1.0;
    const auto big_n = static_cast<double>(n_voters);
    const double log_p = std::log(p);
    const double log_q = std::log1p(-p);
    const double log_n_fact = std::lgamma(big_n + 1.0);
    double sum = 0.0;
    for (std::size_t n = (n_voters + 1) / 2; n <= n_voters; ++n) {
        const auto k = static_cast<double>(n);
        const double log_term = log_n_fact - std::lgamma(k + 1.0) - std::lgamma(big_n - k + 1.0) + k * log_p +
                                (big_n - k) * log_q;
        sum += std::exp(log_term);
    }
    return std::clamp(sum, 0.0, 1.0);
}

} // namespace tel
