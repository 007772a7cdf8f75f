#include "tel/experiment.hpp"

#include "tel/json_util.hpp"
#include "tel/random.hpp"

#include <chrono>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace tel {

using nlohmann::json;

namespace {

constexpr std::uint64_t kCvStream = 0x4356;

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

template <typename F>
auto in_stage(const char* stage, F&& body) -> decltype(body()) {
    try {
        return body();
    } catch (const StageError&) {
        throw;
    } catch (const FormatError& e) {
        throw StageError(stage, to_string(e.kind()) + ": " + e.what());
    } catch (const std::exception& e) {
        throw StageError(stage, e.what());
    }
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : j.items()) {
        if (!ok.contains(key)) throw std::invalid_argument(std::string(where) + ": unknown key \"" + key + "\"");
    }
}

MultilinearRank rank_from_json(const json& j) {
    if (j.is_string()) return MultilinearRank::parse(j.get<std::string>());
    return MultilinearRank(j.get<std::vector<std::size_t>>());
}

std::vector<ClassifierSpec> effective_grid(const ExperimentConfig& config) {
    if (config.grid.empty()) return {ClassifierSpec{}};
    return config.grid;
}

std::size_t effective_pca_dim(const ExperimentConfig& config) {
    return config.pca_dim.value_or(ExperimentConfig::kDefaultPcaDim);
}

Matrix single_features(const SingleModel& model, const Matrix& raw) {
    return model.pca ? pca_transform(*model.pca, raw) : raw;
}

SingleModel fit_single(const LabeledTensorDataset& train, const ClassifierSpec& spec, std::optional<std::size_t> pca_dim,
                       std::uint64_t seed) {
    const Matrix raw = train.vectorized();
    std::optional<PcaModel> pca;
    if (pca_dim) pca = pca_fit(raw, *pca_dim);
    Matrix features = pca ? pca_transform(*pca, raw) : raw;
    return {std::move(pca), fit(spec, VectorDataset{std::move(features), train.labels}, seed), train.shape()};
}

VectorDataset vector_view(const LabeledTensorDataset& data, std::optional<std::size_t> pca_dim) {
    Matrix raw = data.vectorized();
    if (pca_dim) raw = pca_transform(pca_fit(raw, *pca_dim), raw);
    return {std::move(raw), data.labels};
}

MultilinearRank choose_rank(const ExperimentConfig& config, const LabeledTensorDataset& train) {
    if (config.rank) return config.rank->clamped_to(train.shape());
    return rank_search(train.samples, *config.rank_threshold);
}

struct Tuned {
    ClassifierSpec spec;
    std::vector<double> scores;
};

Tuned tune_vector(const std::vector<ClassifierSpec>& grid, const VectorDataset& data, std::size_t folds,
                  std::uint64_t seed) {
    if (grid.size() == 1) return {grid.front(), {}};
    auto r = grid_search_cv_scored(grid, data, folds, derive_seed(seed, kCvStream));
    return {grid[r.best_index], std::move(r.mean_accuracy)};
}

} // namespace

std::string to_string(Method method) {
    switch (method) {
        case Method::telvi: return "telvi";
        case Method::bagging: return "bagging";
        case Method::single: return "single";
    }
    return "unknown";
}

Method method_from_string(const std::string& name) {
    if (name == "telvi") return Method::telvi;
    if (name == "bagging") return Method::bagging;
    if (name == "single") return Method::single;
    throw std::invalid_argument("unknown method \"" + name + "\" (expected telvi, bagging or single)");
}

StageError::StageError(std::string stage, const std::string& message)
    : std::runtime_error(stage + ": " + message), stage_(std::move(stage)) {}

// ---------------------------------------------------------------------------
// Config

void ExperimentConfig::validate() const {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw std::invalid_argument("train_fraction must be in (0, 1), got " + format_double(train_fraction));
    }
    if (cv_folds < 2) throw std::invalid_argument("cv_folds must be at least 2");
    if (method == Method::telvi) {
        if (rank.has_value() == rank_threshold.has_value()) {
            throw std::invalid_argument("telvi needs exactly one of rank or rank_threshold");
        }
        if (rank_threshold && !(*rank_threshold >= 0.0)) throw std::invalid_argument("rank_threshold must be >= 0");
    }
    if (method == Method::bagging && n_estimators < 1) throw std::invalid_argument("n_estimators must be >= 1");
    if (pca_dim && *pca_dim < 1) throw std::invalid_argument("pca_dim must be >= 1");
    if (source.kind == DatasetSource::Kind::synthetic) source.synthetic.validate();
}

json ExperimentConfig::to_json() const {
    json j;
    switch (source.kind) {
        case DatasetSource::Kind::file: j["dataset"] = {{"file", source.path.string()}}; break;
        case DatasetSource::Kind::images: j["dataset"] = {{"images", source.path.string()}}; break;
        case DatasetSource::Kind::synthetic: j["dataset"] = {{"synthetic", source.synthetic.to_json()}}; break;
    }
    j["train_fraction"] = train_fraction;
    j["method"] = tel::to_string(method);
    if (rank) j["rank"] = rank->values();
    if (rank_threshold) j["rank_threshold"] = *rank_threshold;
    json g = json::array();
    for (const auto& s : grid) g.push_back(s.to_json());
    j["grid"] = std::move(g);
    j["cv_folds"] = cv_folds;
    j["n_estimators"] = n_estimators;
    if (pca_dim) j["pca_dim"] = *pca_dim;
    j["seed"] = seed;
    if (!output.empty()) j["output"] = output;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    reject_unknown_keys(j,
                        {"dataset", "train_fraction", "method", "rank", "rank_threshold", "grid", "cv_folds",
                         "n_estimators", "pca_dim", "seed", "output"},
                        "config");
    ExperimentConfig c;
    const json& ds = j.at("dataset");
    if (!ds.is_object() || ds.size() != 1) {
        throw std::invalid_argument("config: dataset must have exactly one of file, images, synthetic");
    }
    if (ds.contains("file")) {
        c.source.kind = DatasetSource::Kind::file;
        c.source.path = ds.at("file").get<std::string>();
    } else if (ds.contains("images")) {
        c.source.kind = DatasetSource::Kind::images;
        c.source.path = ds.at("images").get<std::string>();
    } else if (ds.contains("synthetic")) {
        c.source.kind = DatasetSource::Kind::synthetic;
        c.source.synthetic = SyntheticSpec::from_json(ds.at("synthetic"));
    } else {
        throw std::invalid_argument("config: unknown dataset source \"" + ds.begin().key() + "\"");
    }
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("rank")) c.rank = rank_from_json(j.at("rank"));
    if (j.contains("rank_threshold")) c.rank_threshold = j.at("rank_threshold").get<double>();
    if (j.contains("grid")) {
        for (const auto& s : j.at("grid")) c.grid.push_back(ClassifierSpec::from_json(s));
    }
    c.cv_folds = j.value("cv_folds", c.cv_folds);
    c.n_estimators = j.value("n_estimators", c.n_estimators);
    if (j.contains("pca_dim")) c.pca_dim = j.at("pca_dim").get<std::size_t>();
    c.seed = j.value("seed", c.seed);
    c.output = j.value("output", std::string{});
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatErrorKind::io, "cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return from_json(j);
}

// ---------------------------------------------------------------------------
// Report

double ExperimentReport::mean_learner_accuracy() const {
    if (per_learner.empty()) return accuracy;
    double sum = 0.0;
    for (const auto& l : per_learner) sum += l.accuracy;
    return sum / static_cast<double>(per_learner.size());
}

json ExperimentReport::to_json() const {
    json learners = json::array();
    for (const auto& l : per_learner) {
        learners.push_back({{"mode", l.mode}, {"component", l.component}, {"accuracy", l.accuracy}});
    }
    json j = {{"format_version", kFormatVersion},
              {"config", config},
              {"method", tel::to_string(method)},
              {"chosen_spec", chosen_spec.to_json()},
              {"cv_scores", cv_scores},
              {"per_learner", std::move(learners)},
              {"accuracy", accuracy},
              {"mean_learner_accuracy", mean_learner_accuracy()},
              {"train_size", train_size},
              {"test_size", test_size},
              {"class_count", class_count},
              {"seed", seed},
              {"notes", notes}};
    j["effective_rank"] = effective_rank ? json(effective_rank->values()) : json(nullptr);
    return j;
}

std::string ExperimentReport::canonical_json() const { return canonical_dump(to_json()); }

std::string ExperimentReport::learners_csv() const {
    std::ostringstream out;
    out << "mode,component,accuracy\n";
    for (const auto& l : per_learner) out << l.mode << ',' << l.component << ',' << format_double(l.accuracy) << '\n';
    return out.str();
}

json ExperimentReport::timings_json() const {
    json j = json::object();
    for (const auto& [k, v] : timings_seconds) j[k] = v;
    return j;
}

std::filesystem::path learners_csv_path(const std::filesystem::path& report) {
    auto p = report;
    return p.replace_extension(".learners.csv");
}

std::filesystem::path timings_path(const std::filesystem::path& report) {
    auto p = report;
    return p.replace_extension(".timings.json");
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError(FormatErrorKind::io, "cannot write " + path.string());
    out << text;
    if (!out) throw FormatError(FormatErrorKind::io, "write failed for " + path.string());
}

} // namespace

void write_report(const ExperimentReport& report, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_text(path, report.canonical_json() + "\n");
    write_text(learners_csv_path(path), report.learners_csv());
    write_text(timings_path(path), canonical_dump(report.timings_json()) + "\n");
}

// ---------------------------------------------------------------------------
// Pipeline

LabeledTensorDataset load_dataset(const DatasetSource& source, std::vector<std::string>* notes) {
    switch (source.kind) {
        case DatasetSource::Kind::file: return load_tensor_dataset(source.path);
        case DatasetSource::Kind::images: {
            auto images = load_ppm_dir(source.path);
            if (notes) notes->push_back("pixel values scaled to [0,1] by dividing by maxval");
            return std::move(images.data);
        }
        case DatasetSource::Kind::synthetic: return synth_generate(source.synthetic);
    }
    throw std::logic_error("unreachable dataset kind");
}

ExperimentReport run_experiment(const ExperimentConfig& config, const ExecutionOptions& options) {
    in_stage("config", [&] { config.validate(); });
    ExperimentReport report;
    report.config = config.to_json();
    report.method = config.method;
    report.seed = config.seed;
    Stopwatch clock;

    const auto data = in_stage("load", [&] {
        auto d = load_dataset(config.source, &report.notes);
        d.validate();
        if (d.size() < 2) throw std::invalid_argument("dataset has fewer than 2 samples");
        return d;
    });
    report.timings_seconds["load"] = clock.lap();

    const auto split = in_stage("split", [&] { return train_test_split(data, config.train_fraction, config.seed); });
    report.notes.push_back("split stratified by class label; per-class train count ceil(fraction*count) clamped to "
                           "[1, count-1]");
    report.train_size = split.train.size();
    report.test_size = split.test.size();
    report.class_count = distinct_labels(data.labels).size();
    report.timings_seconds["split"] = clock.lap();

    const auto grid = effective_grid(config);
    const auto& test = split.test;

    switch (config.method) {
        case Method::telvi: {
            const auto rank = in_stage("rank", [&] { return choose_rank(config, split.train); });
            report.effective_rank = rank;
            const auto decomps = in_stage("decompose", [&] { return decompose_all(split.train.samples, rank, options); });
            const auto datasets = regroup(decomps, split.train.labels);
            report.timings_seconds["decompose"] = clock.lap();
            const auto tuned = in_stage("tune", [&] {
                if (grid.size() == 1) return Tuned{grid.front(), {}};
                auto r = telvi_grid_search_cv(grid, datasets, rank, split.train.shape(), config.cv_folds,
                                              derive_seed(config.seed, kCvStream), options);
                return Tuned{grid[r.best_index], std::move(r.mean_accuracy)};
            });
            if (grid.size() > 1) {
                report.notes.push_back("grid entries scored by ensemble cross-validation with one shared base spec");
            }
            report.chosen_spec = tuned.spec;
            report.cv_scores = tuned.scores;
            report.timings_seconds["tune"] = clock.lap();
            const auto model = in_stage("fit", [&] {
                return telvi_fit_regrouped(datasets, rank, split.train.shape(), tuned.spec, config.seed, options);
            });
            report.timings_seconds["fit"] = clock.lap();
            in_stage("evaluate", [&] {
                const std::size_t n = model.base_models.size();
                std::vector<std::size_t> correct(n, 0);
                std::size_t ensemble_correct = 0;
                for (std::size_t i = 0; i < test.size(); ++i) {
                    const auto votes = telvi_votes(model, test.samples[i]);
                    for (std::size_t b = 0; b < n; ++b) correct[b] += votes[b] == test.labels[i] ? 1 : 0;
                    ensemble_correct += majority_vote(votes, model.class_labels).winner == test.labels[i] ? 1 : 0;
                }
                const auto denom = static_cast<double>(test.size());
                for (std::size_t b = 0; b < n; ++b) {
                    const auto& key = model.base_models[b].key;
                    report.per_learner.push_back({static_cast<long>(key.mode), key.component,
                                                  static_cast<double>(correct[b]) / denom});
                }
                report.accuracy = static_cast<double>(ensemble_correct) / denom;
            });
            break;
        }
        case Method::bagging: {
            const std::size_t pca_dim = effective_pca_dim(config);
            const auto tuned = in_stage("tune", [&] {
                return tune_vector(grid, vector_view(split.train, pca_dim), config.cv_folds, config.seed);
            });
            report.chosen_spec = tuned.spec;
            report.cv_scores = tuned.scores;
            report.timings_seconds["tune"] = clock.lap();
            const auto model = in_stage("fit", [&] {
                return bagging_fit(split.train, config.n_estimators, pca_dim, tuned.spec, config.seed);
            });
            report.timings_seconds["fit"] = clock.lap();
            in_stage("evaluate", [&] {
                const std::size_t n = model.estimators.size();
                std::vector<std::size_t> correct(n, 0);
                std::size_t ensemble_correct = 0;
                for (std::size_t i = 0; i < test.size(); ++i) {
                    const auto votes = bagging_votes(model, test.samples[i]);
                    for (std::size_t b = 0; b < n; ++b) correct[b] += votes[b] == test.labels[i] ? 1 : 0;
                    ensemble_correct += majority_vote(votes, model.class_labels).winner == test.labels[i] ? 1 : 0;
                }
                const auto denom = static_cast<double>(test.size());
                for (std::size_t b = 0; b < n; ++b) {
                    report.per_learner.push_back({-1, b, static_cast<double>(correct[b]) / denom});
                }
                report.accuracy = static_cast<double>(ensemble_correct) / denom;
            });
            break;
        }
        case Method::single: {
            const auto tuned = in_stage("tune", [&] {
                return tune_vector(grid, vector_view(split.train, config.pca_dim), config.cv_folds, config.seed);
            });
            report.chosen_spec = tuned.spec;
            report.cv_scores = tuned.scores;
            report.timings_seconds["tune"] = clock.lap();
            const auto model =
                in_stage("fit", [&] { return fit_single(split.train, tuned.spec, config.pca_dim, config.seed); });
            report.timings_seconds["fit"] = clock.lap();
            in_stage("evaluate", [&] {
                const auto predicted = predict(model.model, single_features(model, test.vectorized()));
                report.accuracy = accuracy(predicted, test.labels);
            });
            break;
        }
    }
    report.timings_seconds["evaluate"] = clock.lap();
    return report;
}

// ---------------------------------------------------------------------------
// Whole-dataset training and model files

AnyModel train_model(const ExperimentConfig& config, const LabeledTensorDataset& data, const ExecutionOptions& options) {
    config.validate();
    data.validate();
    const auto grid = effective_grid(config);
    switch (config.method) {
        case Method::telvi: {
            const auto rank = choose_rank(config, data);
            const auto decomps = decompose_all(data.samples, rank, options);
            const auto datasets = regroup(decomps, data.labels);
            ClassifierSpec spec = grid.front();
            if (grid.size() > 1) {
                auto r = telvi_grid_search_cv(grid, datasets, rank, data.shape(), config.cv_folds,
                                              derive_seed(config.seed, kCvStream), options);
                spec = grid[r.best_index];
            }
            return telvi_fit_regrouped(datasets, rank, data.shape(), spec, config.seed, options);
        }
        case Method::bagging: {
            const std::size_t pca_dim = effective_pca_dim(config);
            const auto tuned = tune_vector(grid, vector_view(data, pca_dim), config.cv_folds, config.seed);
            return bagging_fit(data, config.n_estimators, pca_dim, tuned.spec, config.seed);
        }
        case Method::single: {
            const auto tuned = tune_vector(grid, vector_view(data, config.pca_dim), config.cv_folds, config.seed);
            return fit_single(data, tuned.spec, config.pca_dim, config.seed);
        }
    }
    throw std::logic_error("unreachable method");
}

Label predict_label(const AnyModel& model, const DenseTensor& x) {
    return std::visit(
        [&](const auto& m) -> Label {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, TelviModel>) {
                return telvi_predict(m, x).label;
            } else if constexpr (std::is_same_v<T, BaggingModel>) {
                return bagging_predict(m, x).label;
            } else {
                if (x.shape() != m.shape) {
                    throw std::invalid_argument("predict: sample shape " + shape_to_string(x.shape()) +
                                                " does not match training shape " + shape_to_string(m.shape));
                }
                const Matrix row = x.flatten().transpose();
                return predict(m.model, single_features(m, row)).front();
            }
        },
        model);
}

json model_to_json(const AnyModel& model) {
    return std::visit(
        [](const auto& m) -> json {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, SingleModel>) {
                json j = {{"type", "single"}, {"model", m.model.to_json()}, {"shape", m.shape}};
                j["pca"] = m.pca ? json{{"mean", vector_to_json(m.pca->mean)},
                                        {"components", matrix_to_json(m.pca->components)}}
                                 : json(nullptr);
                return j;
            } else {
                return m.to_json();
            }
        },
        model);
}

AnyModel model_from_json(const json& j) {
    const auto type = j.at("type").get<std::string>();
    if (type == "telvi") return TelviModel::from_json(j);
    if (type == "bagging") return BaggingModel::from_json(j);
    if (type == "single") {
        SingleModel m{std::nullopt, TrainedModel::from_json(j.at("model")), j.at("shape").get<Shape>()};
        if (!j.at("pca").is_null()) {
            m.pca = PcaModel{vector_from_json(j.at("pca").at("mean")), matrix_from_json(j.at("pca").at("components"))};
        }
        return m;
    }
    throw std::invalid_argument("unknown model type \"" + type + "\"");
}

void save_model(const std::filesystem::path& path, const AnyModel& model) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    write_text(path, canonical_dump(model_to_json(model)) + "\n");
}

AnyModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError(FormatErrorKind::io, "cannot open model " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument("model " + path.string() + " is not valid JSON: " + e.what());
    }
    return model_from_json(j);
}

} // namespace tel
