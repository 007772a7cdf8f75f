#pragma once

#include "tel/data_io.hpp"
#include "tel/ensemble.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace tel {

enum class Method { telvi, bagging, single };

std::string to_string(Method method);
Method method_from_string(const std::string& name);

struct DatasetSource {
    enum class Kind { file, images, synthetic };
    Kind kind = Kind::synthetic;
    std::filesystem::path path; // file or image directory
    SyntheticSpec synthetic;
};

// JSON form:
//   {"dataset": {"file": "x.teld"} | {"images": "dir/"} | {"synthetic": {...}},
//    "train_fraction": 0.5, "method": "telvi", "rank": [2,2,1] | "rank_threshold": 0.1,
//    "grid": [{"kind": "knn", "k": 3}, ...], "cv_folds": 5, "n_estimators": 12,
//    "pca_dim": 10, "seed": 7, "output": "report.json"}
struct ExperimentConfig {
    DatasetSource source;
    double train_fraction = 0.5;
    Method method = Method::telvi;
    std::optional<MultilinearRank> rank;
    std::optional<double> rank_threshold;
    std::vector<ClassifierSpec> grid;
    std::size_t cv_folds = 5;
    std::size_t n_estimators = 12;
    std::optional<std::size_t> pca_dim; // bagging defaults to kDefaultPcaDim
    std::uint64_t seed = 0;
    std::string output;

    static constexpr std::size_t kDefaultPcaDim = 10;

    void validate() const;
    nlohmann::json to_json() const;
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::filesystem::path& path);
};

// Raised for failures inside run_experiment; what() is prefixed with the stage.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& message);
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct LearnerAccuracy {
    // Factor mode for TELVI learners; -1 marks a bagging estimator.
    long mode = 0;
    std::size_t component = 0;
    double accuracy = 0.0;
};

struct ExperimentReport {
    static constexpr int kFormatVersion = 1;

    nlohmann::json config;
    Method method = Method::telvi;
    ClassifierSpec chosen_spec;
    std::vector<double> cv_scores; // per grid entry; empty when the grid has one entry
    std::optional<MultilinearRank> effective_rank;
    std::vector<LearnerAccuracy> per_learner;
    double accuracy = 0.0; // ensemble accuracy, or the single model's accuracy
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    std::size_t class_count = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> notes;
    std::map<std::string, double> timings_seconds;

    double mean_learner_accuracy() const;

    // Deterministic content only; timings are kept out so reruns are byte-identical.
    nlohmann::json to_json() const;
    std::string canonical_json() const;
    // "mode,component,accuracy" rows.
    std::string learners_csv() const;
    nlohmann::json timings_json() const;
};

// Sibling paths: <stem>.learners.csv and <stem>.timings.json next to `report`.
std::filesystem::path learners_csv_path(const std::filesystem::path& report);
std::filesystem::path timings_path(const std::filesystem::path& report);

void write_report(const ExperimentReport& report, const std::filesystem::path& path);

LabeledTensorDataset load_dataset(const DatasetSource& source, std::vector<std::string>* notes = nullptr);

// load -> split -> grid search -> fit -> evaluate.
ExperimentReport run_experiment(const ExperimentConfig& config, const ExecutionOptions& options = {});

// A vectorized single classifier, with optional PCA in front.
struct SingleModel {
    std::optional<PcaModel> pca;
    TrainedModel model;
    Shape shape;
};

using AnyModel = std::variant<TelviModel, BaggingModel, SingleModel>;

// Fits the configured method on the whole dataset (no split), tuning with CV
// when the grid has more than one entry.
AnyModel train_model(const ExperimentConfig& config, const LabeledTensorDataset& data,
                     const ExecutionOptions& options = {});

Label predict_label(const AnyModel& model, const DenseTensor& x);

nlohmann::json model_to_json(const AnyModel& model);
AnyModel model_from_json(const nlohmann::json& j);

void save_model(const std::filesystem::path& path, const AnyModel& model);
AnyModel load_model(const std::filesystem::path& path);

} // namespace tel
