#include "tel/data_io.hpp"
#include "tel/experiment.hpp"
#include "tel/json_util.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

using nlohmann::json;

namespace {

// Failure reported as "error: <stage>: <kind>: <message>" on one line.
struct CliError {
    std::string stage;
    std::string kind;
    std::string message;
};

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
    auto* opt = cmd->add_option("--config", c.config, "JSON config file");
    if (config_required) opt->required();
    cmd->add_option("--seed", c.seed, "Override the seed from the config");
    cmd->add_option("--out", c.out, "Output path");
}

struct BadJson : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw tel::FormatError(tel::FormatErrorKind::io, "cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw BadJson(path + " is not valid JSON: " + e.what());
    }
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw tel::FormatError(tel::FormatErrorKind::io, "cannot write " + path);
    out << text;
}

template <typename F>
void run_stage(const char* stage, F&& body) {
    try {
        body();
    } catch (const CliError&) {
        throw;
    } catch (const tel::StageError& e) {
        const std::string what = e.what();
        const std::string msg = what.substr(e.stage().size() + 2);
        const auto colon = msg.find(": ");
        const std::string first = colon == std::string::npos ? "" : msg.substr(0, colon);
        static const char* kFormatKinds[] = {"io", "bad_magic", "unsupported_version", "unsupported_dtype",
                                             "unexpected_eof", "shape_overflow", "invalid_shape", "invalid_label",
                                             "trailing_data", "unsupported_variant", "inconsistent_size",
                                             "empty_class"};
        for (const char* k : kFormatKinds) {
            if (first == k) throw CliError{e.stage(), first, msg.substr(colon + 2)};
        }
        throw CliError{e.stage(), "invalid_input", msg};
    } catch (const tel::FormatError& e) {
        throw CliError{stage, tel::to_string(e.kind()), e.what()};
    } catch (const BadJson& e) {
        throw CliError{stage, "invalid_json", e.what()};
    } catch (const json::exception& e) {
        throw CliError{stage, "invalid_json", e.what()};
    } catch (const std::invalid_argument& e) {
        throw CliError{stage, "invalid_input", e.what()};
    } catch (const std::out_of_range& e) {
        throw CliError{stage, "invalid_input", e.what()};
    } catch (const std::domain_error& e) {
        throw CliError{stage, "numerical", e.what()};
    } catch (const std::filesystem::filesystem_error& e) {
        throw CliError{stage, "io", e.what()};
    } catch (const std::exception& e) {
        throw CliError{stage, "internal", e.what()};
    }
}

tel::ExperimentConfig load_config(const Common& c) {
    tel::ExperimentConfig config;
    run_stage("config", [&] {
        config = tel::ExperimentConfig::from_json(read_json(c.config));
        if (c.seed) config.seed = *c.seed;
        if (!c.out.empty()) config.output = c.out;
    });
    return config;
}

tel::LabeledTensorDataset load_input(const std::string& path) {
    tel::LabeledTensorDataset data;
    run_stage("load", [&] { data = tel::load_tensor_dataset(path); });
    return data;
}

int cmd_synth(const Common& c) {
    tel::SyntheticSpec spec;
    run_stage("config", [&] {
        json j = read_json(c.config);
        if (j.contains("dataset")) j = j.at("dataset").at("synthetic");
        spec = tel::SyntheticSpec::from_json(j);
        if (c.seed) spec.seed = *c.seed;
        spec.validate();
    });
    if (c.out.empty()) throw CliError{"config", "usage", "synth needs --out"};
    tel::LabeledTensorDataset data;
    run_stage("generate", [&] { data = tel::synth_generate(spec); });
    run_stage("write", [&] { tel::save_tensor_dataset(c.out, data); });
    std::printf("wrote %zu samples of shape %s to %s\n", data.size(), tel::shape_to_string(data.shape()).c_str(),
                c.out.c_str());
    return 0;
}

int cmd_decompose(const Common& c, const std::string& input, const std::string& rank_text) {
    tel::MultilinearRank rank;
    run_stage("config", [&] { rank = tel::MultilinearRank::parse(rank_text); });
    const auto data = load_input(input);
    json out;
    double mean_error = 0.0;
    tel::MultilinearRank effective;
    run_stage("decompose", [&] {
        if (data.size() == 0) throw std::invalid_argument("dataset is empty");
        effective = rank.clamped_to(data.shape());
        const auto decomps = tel::decompose_all(data.samples, effective);
        json samples = json::array();
        for (std::size_t i = 0; i < decomps.size(); ++i) {
            const double err = tel::frobenius_distance(data.samples[i], tel::reconstruct(decomps[i])) /
                               std::max(tel::frobenius_norm(data.samples[i]), 1e-300);
            mean_error += err;
            json factors = json::array();
            for (const auto& f : decomps[i].factors) factors.push_back(tel::matrix_to_json(f));
            samples.push_back({{"label", data.labels[i]},
                               {"relative_error", err},
                               {"core", tel::tensor_to_json(decomps[i].core)},
                               {"factors", std::move(factors)}});
        }
        mean_error /= static_cast<double>(decomps.size());
        out = {{"rank", effective.values()}, {"mean_relative_error", mean_error}, {"samples", std::move(samples)}};
    });
    if (!c.out.empty()) run_stage("write", [&] { write_file(c.out, tel::canonical_dump(out) + "\n"); });
    std::printf("rank=%s samples=%zu mean_relative_error=%s\n", effective.to_string().c_str(), data.size(),
                tel::format_double(mean_error).c_str());
    return 0;
}

int cmd_train(const Common& c, const std::string& input, std::size_t threads) {
    auto config = load_config(c);
    if (c.out.empty()) throw CliError{"config", "usage", "train needs --out"};
    tel::LabeledTensorDataset data;
    if (!input.empty()) {
        data = load_input(input);
    } else {
        run_stage("load", [&] { data = tel::load_dataset(config.source); });
    }
    tel::AnyModel model;
    run_stage("fit", [&] { model = tel::train_model(config, data, {threads, false}); });
    run_stage("write", [&] { tel::save_model(c.out, model); });
    std::printf("trained %s on %zu samples, model written to %s\n", tel::to_string(config.method).c_str(),
                data.size(), c.out.c_str());
    return 0;
}

int cmd_predict(const Common& c, const std::string& model_path, const std::string& input) {
    tel::AnyModel model;
    run_stage("load", [&] { model = tel::load_model(model_path); });
    const auto data = load_input(input);
    tel::LabelVector predicted;
    run_stage("predict", [&] {
        for (const auto& x : data.samples) predicted.push_back(tel::predict_label(model, x));
    });
    if (!c.out.empty()) {
        run_stage("write", [&] {
            std::string csv = "index,label,predicted\n";
            for (std::size_t i = 0; i < predicted.size(); ++i) {
                csv += std::to_string(i) + "," + std::to_string(data.labels[i]) + "," + std::to_string(predicted[i]) +
                       "\n";
            }
            write_file(c.out, csv);
        });
    }
    std::printf("samples=%zu accuracy=%s\n", data.size(), tel::format_double(tel::accuracy(predicted, data.labels)).c_str());
    return 0;
}

int cmd_experiment(const Common& c, std::size_t threads) {
    const auto config = load_config(c);
    tel::ExperimentReport report;
    run_stage("experiment", [&] { report = tel::run_experiment(config, {threads, false}); });
    const std::string out = config.output.empty() ? std::string("report.json") : config.output;
    run_stage("write", [&] { tel::write_report(report, out); });
    std::printf("method=%s accuracy=%s mean_learner_accuracy=%s learners=%zu report=%s\n",
                tel::to_string(report.method).c_str(), tel::format_double(report.accuracy).c_str(),
                tel::format_double(report.mean_learner_accuracy()).c_str(), report.per_learner.size(), out.c_str());
    return 0;
}

int cmd_inspect(const Common& c, const std::string& input) {
    json summary;
    run_stage("inspect", [&] {
        std::ifstream in(input, std::ios::binary);
        if (!in) throw tel::FormatError(tel::FormatErrorKind::io, "cannot open " + input);
        char head[4] = {};
        in.read(head, 4);
        if (in.gcount() == 4 && std::string(head, 4) == "TELD") {
            const auto data = tel::load_tensor_dataset(input);
            std::map<int, std::size_t> per_class;
            for (auto l : data.labels) ++per_class[l];
            json classes = json::object();
            for (auto [l, n] : per_class) classes[std::to_string(l)] = n;
            summary = {{"kind", "dataset"},
                       {"samples", data.size()},
                       {"shape", data.size() ? json(data.shape()) : json(nullptr)},
                       {"class_counts", classes}};
            return;
        }
        const json j = read_json(input);
        if (j.contains("type")) {
            const auto model = tel::model_from_json(j);
            summary = {{"kind", "model"}, {"type", j.at("type")}};
            if (const auto* t = std::get_if<tel::TelviModel>(&model)) {
                summary["rank"] = t->rank.values();
                summary["base_learners"] = t->base_models.size();
                summary["base_spec"] = t->base_spec.to_json();
            } else if (const auto* b = std::get_if<tel::BaggingModel>(&model)) {
                summary["estimators"] = b->estimators.size();
                summary["pca_dim"] = b->pca.dim();
            }
        } else if (j.contains("format_version")) {
            summary = {{"kind", "report"},
                       {"method", j.at("method")},
                       {"accuracy", j.at("accuracy")},
                       {"learners", j.at("per_learner").size()}};
        } else {
            throw std::invalid_argument(input + " is neither a dataset, a model nor a report");
        }
    });
    const std::string text = summary.dump(2);
    if (!c.out.empty()) run_stage("write", [&] { write_file(c.out, text + "\n"); });
    std::printf("%s\n", text.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tensor ensemble learning toolkit"};
    app.require_subcommand(1);

    Common synth_c, dec_c, train_c, pred_c, exp_c, insp_c;
    std::string dec_input, dec_rank, train_input, pred_model, pred_input, insp_input;
    std::size_t train_threads = 1, exp_threads = 1;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled tensor dataset");
    add_common(synth, synth_c, true);

    auto* dec = app.add_subcommand("decompose", "HOSVD every sample and report reconstruction error");
    add_common(dec, dec_c, false);
    dec->add_option("--input", dec_input, "TELD dataset")->required();
    dec->add_option("--rank", dec_rank, "Multilinear rank r1,r2,...")->required();

    auto* train = app.add_subcommand("train", "Fit a model on a whole dataset");
    add_common(train, train_c, true);
    train->add_option("--input", train_input, "TELD dataset, overrides the config dataset");
    train->add_option("--threads", train_threads, "Worker threads (0 = all cores)");

    auto* pred = app.add_subcommand("predict", "Predict labels for a dataset");
    add_common(pred, pred_c, false);
    pred->add_option("--model", pred_model, "Model JSON")->required();
    pred->add_option("--input", pred_input, "TELD dataset")->required();

    auto* exp = app.add_subcommand("experiment", "Run a full train/test experiment");
    add_common(exp, exp_c, true);
    exp->add_option("--threads", exp_threads, "Worker threads (0 = all cores)");

    auto* insp = app.add_subcommand("inspect", "Summarize a dataset, model or report");
    add_common(insp, insp_c, false);
    insp->add_option("--input", insp_input, "File to inspect")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "error: args: usage: %s\n", one_line(e.what()).c_str());
        return 2;
    }

    try {
        if (*synth) return cmd_synth(synth_c);
        if (*dec) return cmd_decompose(dec_c, dec_input, dec_rank);
        if (*train) return cmd_train(train_c, train_input, train_threads);
        if (*pred) return cmd_predict(pred_c, pred_model, pred_input);
        if (*exp) return cmd_experiment(exp_c, exp_threads);
        if (*insp) return cmd_inspect(insp_c, insp_input);
    } catch (const CliError& e) {
        std::fprintf(stderr, "error: %s: %s: %s\n", e.stage.c_str(), e.kind.c_str(), one_line(e.message).c_str());
        return 1;
    }
    return 1;
}
