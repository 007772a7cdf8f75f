// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include "tel/data_io.hpp"
#include "tel/ensemble.hpp"
#include "tel/experiment.hpp"
#include "tel/hosvd.hpp"
#include "tel/learners.hpp"

#include "test_support.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

using namespace tel;
using namespace tel::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = TEL_FIXTURE_DIR;

// Collects failed checks for one criterion.
struct Outcome {
    std::vector<std::string> failures;
    std::string summary;

    void check(bool ok, const std::string& what) {
        if (!ok && failures.size() < 5) failures.push_back(what);
        if (!ok) ++failed;
    }
    std::size_t failed = 0;
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

std::string fmt17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// --- 1 ---------------------------------------------------------------------

void mode_product_equivalence(Outcome& out) {
    Rng rng(101);
    double worst = 0.0;
    for (int t = 0; t < 200; ++t) {
        const Shape shape = random_shape(rng, 2, 4, 8);
        const DenseTensor x = random_tensor(rng, shape);
        const std::size_t mode = rng.below(shape.size());
        const Matrix a = random_matrix(rng, 1 + rng.below(8), shape[mode]);
        const Matrix lhs = unfold(mode_n_product(x, a, mode), mode);
        const Matrix rhs = a * unfold_by_index(x, mode);
        const double err = relative_frobenius(lhs, rhs);
        worst = std::max(worst, err);
        out.check(err <= 1e-12, "tensor " + std::to_string(t) + " error " + fmt(err));
    }
    out.summary = "200 tensors, worst relative error " + fmt(worst);
}

// --- 2 ---------------------------------------------------------------------

void hosvd_lossless(Outcome& out) {
    Rng rng(202);
    const Shape caps{8, 9, 10};
    double worst_err = 0.0, worst_orth = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t order = 2 + rng.below(2);
        Shape shape(order);
        for (std::size_t n = 0; n < order; ++n) shape[n] = 1 + rng.below(caps[n]);
        if (t == 0) shape = caps;
        const DenseTensor x = random_tensor(rng, shape);
        const HosvdFactors f = hosvd(x, full_rank(shape));
        const double err = frobenius_distance(x, reconstruct(f)) / frobenius_norm(x);
        worst_err = std::max(worst_err, err);
        out.check(err <= 1e-9, "tensor " + std::to_string(t) + " error " + fmt(err));
        for (const Matrix& u : f.factors) {
            const double r = orthonormality_residual(u);
            worst_orth = std::max(worst_orth, r);
            out.check(r <= 1e-10, "tensor " + std::to_string(t) + " orthonormality " + fmt(r));
        }
    }
    out.summary = "100 tensors, worst error " + fmt(worst_err) + ", worst orthonormality " + fmt(worst_orth);
}

// --- 3 ---------------------------------------------------------------------

void truncation_bound(Outcome& out) {
    Rng rng(303);
    std::size_t violations = 0;
    for (int t = 0; t < 50; ++t) {
        const Shape shape = random_shape(rng, 2, 4, 7);
        const DenseTensor x = random_tensor(rng, shape);
        std::vector<std::size_t> r(shape.size());
        for (std::size_t n = 0; n < shape.size(); ++n) r[n] = 1 + rng.below(shape[n]);
        const MultilinearRank rank = MultilinearRank(r).clamped_to(shape);
        const double err = frobenius_distance(x, reconstruct(hosvd(x, rank)));
        const double err2 = err * err;
        const double bound = discarded_spectra(x, rank);
        const double slack = 1e-10 * frobenius_norm(x) * frobenius_norm(x);
        if (err2 > bound + slack) {
            ++violations;
            out.check(false, "tensor " + std::to_string(t) + " err^2 " + fmt(err2) + " > bound " + fmt(bound));
        }
        // Each mode alone already forces at least its own discarded energy.
        for (std::size_t n = 0; n < shape.size(); ++n) {
            const Eigen::JacobiSVD<Matrix> svd(unfold_by_index(x, n));
            double mode_tail = 0.0;
            for (Eigen::Index i = static_cast<Eigen::Index>(rank[n]); i < svd.singularValues().size(); ++i)
                mode_tail += svd.singularValues()(i) * svd.singularValues()(i);
            out.check(err2 + slack >= mode_tail, "tensor " + std::to_string(t) + " below mode " + std::to_string(n) +
                                                     " tail");
        }
    }
    out.summary = "50 tensors, " + std::to_string(violations) + " violations";
}

// --- 4 ---------------------------------------------------------------------

void majority_error(Outcome& out) {
    double worst_exact = 0.0, worst_mc = 0.0;
    for (std::size_t n = 1; n <= 15; ++n) {
        for (double p : {0.0, 0.05, 0.1, 0.3, 0.45, 0.5, 0.7, 1.0}) {
            const double d = std::abs(majority_error_probability(p, n) - majority_error_by_enumeration(p, n));
            worst_exact = std::max(worst_exact, d);
            out.check(d <= 1e-12, "enumeration N=" + std::to_string(n) + " p=" + fmt(p));
        }
    }
    std::uint64_t seed = 404;
    for (double p : {0.1, 0.3, 0.45}) {
        for (std::size_t n : {3, 11, 25}) {
            const double d =
                std::abs(majority_error_probability(p, n) - majority_error_by_simulation(p, n, 200000, seed++));
            worst_mc = std::max(worst_mc, d);
            out.check(d <= 0.005, "monte carlo N=" + std::to_string(n) + " p=" + fmt(p) + " delta " + fmt(d));
        }
    }
    double previous = 1.0;
    for (std::size_t n = 1; n <= 41; n += 2) {
        const double e = majority_error_probability(0.3, n);
        out.check(e <= previous, "not monotone at N=" + std::to_string(n));
        previous = e;
    }
    out.summary = "enumeration max delta " + fmt(worst_exact) + ", monte carlo max delta " + fmt(worst_mc) +
                  ", P(N=41, p=0.3) " + fmt(previous);
}

// --- 5 ---------------------------------------------------------------------

json benchmark_dataset() {
    return {{"shape", {8, 8, 3}}, {"classes", 4}, {"rank", {2, 2, 1}}, {"samples_per_class", 40}, {"noise", 0.05},
            {"seed", 7}};
}

json benchmark_config(const std::string& method) {
    json j = {{"dataset", {{"synthetic", benchmark_dataset()}}},
              {"method", method},
              {"seed", 7},
              {"train_fraction", 0.5},
              {"grid", {{{"kind", "knn"}, {"k", 3}}}}};
    if (method == "telvi") j["rank"] = {2, 2, 1};
    if (method == "bagging") {
        j["n_estimators"] = 12;
        j["pca_dim"] = 10;
    }
    return j;
}

void learner_counts(Outcome& out) {
    const auto data = synth_generate(SyntheticSpec::from_json(benchmark_dataset()));
    for (const auto& [rank, expected] : {std::pair{MultilinearRank{5, 5, 2}, std::size_t{12}},
                                         std::pair{MultilinearRank{2, 2, 1}, std::size_t{5}}}) {
        const TelviModel model = telvi_fit(data, rank, KnnParams{1}, 7);
        out.check(model.rank == rank, "rank " + rank.to_string() + " was clamped");
        out.check(model.base_models.size() == expected,
                  "rank " + rank.to_string() + " gave " + std::to_string(model.base_models.size()) + " learners");
        out.check(telvi_votes(model, data.samples.front()).size() == expected, "vote count " + rank.to_string());
    }
    out.summary = "(5,5,2) -> 12 learners, (2,2,1) -> 5 learners on shape (8,8,3)";
}

// --- 6 ---------------------------------------------------------------------

void ensemble_benefit(Outcome& out) {
    const ExperimentReport report = run_experiment(ExperimentConfig::from_json(benchmark_config("telvi")));
    const double mean = report.mean_learner_accuracy();
    out.check(report.accuracy > mean, "ensemble " + fmt17(report.accuracy) + " not above mean " + fmt17(mean));
    out.check(report.accuracy >= 0.9, "ensemble accuracy " + fmt17(report.accuracy) + " below 0.9");

    // Values produced by tests/reference/telvi_reference.py on the same seeds.
    const std::vector<double> golden_learners{0.975, 1.0, 1.0, 0.9375, 1.0};
    const double golden_mean = 0.98249999999999993;
    const double golden_ensemble = 1.0;
    out.check(report.per_learner.size() == golden_learners.size(), "learner count");
    for (std::size_t i = 0; i < std::min(report.per_learner.size(), golden_learners.size()); ++i) {
        out.check(report.per_learner[i].accuracy == golden_learners[i],
                  "learner " + std::to_string(i) + " accuracy " + fmt17(report.per_learner[i].accuracy) + " vs golden " +
                      fmt17(golden_learners[i]));
    }
    out.check(mean == golden_mean, "mean " + fmt17(mean) + " vs golden " + fmt17(golden_mean));
    out.check(report.accuracy == golden_ensemble, "ensemble differs from golden");
    out.summary = "ensemble " + fmt17(report.accuracy) + " vs mean per-learner " + fmt17(mean) + " (golden match)";
}

// --- 7 ---------------------------------------------------------------------

void baseline_parity(Outcome& out) {
    std::string summary;
    for (const char* method : {"telvi", "bagging"}) {
        const auto config = ExperimentConfig::from_json(benchmark_config(method));
        const ExperimentReport a = run_experiment(config);
        const ExperimentReport b = run_experiment(config, {4, true});
        const ExperimentReport c = run_experiment(config);
        out.check(a.canonical_json() == b.canonical_json() && a.canonical_json() == c.canonical_json(),
                  std::string(method) + " report differs between runs");
        out.check(a.learners_csv() == b.learners_csv() && a.learners_csv() == c.learners_csv(),
                  std::string(method) + " learner table differs between runs");
        const json j = json::parse(a.canonical_json());
        for (const char* key : {"accuracy", "per_learner", "train_size", "test_size", "method", "config"})
            out.check(j.contains(key), std::string(method) + " report lacks " + key);
        if (std::string(method) == "bagging") {
            out.check(a.per_learner.size() == 12, "bagging learner count " + std::to_string(a.per_learner.size()));
        }
        if (!summary.empty()) summary += ", ";
        summary += std::string(method) + " accuracy " + fmt(a.accuracy);
    }
    out.summary = summary + "; reports byte-identical over 3 runs each";
}

// --- 8 ---------------------------------------------------------------------

VectorDataset blobs(std::uint64_t seed, std::size_t per_class, std::size_t classes, std::size_t dim, double gap,
                    double spread) {
    Rng rng(seed);
    VectorDataset ds;
    ds.features.resize(static_cast<Eigen::Index>(per_class * classes), static_cast<Eigen::Index>(dim));
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            for (std::size_t d = 0; d < dim; ++d)
                ds.features(row, static_cast<Eigen::Index>(d)) = (d % classes == c ? gap : 0.0) + spread * rng.normal();
            ds.labels.push_back(static_cast<Label>(c));
        }
    }
    return ds;
}

void learner_contracts(Outcome& out) {
    Rng rng(808);
    double worst_grad = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t n = 10, dim = 4, classes = 3;
        const Matrix x = random_matrix(rng, n, dim);
        std::vector<std::size_t> targets(n);
        for (auto& t : targets) t = rng.below(classes);
        const Matrix w = random_matrix(rng, classes, dim);
        const Vector b = random_matrix(rng, classes, 1).col(0);
        const double l2 = 0.05;
        const auto obj = logit_objective(w, b, x, targets, l2);
        const double h = 1e-6;
        Matrix fd_w(classes, dim);
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                Matrix wp = w, wm = w;
                wp(i, j) += h;
                wm(i, j) -= h;
                fd_w(i, j) =
                    (logit_objective(wp, b, x, targets, l2).loss - logit_objective(wm, b, x, targets, l2).loss) / (2 * h);
            }
        }
        Vector fd_b(classes);
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            Vector bp = b, bm = b;
            bp(i) += h;
            bm(i) -= h;
            fd_b(i) = (logit_objective(w, bp, x, targets, l2).loss - logit_objective(w, bm, x, targets, l2).loss) / (2 * h);
        }
        Matrix analytic(classes, dim + 1), numeric(classes, dim + 1);
        analytic << obj.grad_weights, obj.grad_bias;
        numeric << fd_w, fd_b;
        const double rel = (analytic - numeric).norm() / numeric.norm();
        worst_grad = std::max(worst_grad, rel);
        out.check(rel <= 1e-5, "logit gradient trial " + std::to_string(trial) + " relative " + fmt(rel));
    }

    double worst_dual = 0.0;
    const VectorDataset svm_data = blobs(81, 20, 3, 4, 3.0, 1.0);
    for (const auto kernel : {KernelKind::rbf, KernelKind::poly}) {
        SvmParams p;
        p.kernel = kernel;
        p.degree = 2;
        p.c = 1.5;
        const auto model = fit(p, svm_data, 9);
        for (const auto& m : model.as<SvmModel>().machines) {
            for (Eigen::Index i = 0; i < m.alpha.size(); ++i) {
                out.check(m.alpha(i) > 0.0 && m.alpha(i) <= p.c + 1e-12, "svm alpha outside (0, C]");
            }
            worst_dual = std::max({worst_dual, std::abs(m.dual_balance), std::abs(m.alpha.dot(m.targets))});
        }
    }
    out.check(worst_dual <= 1e-6, "svm dual balance " + fmt(worst_dual));

    const VectorDataset tree_data = blobs(82, 30, 3, 3, 1.0, 1.2);
    double previous = 0.0;
    for (std::size_t depth = 1; depth <= 10; ++depth) {
        const auto model = fit(TreeParams{depth, 2}, tree_data, 0);
        const double acc = accuracy(predict(model, tree_data.features), tree_data.labels);
        out.check(acc >= previous, "tree accuracy dropped at depth " + std::to_string(depth));
        previous = acc;
    }

    for (std::uint64_t seed : {83, 84, 85}) {
        const VectorDataset ds = blobs(seed, 15, 3, 4, 2.0, 1.5);
        out.check(predict(fit(KnnParams{1}, ds, 0), ds.features) == ds.labels, "knn k=1 self-consistency");
    }
    out.summary = "logit gradient worst " + fmt(worst_grad) + ", svm dual worst " + fmt(worst_dual) +
                  ", tree depth-10 training accuracy " + fmt(previous);
}

// --- 9 ---------------------------------------------------------------------

FormatErrorKind error_kind(const std::function<void()>& f, bool& threw) {
    threw = false;
    try {
        f();
    } catch (const FormatError& e) {
        threw = true;
        return e.kind();
    }
    return FormatErrorKind::io;
}

void io_contracts(Outcome& out) {
    Rng rng(909);
    for (int t = 0; t < 50; ++t) {
        const Shape shape = random_shape(rng, 1, 4, 5);
        LabeledTensorDataset d;
        const std::size_t m = 1 + rng.below(8);
        for (std::size_t i = 0; i < m; ++i) {
            DenseTensor x = random_tensor(rng, shape);
            if (i == 0) {
                std::vector<double> v(x.data().begin(), x.data().end());
                v[0] = -0.0;
                v.back() = 1e-310;
                x = DenseTensor(shape, std::move(v));
            }
            d.samples.push_back(std::move(x));
            d.labels.push_back(static_cast<Label>(rng.below(1000)));
        }
        const auto bytes = encode_tensor_dataset(d);
        const auto back = decode_tensor_dataset(bytes);
        bool same = back.labels == d.labels && back.samples.size() == d.samples.size();
        for (std::size_t i = 0; same && i < m; ++i) {
            same = back.samples[i].shape() == d.samples[i].shape() &&
                   std::memcmp(back.samples[i].data().data(), d.samples[i].data().data(),
                               d.samples[i].size() * sizeof(double)) == 0;
        }
        out.check(same, "teld round trip " + std::to_string(t));
        out.check(encode_tensor_dataset(back) == bytes, "teld re-encode " + std::to_string(t));
    }

    std::ifstream in(kFixtures / "pnm_expected.json");
    const json expected = json::parse(in);
    std::size_t pnm_good = 0, pnm_bad = 0;
    for (const auto& [rel, e] : expected.items()) {
        const auto bytes = read_bytes(kFixtures / rel);
        if (e.contains("error")) {
            bool threw = false;
            const auto kind = error_kind([&] { decode_pnm(bytes); }, threw);
            out.check(threw && to_string(kind) == e.at("error").get<std::string>(), rel + " error kind");
            ++pnm_bad;
            continue;
        }
        const DenseTensor t = decode_pnm(bytes);
        out.check(t.shape() == e.at("shape").get<Shape>(), rel + " shape");
        out.check(std::vector<double>(t.data().begin(), t.data().end()) == e.at("values").get<std::vector<double>>(),
                  rel + " values");
        ++pnm_good;
    }

    const std::vector<std::pair<const char*, FormatErrorKind>> teld_cases{
        {"bad_magic.teld", FormatErrorKind::bad_magic},
        {"short_magic.teld", FormatErrorKind::bad_magic},
        {"cut_magic.teld", FormatErrorKind::unexpected_eof},
        {"bad_version.teld", FormatErrorKind::unsupported_version},
        {"bad_dtype.teld", FormatErrorKind::unsupported_dtype},
        {"truncated.teld", FormatErrorKind::unexpected_eof},
        {"truncated_header.teld", FormatErrorKind::unexpected_eof},
        {"zero_dim.teld", FormatErrorKind::invalid_shape},
        {"shape_overflow.teld", FormatErrorKind::shape_overflow},
        {"huge_count.teld", FormatErrorKind::unexpected_eof},
        {"bad_label.teld", FormatErrorKind::invalid_label},
        {"trailing.teld", FormatErrorKind::trailing_data},
    };
    for (const auto& [file, kind] : teld_cases) {
        bool threw = false;
        const auto got = error_kind([&] { load_tensor_dataset(kFixtures / "teld" / file); }, threw);
        out.check(threw && got == kind, std::string(file) + " gave " + (threw ? to_string(got) : "no error"));
    }
    out.summary = "50 TELD round trips, " + std::to_string(pnm_good) + " PNM fixtures decoded, " +
                  std::to_string(pnm_bad + teld_cases.size()) + " malformed fixtures rejected";
}

struct Criterion {
    int id;
    const char* name;
    double time_limit; // seconds, 0 for none
    std::function<void(Outcome&)> run;
};

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "mode-n product equals A times unfolding", 5.0, mode_product_equivalence},
        {2, "full-rank HOSVD is lossless with orthonormal factors", 10.0, hosvd_lossless},
        {3, "truncation error within discarded spectra", 0.0, truncation_bound},
        {4, "majority-vote error closed form", 0.0, majority_error},
        {5, "base learner count follows multilinear rank", 0.0, learner_counts},
        {6, "ensemble beats mean base learner on benchmark", 30.0, ensemble_benefit},
        {7, "bagging baseline and reproducible reports", 0.0, baseline_parity},
        {8, "learner contracts", 20.0, learner_contracts},
        {9, "dataset and image I/O", 0.0, io_contracts},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome out;
        const auto start = std::chrono::steady_clock::now();
        try {
            c.run(out);
        } catch (const std::exception& e) {
            out.check(false, std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (c.time_limit > 0.0) out.check(secs < c.time_limit, "took " + fmt(secs) + "s, limit " + fmt(c.time_limit) + "s");
        const bool pass = out.failed == 0;
        failed += pass ? 0 : 1;
        std::printf("%s criterion %d: %s [%.2fs] %s\n", pass ? "PASS" : "FAIL", c.id, c.name, secs,
                    out.summary.c_str());
        for (const auto& f : out.failures) std::printf("    %s\n", f.c_str());
        if (out.failed > out.failures.size())
            std::printf("    ... %zu more\n", out.failed - out.failures.size());
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
