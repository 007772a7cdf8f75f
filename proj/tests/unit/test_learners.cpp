#include "tel/learners.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <set>

using namespace tel;
using tel::testing::random_matrix;

namespace {

// Two or more Gaussian blobs in `dim` dimensions, centers spaced `gap` apart along each axis.
VectorDataset blobs(std::uint64_t seed, std::size_t per_class, std::size_t classes, std::size_t dim, double gap,
                    double spread = 1.0) {
    Rng rng(seed);
    VectorDataset ds;
    ds.features.resize(static_cast<Eigen::Index>(per_class * classes), static_cast<Eigen::Index>(dim));
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i, ++row) {
            for (std::size_t d = 0; d < dim; ++d) {
                const double center = (d % classes == c) ? gap : 0.0;
                ds.features(row, static_cast<Eigen::Index>(d)) = center + spread * rng.normal();
            }
            ds.labels.push_back(static_cast<Label>(c));
        }
    }
    return ds;
}

VectorDataset from_rows(std::initializer_list<std::initializer_list<double>> rows, LabelVector labels) {
    VectorDataset ds;
    ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) ds.features(i, j++) = v;
        ++i;
    }
    ds.labels = std::move(labels);
    return ds;
}

std::vector<ClassifierSpec> all_kinds() {
    SvmParams poly;
    poly.kernel = KernelKind::poly;
    poly.degree = 2;
    return {KnnParams{3}, TreeParams{}, LogitParams{}, SvmParams{}, poly};
}

} // namespace

TEST_CASE("classifier spec json round trip and validation") {
    for (const auto& spec : all_kinds()) CHECK(ClassifierSpec::from_json(spec.to_json()) == spec);

    const auto svm = ClassifierSpec::from_json({{"kind", "svm"}, {"kernel", "poly"}, {"C", 2.0}, {"degree", 2}});
    CHECK(svm.kind() == LearnerKind::svm);
    CHECK(svm.as<SvmParams>().kernel == KernelKind::poly);
    CHECK(svm.as<SvmParams>().c == 2.0);
    CHECK(svm.as<SvmParams>().gamma == SvmParams{}.gamma);

    CHECK_THROWS_AS(ClassifierSpec::from_json({{"kind", "forest"}}), std::invalid_argument);
    CHECK_THROWS_AS(ClassifierSpec::from_json({{"kind", "knn"}, {"k", 0}}), std::invalid_argument);
    CHECK_THROWS_AS(ClassifierSpec::from_json({{"kind", "knn"}, {"gamma", 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(ClassifierSpec::from_json({{"kind", "svm"}, {"C", -1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(ClassifierSpec::from_json({{"kind", "knn"}, {"distance", "manhattan"}}), std::invalid_argument);
    CHECK_THROWS_AS(ClassifierSpec::from_json({{"kind", "tree"}, {"criterion", "entropy"}}), std::invalid_argument);
}

TEST_CASE("fit preconditions") {
    const VectorDataset one_class = from_rows({{0.0}, {1.0}, {2.0}}, {4, 4, 4});
    CHECK_NOTHROW(fit(KnnParams{1}, one_class, 0));
    CHECK_THROWS_AS(fit(TreeParams{}, one_class, 0), std::invalid_argument);
    CHECK_THROWS_AS(fit(LogitParams{}, one_class, 0), std::invalid_argument);
    CHECK_THROWS_AS(fit(SvmParams{}, one_class, 0), std::invalid_argument);

    VectorDataset empty;
    empty.features.resize(0, 2);
    CHECK_THROWS_AS(fit(KnnParams{1}, empty, 0), std::invalid_argument);

    VectorDataset ragged = one_class;
    ragged.labels.pop_back();
    CHECK_THROWS_AS(fit(KnnParams{1}, ragged, 0), std::invalid_argument);
}

TEST_CASE("knn with k=1 reproduces its training labels") {
    const VectorDataset ds = blobs(1, 15, 3, 4, 2.0, 1.5);
    const auto model = fit(KnnParams{1}, ds, 0);
    CHECK(predict(model, ds.features) == ds.labels);
}

TEST_CASE("knn tie rules") {
    // Query at 0 is equidistant from -1 (label 1) and +1 (label 0): the lower sample index wins.
    const VectorDataset ds = from_rows({{1.0}, {-1.0}, {5.0}, {6.0}}, {0, 1, 1, 0});
    CHECK(predict(fit(KnnParams{1}, ds, 0), Matrix::Zero(1, 1)).front() == 0);

    // Two neighbours with one vote each: the lower label wins.
    const VectorDataset split = from_rows({{1.0}, {-1.0}, {9.0}}, {3, 2, 3});
    CHECK(predict(fit(KnnParams{2}, split, 0), Matrix::Zero(1, 1)).front() == 2);
}

TEST_CASE("tree finds the single perfect split") {
    const VectorDataset ds = from_rows({{0.0}, {1.0}, {10.0}, {11.0}}, {0, 0, 1, 1});
    const auto model = fit(TreeParams{1, 2}, ds, 0);
    const auto& tree = model.as<TreeModel>();
    CHECK(tree.depth() == 1);
    CHECK(tree.nodes.front().feature == 0);
    CHECK(tree.nodes.front().threshold == doctest::Approx(5.5));
    CHECK(predict(model, ds.features) == ds.labels);
}

TEST_CASE("tree training accuracy is monotone in depth") {
    const VectorDataset ds = blobs(2, 30, 3, 3, 1.0, 1.2);
    double previous = 0.0;
    for (std::size_t depth = 1; depth <= 10; ++depth) {
        const auto model = fit(TreeParams{depth, 2}, ds, 0);
        CHECK(model.as<TreeModel>().depth() <= depth);
        const double acc = accuracy(predict(model, ds.features), ds.labels);
        CHECK(acc >= previous);
        previous = acc;
    }
    CHECK(previous == 1.0);
}

TEST_CASE("logit separates linearly separable blobs") {
    const VectorDataset ds = blobs(3, 25, 2, 2, 8.0, 1.0);
    const auto model = fit(LogitParams{}, ds, 0);
    CHECK(accuracy(predict(model, ds.features), ds.labels) == 1.0);
}

TEST_CASE("logit gradient matches finite differences") {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const std::size_t n = 8, dim = 3, classes = 3;
        const Matrix x = random_matrix(rng, n, dim);
        std::vector<std::size_t> targets(n);
        for (auto& t : targets) t = rng.below(classes);
        const Matrix w = random_matrix(rng, classes, dim);
        const Vector b = random_matrix(rng, classes, 1).col(0);
        const double l2 = 0.1;
        const auto obj = logit_objective(w, b, x, targets, l2);

        const double h = 1e-6;
        Matrix fd_w(classes, dim);
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) {
                Matrix wp = w, wm = w;
                wp(i, j) += h;
                wm(i, j) -= h;
                fd_w(i, j) = (logit_objective(wp, b, x, targets, l2).loss - logit_objective(wm, b, x, targets, l2).loss) /
                             (2 * h);
            }
        }
        Vector fd_b(classes);
        for (Eigen::Index i = 0; i < b.size(); ++i) {
            Vector bp = b, bm = b;
            bp(i) += h;
            bm(i) -= h;
            fd_b(i) = (logit_objective(w, bp, x, targets, l2).loss - logit_objective(w, bm, x, targets, l2).loss) / (2 * h);
        }
        CHECK((obj.grad_weights - fd_w).norm() <= 1e-5 * fd_w.norm());
        CHECK((obj.grad_bias - fd_b).norm() <= 1e-5 * std::max(fd_b.norm(), 1e-3));
    }
}

TEST_CASE("polynomial svm fits xor") {
    const VectorDataset xor_data = from_rows({{1, 1}, {-1, -1}, {1, -1}, {-1, 1}}, {0, 0, 1, 1});
    SvmParams p;
    p.kernel = KernelKind::poly;
    p.degree = 2;
    p.gamma = 1.0;
    p.coef0 = 1.0;
    p.c = 10.0;
    const auto model = fit(p, xor_data, 5);
    CHECK(predict(model, xor_data.features) == xor_data.labels);
}

TEST_CASE("svm dual constraints hold on convergence") {
    const VectorDataset ds = blobs(6, 20, 3, 4, 3.0, 1.0);
    for (const auto kernel : {KernelKind::rbf, KernelKind::poly}) {
        SvmParams p;
        p.kernel = kernel;
        p.degree = 2;
        p.c = 1.5;
        const auto model = fit(p, ds, 9);
        for (const auto& m : model.as<SvmModel>().machines) {
            for (Eigen::Index i = 0; i < m.alpha.size(); ++i) {
                CHECK(m.alpha(i) > 0.0);
                CHECK(m.alpha(i) <= p.c);
            }
            CHECK(std::abs(m.dual_balance) <= 1e-6);
            CHECK(std::abs(m.alpha.dot(m.targets)) <= 1e-6);
        }
        CHECK(accuracy(predict(model, ds.features), ds.labels) >= 0.9);
    }
}

TEST_CASE("kernel values") {
    Vector a(2), b(2);
    a << 1, 2;
    b << 3, -1;
    SvmParams poly;
    poly.kernel = KernelKind::poly;
    poly.gamma = 0.5;
    poly.coef0 = 2;
    poly.degree = 3;
    CHECK(kernel_value(poly, a, b) == doctest::Approx(std::pow(0.5 * 1 + 2, 3)));
    SvmParams rbf;
    rbf.gamma = 0.25;
    CHECK(kernel_value(rbf, a, b) == doctest::Approx(std::exp(-0.25 * 13)));
}

TEST_CASE("predict contracts for every kind") {
    const VectorDataset ds = blobs(7, 12, 3, 3, 3.0, 1.0);
    for (const auto& spec : all_kinds()) {
        const auto model = fit(spec, ds, 11);
        CHECK(model.class_labels() == LabelVector{0, 1, 2});
        CHECK(predict(model, Matrix(0, 3)).empty());
        CHECK_THROWS_AS(predict(model, Matrix::Zero(2, 4)), std::invalid_argument);

        Rng rng(8);
        const Matrix probe = 5.0 * random_matrix(rng, 40, 3);
        const auto labels = predict(model, probe);
        for (auto l : labels) CHECK(std::find(model.class_labels().begin(), model.class_labels().end(), l) !=
                                    model.class_labels().end());

        const auto again = fit(spec, ds, 11);
        CHECK(predict(again, probe) == labels);
        CHECK(again.to_json() == model.to_json());

        const auto restored = TrainedModel::from_json(model.to_json());
        CHECK(predict(restored, probe) == labels);
    }
}

TEST_CASE("labels need not be contiguous") {
    const VectorDataset ds = from_rows({{0.0}, {0.5}, {10.0}, {10.5}}, {7, 7, 2, 2});
    for (const auto& spec : all_kinds()) {
        const auto model = fit(spec, ds, 1);
        CHECK(model.class_labels() == LabelVector{2, 7});
        CHECK(predict(model, ds.features) == ds.labels);
    }
}

TEST_CASE("folds partition the samples") {
    const auto folds = make_folds(23, 5, 3);
    REQUIRE(folds.size() == 5);
    std::set<std::size_t> seen;
    for (const auto& f : folds) {
        CHECK(f.size() >= 4);
        CHECK(f.size() <= 5);
        seen.insert(f.begin(), f.end());
    }
    CHECK(seen.size() == 23);
    CHECK(make_folds(23, 5, 3) == folds);
    CHECK_THROWS_AS(make_folds(3, 5, 0), std::invalid_argument);
    CHECK_THROWS_AS(make_folds(10, 1, 0), std::invalid_argument);
}

TEST_CASE("grid search") {
    const VectorDataset ds = blobs(9, 10, 2, 2, 4.0, 1.0);
    const std::vector<ClassifierSpec> single{TreeParams{3, 2}};
    CHECK(grid_search_cv(single, ds, 5, 1) == single.front());

    const std::vector<ClassifierSpec> twins{KnnParams{3}, KnnParams{3}};
    CHECK(grid_search_cv_scored(twins, ds, 5, 1).best_index == 0);

    CHECK_THROWS_AS(grid_search_cv({}, ds, 5, 1), std::invalid_argument);
    CHECK_THROWS_AS(grid_search_cv(single, ds, 50, 1), std::invalid_argument);
}

TEST_CASE("grid search prefers k=1 when large k is swamped by duplicates") {
    // Each class is one point repeated; class 0 has many more copies, so a
    // large neighbourhood always votes 0 and misclassifies every class-1 point.
    VectorDataset ds;
    ds.features.resize(36, 1);
    for (int i = 0; i < 36; ++i) {
        ds.features(i, 0) = i < 30 ? 0.0 : 10.0;
        ds.labels.push_back(i < 30 ? 0 : 1);
    }
    const std::vector<ClassifierSpec> grid{KnnParams{25}, KnnParams{1}};
    const auto result = grid_search_cv_scored(grid, ds, 5, 2);
    CHECK(result.best_index == 1);
    CHECK(result.mean_accuracy[1] == 1.0);
    CHECK(result.mean_accuracy[0] < 1.0);
}
