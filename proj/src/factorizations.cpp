#include "tel/factorizations.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace tel {

namespace {

void require_finite(const Matrix& m, const char* who) {
    if (!m.allFinite()) throw std::domain_error(std::string(who) + ": non-finite input entries");
}

} // namespace

Matrix SvdResult::reconstruct() const { return u * singular_values.asDiagonal() * v.transpose(); }

void canonicalize_signs(Matrix& u, Matrix* v) {
    for (Eigen::Index j = 0; j < u.cols(); ++j) {
        Eigen::Index pivot = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < u.rows(); ++i) {
            const double a = std::abs(u(i, j));
            if (a > best) {
                best = a;
                pivot = i;
            }
        }
        if (u.rows() > 0 && u(pivot, j) < 0.0) {
            u.col(j) = -u.col(j);
            if (v != nullptr && v->cols() > j) v->col(j) = -v->col(j);
        }
    }
}

SvdResult thin_svd(const Matrix& m) {
    if (m.size() == 0) throw std::invalid_argument("thin_svd: empty matrix");
    require_finite(m, "thin_svd");
    Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    SvdResult out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
    canonicalize_signs(out.u, &out.v);
    return out;
}

SvdResult truncated_svd(const Matrix& m, std::size_t r) {
    if (r < 1) throw std::invalid_argument("truncated_svd: rank must be at least 1");
    SvdResult full = thin_svd(m);
    const auto keep = static_cast<Eigen::Index>(std::min(r, full.rank()));
    if (keep == full.singular_values.size()) return full;
    return SvdResult{full.u.leftCols(keep), full.singular_values.head(keep), full.v.leftCols(keep)};
}

PcaModel pca_fit(const Matrix& data, std::size_t r) {
    if (data.rows() < 2) throw std::invalid_argument("pca_fit: need at least 2 samples");
    if (r < 1) throw std::invalid_argument("pca_fit: retained dimension must be at least 1");
    require_finite(data, "pca_fit");
    PcaModel model;
    model.mean = data.colwise().mean().transpose();
    const Matrix centered = data.rowwise() - model.mean.transpose();
    // Left singular vectors of the centered data's transpose are the principal axes.
    auto svd = truncated_svd(centered.transpose(), r);
    model.components = std::move(svd.u);
    return model;
}

Matrix pca_transform(const PcaModel& model, const Matrix& data) {
    if (static_cast<std::size_t>(data.cols()) != model.features()) {
        throw std::invalid_argument("pca_transform: data has " + std::to_string(data.cols()) +
                                    " features, model expects " + std::to_string(model.features()));
    }
    return (data.rowwise() - model.mean.transpose()) * model.components;
}

} // namespace tel
