#pragma once

#include "tel/tensor.hpp"

#include <cstddef>

namespace tel {

// Thin or truncated SVD, m ~= u * diag(singular_values) * v^T.
//
// Columns are sign-canonical: in each column of u the entry of largest
// magnitude (lowest row on ties) is nonnegative, and the matching column of v
// carries the compensating sign. Singular values are nonincreasing.
struct SvdResult {
    Matrix u;
    Vector singular_values;
    Matrix v;

    std::size_t rank() const { return static_cast<std::size_t>(singular_values.size()); }
    Matrix reconstruct() const;
};

SvdResult thin_svd(const Matrix& m);

// Leading r singular triplets; r is clamped to min(rows, cols).
SvdResult truncated_svd(const Matrix& m, std::size_t r);

// Flips column signs of u (and v when nonempty) so each u column's
// largest-magnitude entry is nonnegative.
void canonicalize_signs(Matrix& u, Matrix* v);

struct PcaModel {
    Vector mean;       // per-feature mean of the fitted data
    Matrix components; // features x r, orthonormal columns

    std::size_t dim() const { return static_cast<std::size_t>(components.cols()); }
    std::size_t features() const { return static_cast<std::size_t>(mean.size()); }
};

// data is samples x features. r is clamped to min(samples, features).
PcaModel pca_fit(const Matrix& data, std::size_t r);

// (data - mean) * components, row-wise.
Matrix pca_transform(const PcaModel& model, const Matrix& data);

} // namespace tel
