#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Shape = std::vector<std::size_t>;

// Product of all dimensions; throws std::overflow_error if it does not fit.
std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// N-way array of doubles stored column-major (first index varies fastest).
// Element (i_1, ..., i_N) lives at offset sum_n i_n * prod_{m<n} I_m.
class DenseTensor {
public:
    // Zero-filled tensor.
    explicit DenseTensor(Shape shape);
    DenseTensor(Shape shape, std::vector<double> data);

    std::size_t order() const { return shape_.size(); }
    const Shape& shape() const { return shape_; }
    std::size_t dim(std::size_t mode) const { return shape_.at(mode); }
    std::size_t size() const { return data_.size(); }

    std::span<const double> data() const { return data_; }

    std::size_t offset(std::span<const std::size_t> index) const;
    double operator()(std::span<const std::size_t> index) const { return data_[offset(index)]; }
    double operator()(std::initializer_list<std::size_t> index) const {
        return (*this)(std::span<const std::size_t>(index.begin(), index.size()));
    }
    double operator[](std::size_t linear) const { return data_[linear]; }

    // Column-major flattening; identical to data().
    Vector flatten() const;

    friend bool operator==(const DenseTensor&, const DenseTensor&) = default;

private:
    Shape shape_;
    std::vector<double> data_;
};

// Mode-n unfolding. Columns are the mode-n fibers; the surviving indices
// enumerate column-major (lowest surviving index fastest).
Matrix unfold(const DenseTensor& tensor, std::size_t mode);

// Inverse of unfold.
DenseTensor fold(const Matrix& matrix, std::size_t mode, const Shape& shape);

// Y = X x_mode A, i.e. Y_(mode) = A * X_(mode).
DenseTensor mode_n_product(const DenseTensor& tensor, const Matrix& factor, std::size_t mode);

// a_1 o a_2 o ... o a_N.
DenseTensor outer_product(std::span<const Vector> vectors);

double frobenius_norm(const DenseTensor& tensor);

// ||a - b||_F; shapes must agree.
double frobenius_distance(const DenseTensor& a, const DenseTensor& b);

} // namespace tel
