#include "tel/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace tel {

namespace {

// Sizes of the index blocks before and after `mode` in the linearization.
struct ModeSplit {
    std::size_t left = 1;
    std::size_t extent = 1;
    std::size_t right = 1;
};

ModeSplit split_at(const Shape& shape, std::size_t mode) {
    ModeSplit s;
    for (std::size_t m = 0; m < mode; ++m) s.left *= shape[m];
    s.extent = shape[mode];
    for (std::size_t m = mode + 1; m < shape.size(); ++m) s.right *= shape[m];
    return s;
}

void check_shape(const Shape& shape) {
    if (shape.empty()) throw std::invalid_argument("tensor order must be at least 1");
    for (auto d : shape) {
        if (d == 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_to_string(shape));
    }
}

} // namespace

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) {
            throw std::overflow_error("shape " + shape_to_string(shape) + " overflows");
        }
        n *= d;
    }
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ')';
    return os.str();
}

DenseTensor::DenseTensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), 0.0);
}

DenseTensor::DenseTensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                                    shape_to_string(shape_));
    }
}

std::size_t DenseTensor::offset(std::span<const std::size_t> index) const {
    if (index.size() != shape_.size()) throw std::invalid_argument("index arity does not match tensor order");
    std::size_t off = 0;
    std::size_t stride = 1;
    for (std::size_t n = 0; n < index.size(); ++n) {
        if (index[n] >= shape_[n]) throw std::out_of_range("tensor index out of range");
        off += index[n] * stride;
        stride *= shape_[n];
    }
    return off;
}

Vector DenseTensor::flatten() const {
    return Eigen::Map<const Vector>(data_.data(), static_cast<Eigen::Index>(data_.size()));
}

Matrix unfold(const DenseTensor& tensor, std::size_t mode) {
    if (mode >= tensor.order()) {
        throw std::out_of_range("unfold: mode " + std::to_string(mode) + " out of range for order " +
                                std::to_string(tensor.order()));
    }
    const auto s = split_at(tensor.shape(), mode);
    const auto data = tensor.data();
    Matrix out(s.extent, s.left * s.right);
    // x[l + i*left + r*left*extent] -> (i, l + r*left)
    for (std::size_t r = 0; r < s.right; ++r) {
        for (std::size_t i = 0; i < s.extent; ++i) {
            const double* src = data.data() + i * s.left + r * s.left * s.extent;
            for (std::size_t l = 0; l < s.left; ++l) {
                out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l + r * s.left)) = src[l];
            }
        }
    }
    return out;
}

DenseTensor fold(const Matrix& matrix, std::size_t mode, const Shape& shape) {
    if (mode >= shape.size()) throw std::out_of_range("fold: mode out of range");
    const auto s = split_at(shape, mode);
    if (static_cast<std::size_t>(matrix.rows()) != s.extent ||
        static_cast<std::size_t>(matrix.cols()) != s.left * s.right) {
        throw std::invalid_argument("fold: matrix " + std::to_string(matrix.rows()) + "x" +
                                    std::to_string(matrix.cols()) + " inconsistent with shape " +
                                    shape_to_string(shape) + " at mode " + std::to_string(mode));
    }
    std::vector<double> data(s.left * s.extent * s.right);
    for (std::size_t r = 0; r < s.right; ++r) {
        for (std::size_t i = 0; i < s.extent; ++i) {
            double* dst = data.data() + i * s.left + r * s.left * s.extent;
            for (std::size_t l = 0; l < s.left; ++l) {
                dst[l] = matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l + r * s.left));
            }
        }
    }
    return DenseTensor(shape, std::move(data));
}

DenseTensor mode_n_product(const DenseTensor& tensor, const Matrix& factor, std::size_t mode) {
    if (mode >= tensor.order()) throw std::out_of_range("mode_n_product: mode out of range");
    if (static_cast<std::size_t>(factor.cols()) != tensor.dim(mode)) {
        throw std::invalid_argument("mode_n_product: factor has " + std::to_string(factor.cols()) +
                                    " columns, mode " + std::to_string(mode) + " has extent " +
                                    std::to_string(tensor.dim(mode)));
    }
    if (factor.rows() == 0) throw std::invalid_argument("mode_n_product: factor has no rows");
    Shape shape = tensor.shape();
    shape[mode] = static_cast<std::size_t>(factor.rows());
    const Matrix product = factor * unfold(tensor, mode);
    return fold(product, mode, shape);
}

DenseTensor outer_product(std::span<const Vector> vectors) {
    if (vectors.empty()) throw std::invalid_argument("outer_product: empty vector list");
    Shape shape;
    for (const auto& v : vectors) {
        if (v.size() == 0) throw std::invalid_argument("outer_product: empty vector");
        shape.push_back(static_cast<std::size_t>(v.size()));
    }
    std::vector<double> data(shape_size(shape));
    std::vector<std::size_t> index(shape.size(), 0);
    for (double& x : data) {
        double value = 1.0;
        for (std::size_t n = 0; n < shape.size(); ++n) value *= vectors[n](static_cast<Eigen::Index>(index[n]));
        x = value;
        for (std::size_t n = 0; n < shape.size(); ++n) {
            if (++index[n] < shape[n]) break;
            index[n] = 0;
        }
    }
    return DenseTensor(std::move(shape), std::move(data));
}

double frobenius_norm(const DenseTensor& tensor) {
    double sum = 0.0;
    for (double x : tensor.data()) sum += x * x;
    return std::sqrt(sum);
}

double frobenius_distance(const DenseTensor& a, const DenseTensor& b) {
    if (a.shape() != b.shape()) throw std::invalid_argument("frobenius_distance: shape mismatch");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return std::sqrt(sum);
}

} // namespace tel
