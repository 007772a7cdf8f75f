#pragma once

#include "tel/tensor.hpp"

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tel {

// Retained components per mode, (R_1, ..., R_N).
class MultilinearRank {
public:
    MultilinearRank() = default;
    explicit MultilinearRank(std::vector<std::size_t> ranks);
    MultilinearRank(std::initializer_list<std::size_t> ranks) : MultilinearRank(std::vector<std::size_t>(ranks)) {}

    // "2,2,1"
    static MultilinearRank parse(const std::string& text);

    std::size_t order() const { return ranks_.size(); }
    std::size_t operator[](std::size_t mode) const { return ranks_.at(mode); }
    const std::vector<std::size_t>& values() const { return ranks_; }

    // sum_n R_n, the number of factor vectors per sample.
    std::size_t total() const;
    // prod_n R_n + sum_n I_n R_n
    std::size_t storage_cost(const Shape& shape) const;

    // Per-mode clamp to min(I_n, prod_{m != n} I_m).
    MultilinearRank clamped_to(const Shape& shape) const;

    std::string to_string() const;

    friend bool operator==(const MultilinearRank&, const MultilinearRank&) = default;

private:
    std::vector<std::size_t> ranks_;
};

// Largest meaningful multilinear rank for a shape.
MultilinearRank full_rank(const Shape& shape);

// x ~= core x_1 factors[0] x_2 factors[1] ... x_N factors[N-1].
struct HosvdFactors {
    DenseTensor core;
    std::vector<Matrix> factors; // factor n is I_n x R_n with orthonormal columns
    MultilinearRank effective_rank;

    Shape shape() const;
};

// Truncated HOSVD. Factor n holds the leading R_n sign-canonical left singular
// vectors of unfold(x, n); the core is the projection of x onto them.
HosvdFactors hosvd(const DenseTensor& x, const MultilinearRank& rank);

DenseTensor reconstruct(const HosvdFactors& factors);

// ||x - reconstruct(hosvd(x, rank))||_F / ||x||_F, 0 for the zero tensor.
double relative_error(const DenseTensor& x, const MultilinearRank& rank);

// Greedy coordinate descent from full rank: repeatedly drop one component from
// the mode whose removal raises the mean relative error least (storage cost,
// then lowest mode, break ties) while the mean error stays <= max_relative_error.
MultilinearRank rank_search(std::span<const DenseTensor> samples, double max_relative_error);

// Mean relative reconstruction error of samples at `rank`.
double mean_relative_error(std::span<const DenseTensor> samples, const MultilinearRank& rank);

} // namespace tel
