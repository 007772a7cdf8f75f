#include "tel/hosvd.hpp"

#include "tel/factorizations.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace tel {

MultilinearRank::MultilinearRank(std::vector<std::size_t> ranks) : ranks_(std::move(ranks)) {
    if (ranks_.empty()) throw std::invalid_argument("multilinear rank must have at least one mode");
    for (auto r : ranks_) {
        if (r < 1) throw std::invalid_argument("multilinear rank entries must be >= 1, got " + to_string());
    }
}

MultilinearRank MultilinearRank::parse(const std::string& text) {
    std::vector<std::size_t> ranks;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t used = 0;
        long long value = 0;
        try {
            value = std::stoll(item, &used);
        } catch (const std::exception&) {
            throw std::invalid_argument("bad multilinear rank '" + text + "'");
        }
        while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
        if (used != item.size() || value < 1) throw std::invalid_argument("bad multilinear rank '" + text + "'");
        ranks.push_back(static_cast<std::size_t>(value));
    }
    if (!text.empty() && text.back() == ',') throw std::invalid_argument("bad multilinear rank '" + text + "'");
    return MultilinearRank(std::move(ranks));
}

std::size_t MultilinearRank::total() const {
    std::size_t n = 0;
    for (auto r : ranks_) n += r;
    return n;
}

std::size_t MultilinearRank::storage_cost(const Shape& shape) const {
    std::size_t core = 1;
    std::size_t factors = 0;
    for (std::size_t n = 0; n < ranks_.size(); ++n) {
        core *= ranks_[n];
        factors += shape.at(n) * ranks_[n];
    }
    return core + factors;
}

MultilinearRank MultilinearRank::clamped_to(const Shape& shape) const {
    if (shape.size() != ranks_.size()) {
        throw std::invalid_argument("multilinear rank " + to_string() + " has " + std::to_string(ranks_.size()) +
                                    " modes, tensor has order " + std::to_string(shape.size()));
    }
    const std::size_t total_size = shape_size(shape);
    std::vector<std::size_t> out(ranks_.size());
    for (std::size_t n = 0; n < ranks_.size(); ++n) {
        out[n] = std::min({ranks_[n], shape[n], total_size / shape[n]});
    }
    return MultilinearRank(std::move(out));
}

std::string MultilinearRank::to_string() const {
    std::string s = "(";
    for (std::size_t i = 0; i < ranks_.size(); ++i) {
        if (i) s += ',';
        s += std::to_string(ranks_[i]);
    }
    return s + ")";
}

MultilinearRank full_rank(const Shape& shape) {
    return MultilinearRank(std::vector<std::size_t>(shape.size(), std::numeric_limits<std::size_t>::max()))
        .clamped_to(shape);
}

Shape HosvdFactors::shape() const {
    Shape s;
    for (const auto& f : factors) s.push_back(static_cast<std::size_t>(f.rows()));
    return s;
}

namespace {

DenseTensor project(const DenseTensor& x, const std::vector<Matrix>& factors) {
    DenseTensor core = x;
    for (std::size_t n = 0; n < factors.size(); ++n) core = mode_n_product(core, factors[n].transpose(), n);
    return core;
}

DenseTensor expand(DenseTensor core, const std::vector<Matrix>& factors) {
    for (std::size_t n = 0; n < factors.size(); ++n) core = mode_n_product(core, factors[n], n);
    return core;
}

// Full sign-canonical left singular bases of every unfolding; truncations are
// column prefixes of these.
std::vector<Matrix> full_bases(const DenseTensor& x) {
    std::vector<Matrix> bases;
    for (std::size_t n = 0; n < x.order(); ++n) bases.push_back(thin_svd(unfold(x, n)).u);
    return bases;
}

std::vector<Matrix> prefixes(const std::vector<Matrix>& bases, const MultilinearRank& rank) {
    std::vector<Matrix> out;
    for (std::size_t n = 0; n < bases.size(); ++n) {
        out.push_back(bases[n].leftCols(static_cast<Eigen::Index>(rank[n])));
    }
    return out;
}

double relative_error_from(const DenseTensor& x, double norm, const std::vector<Matrix>& factors) {
    if (norm == 0.0) return 0.0;
    return frobenius_distance(x, expand(project(x, factors), factors)) / norm;
}

} // namespace

HosvdFactors hosvd(const DenseTensor& x, const MultilinearRank& rank) {
    const MultilinearRank effective = rank.clamped_to(x.shape());
    for (double v : x.data()) {
        if (!std::isfinite(v)) throw std::domain_error("hosvd: non-finite tensor entries");
    }
    std::vector<Matrix> factors;
    factors.reserve(x.order());
    for (std::size_t n = 0; n < x.order(); ++n) factors.push_back(truncated_svd(unfold(x, n), effective[n]).u);
    DenseTensor core = project(x, factors);
    return HosvdFactors{std::move(core), std::move(factors), effective};
}

DenseTensor reconstruct(const HosvdFactors& f) {
    if (f.factors.size() != f.core.order()) throw std::invalid_argument("reconstruct: factor count does not match core order");
    for (std::size_t n = 0; n < f.factors.size(); ++n) {
        if (static_cast<std::size_t>(f.factors[n].cols()) != f.core.dim(n)) {
            throw std::invalid_argument("reconstruct: factor " + std::to_string(n) + " has " +
                                        std::to_string(f.factors[n].cols()) + " columns, core extent is " +
                                        std::to_string(f.core.dim(n)));
        }
    }
    return expand(f.core, f.factors);
}

double relative_error(const DenseTensor& x, const MultilinearRank& rank) {
    const double norm = frobenius_norm(x);
    if (norm == 0.0) return 0.0;
    return frobenius_distance(x, reconstruct(hosvd(x, rank))) / norm;
}

double mean_relative_error(std::span<const DenseTensor> samples, const MultilinearRank& rank) {
    if (samples.empty()) throw std::invalid_argument("mean_relative_error: no samples");
    double sum = 0.0;
    for (const auto& s : samples) sum += relative_error(s, rank);
    return sum / static_cast<double>(samples.size());
}

MultilinearRank rank_search(std::span<const DenseTensor> samples, double max_relative_error) {
    if (samples.empty()) throw std::invalid_argument("rank_search: empty sample list");
    if (!(max_relative_error >= 0.0)) throw std::invalid_argument("rank_search: threshold must be >= 0");
    const Shape& shape = samples.front().shape();
    for (const auto& s : samples) {
        if (s.shape() != shape) {
            throw std::invalid_argument("rank_search: sample shape " + shape_to_string(s.shape()) +
                                        " differs from " + shape_to_string(shape));
        }
    }

    std::vector<std::vector<Matrix>> bases;
    std::vector<double> norms;
    for (const auto& s : samples) {
        bases.push_back(full_bases(s));
        norms.push_back(frobenius_norm(s));
    }
    auto mean_error = [&](const MultilinearRank& rank) {
        double sum = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            sum += relative_error_from(samples[i], norms[i], prefixes(bases[i], rank));
        }
        return sum / static_cast<double>(samples.size());
    };

    MultilinearRank current = full_rank(shape);
    for (;;) {
        bool found = false;
        MultilinearRank best;
        double best_error = 0.0;
        std::size_t best_cost = 0;
        for (std::size_t n = 0; n < current.order(); ++n) {
            if (current[n] <= 1) continue;
            auto ranks = current.values();
            --ranks[n];
            MultilinearRank candidate(std::move(ranks));
            const double err = mean_error(candidate);
            const std::size_t cost = candidate.storage_cost(shape);
            if (!found || err < best_error || (err == best_error && cost < best_cost)) {
                found = true;
                best = candidate;
                best_error = err;
                best_cost = cost;
            }
        }
        if (!found || best_error > max_relative_error) return current;
        current = best;
    }
}

} // namespace tel
