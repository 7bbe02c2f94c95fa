#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace polyalign {

using Vec = std::vector<double>;

inline constexpr double kDefaultTau = 0.07;

/// Dense row-major matrix. Only what the library needs: storage, indexing
/// and row views.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    const Vec& data() const noexcept { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    Vec data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw DimensionError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                             std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

inline bool all_finite(std::span<const double> a) {
    return std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); });
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vec normalized(std::span<const double> v, std::size_t index = 0) {
    const double n = norm(v);
    if (!(n > 0.0)) throw DegenerateInputError("zero-norm embedding", index);
    Vec out(v.begin(), v.end());
    for (double& x : out) x /= n;
    return out;
}

/// Cosine similarity. Throws DegenerateInputError when either side has zero
/// norm rather than returning a clamped value.
inline double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size() || u.empty()) {
        throw DimensionError("cosine_sim: dimension mismatch " + std::to_string(u.size()) + " vs " +
                             std::to_string(v.size()));
    }
    const double nu = norm(u);
    const double nv = norm(v);
    if (!(nu > 0.0)) throw DegenerateInputError("cosine_sim: zero-norm first argument");
    if (!(nv > 0.0)) throw DegenerateInputError("cosine_sim: zero-norm second argument");
    return dot(u, v) / (nu * nv);
}

/// Entry (i, j) is cosine_sim(queries[i], candidates[j]).
inline Matrix sim_matrix(const std::vector<Vec>& queries, const std::vector<Vec>& candidates) {
    if (queries.empty() || candidates.empty()) throw DimensionError("sim_matrix: empty input");
    const std::size_t dim = queries.front().size();
    for (std::size_t i = 0; i < queries.size(); ++i) {
        if (queries[i].size() != dim) throw DimensionError("sim_matrix: query " + std::to_string(i) + " has wrong dimension");
        if (!(norm(queries[i]) > 0.0)) throw DegenerateInputError("sim_matrix: zero-norm query", i);
    }
    for (std::size_t j = 0; j < candidates.size(); ++j) {
        if (candidates[j].size() != dim) throw DimensionError("sim_matrix: candidate " + std::to_string(j) + " has wrong dimension");
        if (!(norm(candidates[j]) > 0.0)) throw DegenerateInputError("sim_matrix: zero-norm candidate", j);
    }
    Matrix s(queries.size(), candidates.size());
    for (std::size_t i = 0; i < queries.size(); ++i)
        for (std::size_t j = 0; j < candidates.size(); ++j) s(i, j) = cosine_sim(queries[i], candidates[j]);
    return s;
}

inline double log_sum_exp(std::span<const double> x) {
    if (x.empty()) throw DimensionError("log_sum_exp: empty input");
    const double m = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    return m + std::log(s);
}

/// log softmax(scores / tau), via max subtraction.
inline Vec log_softmax_row(std::span<const double> scores, double tau) {
    if (!(tau > 0.0)) throw ConfigError("log_softmax_row: tau must be positive");
    if (scores.empty()) throw DimensionError("log_softmax_row: empty input");
    if (!all_finite(scores)) throw NumericError("log_softmax_row: non-finite score");
    Vec z(scores.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = scores[i] / tau;
    const double lse = log_sum_exp(z);
    for (double& v : z) v -= lse;
    return z;
}

inline Vec softmax_row(std::span<const double> scores, double tau) {
    Vec out = log_softmax_row(scores, tau);
    for (double& v : out) v = std::exp(v);
    return out;
}

} // namespace polyalign
