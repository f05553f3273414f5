#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tvgp/linalg.hpp"
#include "tvgp/tensor.hpp"

namespace tvgp {

/// Numerically safe softplus, log(1 + exp(x)).
inline double softplus(double x) {
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

/// Inverse of softplus on (0, inf); for large y the identity is exact to
/// double precision.
inline double softplus_inverse(double y) {
    if (!(y > 0.0)) throw std::invalid_argument("softplus_inverse: argument must be > 0");
    if (y > 30.0) return y;
    return std::log(std::expm1(y));
}

/// Lower-bidiagonal Cholesky factor L of a precision matrix: only the main
/// diagonal (strictly positive) and the first subdiagonal are stored. The
/// implied precision L L^T is tridiagonal SPD, so log-determinants, solves
/// and products all run in O(n).
class BidiagonalCholesky {
public:
    BidiagonalCholesky(std::vector<double> diag, std::vector<double> subdiag)
        : diag_(std::move(diag)), sub_(std::move(subdiag)) {
        if (diag_.empty()) throw std::invalid_argument("BidiagonalCholesky: empty diagonal");
        if (sub_.size() + 1 != diag_.size()) {
            throw std::invalid_argument("BidiagonalCholesky: subdiagonal length must be n-1");
        }
        for (double d : diag_) {
            if (!(d > 0.0)) {
                throw std::invalid_argument("BidiagonalCholesky: diagonal entries must be > 0, got " +
                                            std::to_string(d));
            }
        }
    }

    static BidiagonalCholesky identity(std::size_t n) {
        return BidiagonalCholesky(std::vector<double>(n, 1.0), std::vector<double>(n - 1, 0.0));
    }

    /// Map raw (unconstrained) parameters to a valid factor: the diagonal
    /// goes through softplus plus a small positive floor, the subdiagonal
    /// passes through unchanged.
    static BidiagonalCholesky from_unconstrained(std::span<const double> raw_diag,
                                                 std::span<const double> raw_subdiag,
                                                 double floor = 1e-4) {
        std::vector<double> d(raw_diag.size());
        for (std::size_t i = 0; i < d.size(); ++i) d[i] = softplus(raw_diag[i]) + floor;
        return BidiagonalCholesky(std::move(d), {raw_subdiag.begin(), raw_subdiag.end()});
    }

    std::size_t size() const { return diag_.size(); }
    const std::vector<double>& diag() const { return diag_; }
    const std::vector<double>& subdiag() const { return sub_; }

    /// Number of stored parameters, 2n - 1.
    std::size_t parameter_count() const { return diag_.size() + sub_.size(); }

    /// log|Sigma| for Sigma = (L L^T)^{-1}, i.e. -2 sum_i log diag_i. O(n).
    double logdet_covariance() const {
        double s = 0.0;
        for (double d : diag_) s += std::log(d);
        return -2.0 * s;
    }

    /// y = L v. O(n).
    std::vector<double> apply(std::span<const double> v) const {
        check_length(v.size(), "apply");
        const std::size_t n = diag_.size();
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = diag_[i] * v[i];
            if (i > 0) y[i] += sub_[i - 1] * v[i - 1];
        }
        return y;
    }

    /// y = L^T v. O(n).
    std::vector<double> apply_transpose(std::span<const double> v) const {
        check_length(v.size(), "apply_transpose");
        const std::size_t n = diag_.size();
        std::vector<double> y(n);
        for (std::size_t i = 0; i < n; ++i) {
            y[i] = diag_[i] * v[i];
            if (i + 1 < n) y[i] += sub_[i] * v[i + 1];
        }
        return y;
    }

    /// Solve L x = v (forward substitution). O(n).
    std::vector<double> solve(std::span<const double> v) const {
        check_length(v.size(), "solve");
        const std::size_t n = diag_.size();
        std::vector<double> x(n);
        for (std::size_t i = 0; i < n; ++i) {
            double s = v[i];
            if (i > 0) s -= sub_[i - 1] * x[i - 1];
            x[i] = s / diag_[i];
        }
        return x;
    }

    /// Solve L^T x = v (back-substitution). O(n).
    std::vector<double> solve_transpose(std::span<const double> v) const {
        check_length(v.size(), "solve_transpose");
        const std::size_t n = diag_.size();
        std::vector<double> x(n);
        for (std::size_t i = n; i-- > 0;) {
            double s = v[i];
            if (i + 1 < n) s -= sub_[i] * x[i + 1];
            x[i] = s / diag_[i];
        }
        return x;
    }

    Matrix to_dense_factor() const {
        const std::size_t n = diag_.size();
        Matrix l(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            l(i, i) = diag_[i];
            if (i > 0) l(i, i - 1) = sub_[i - 1];
        }
        return l;
    }

    /// Dense precision L L^T (tridiagonal by construction).
    Matrix to_dense_precision() const {
        const std::size_t n = diag_.size();
        Matrix p(n, n);
        for (std::size_t i = 0; i < n; ++i) {
            double row_diag = diag_[i] * diag_[i];
            if (i > 0) row_diag += sub_[i - 1] * sub_[i - 1];
            p(i, i) = row_diag;
            if (i + 1 < n) {
                double off = sub_[i] * diag_[i];
                p(i, i + 1) = off;
                p(i + 1, i) = off;
            }
        }
        return p;
    }

    /// Dense covariance (L L^T)^{-1}. Guarded by a size cap: this is a test
    /// oracle bridge and KL trace input, not a large-n code path.
    Matrix to_dense_covariance(std::size_t cap = 64) const {
        const std::size_t n = diag_.size();
        if (n > cap) {
            throw std::invalid_argument("to_dense_covariance: n = " + std::to_string(n) +
                                        " exceeds cap " + std::to_string(cap));
        }
        // (L L^T)^{-1} = L^{-T} L^{-1}, column by column via the O(n) solves
        Matrix sigma(n, n);
        std::vector<double> e(n, 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            e[j] = 1.0;
            std::vector<double> col = solve_transpose(solve(e));
            for (std::size_t i = 0; i < n; ++i) sigma(i, j) = col[i];
            e[j] = 0.0;
        }
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) {
                double v = 0.5 * (sigma(i, j) + sigma(j, i));
                sigma(i, j) = v;
                sigma(j, i) = v;
            }
        return sigma;
    }

private:
    void check_length(std::size_t len, const char* op) const {
        if (len != diag_.size()) {
            throw std::invalid_argument(std::string(op) + ": vector length " + std::to_string(len) +
                                        " vs factor size " + std::to_string(diag_.size()));
        }
    }

    std::vector<double> diag_;
    std::vector<double> sub_;
};

/// Tensor-typed convenience overload matching the rest of the API.
inline Tensor solve_transpose(const BidiagonalCholesky& f, const Tensor& v) {
    if (v.order() != 1) throw std::invalid_argument("solve_transpose: order-1 tensor required");
    return Tensor::vector(f.solve_transpose(v.data()));
}

/// Best Markov-chain surrogate of a dense covariance: the unique Gaussian
/// with tridiagonal precision whose covariance matches `omega` on the main
/// diagonal and the first off-diagonal. Built by chaining the pairwise
/// conditionals x_{i+1} | x_i of `omega`, whose joint precision is exactly
/// tridiagonal, then taking its banded Cholesky factor.
inline BidiagonalCholesky markov_approximation(const Matrix& omega) {
    const std::size_t n = omega.rows();
    if (n == 0 || omega.cols() != n) {
        throw std::invalid_argument("markov_approximation: square matrix required");
    }
    // dd holds the conditional variances of the chain, a the regression
    // coefficients x_{i+1} = a_i x_i + noise
    std::vector<double> dd(n), a(n > 0 ? n - 1 : 0);
    dd[0] = omega(0, 0);
    if (!(dd[0] > 0.0)) throw std::invalid_argument("markov_approximation: not positive definite");
    for (std::size_t i = 0; i + 1 < n; ++i) {
        a[i] = omega(i + 1, i) / omega(i, i);
        dd[i + 1] = omega(i + 1, i + 1) - omega(i + 1, i) * omega(i + 1, i) / omega(i, i);
        if (!(dd[i + 1] > 0.0)) {
            throw std::invalid_argument("markov_approximation: not positive definite");
        }
    }
    // precision Q = B^T D^{-1} B with B unit lower bidiagonal, then the
    // Cholesky of a tridiagonal SPD matrix stays bidiagonal
    std::vector<double> diag(n), sub(n > 0 ? n - 1 : 0);
    double q_prev = 1.0 / dd[0] + (n > 1 ? a[0] * a[0] / dd[1] : 0.0);
    diag[0] = std::sqrt(q_prev);
    for (std::size_t i = 0; i + 1 < n; ++i) {
        const double q_off = -a[i] / dd[i + 1];
        const double q_next = 1.0 / dd[i + 1] + (i + 2 < n ? a[i + 1] * a[i + 1] / dd[i + 2] : 0.0);
        sub[i] = q_off / diag[i];
        const double rem = q_next - sub[i] * sub[i];
        if (!(rem > 0.0)) {
            throw std::invalid_argument("markov_approximation: factorization broke down");
        }
        diag[i + 1] = std::sqrt(rem);
    }
    return BidiagonalCholesky(std::move(diag), std::move(sub));
}

}  // namespace tvgp
