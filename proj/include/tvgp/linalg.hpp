#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "tvgp/errors.hpp"
#include "tvgp/tensor.hpp"

namespace tvgp {

/// Lower Cholesky factor L with L L^T = a. Throws NumericalError if the
/// input is not numerically positive-definite. The strict upper triangle
/// of the input is ignored (the matrix is taken to be symmetric).
inline Matrix cholesky(const Matrix& a) {
    if (a.rows() != a.cols()) throw std::invalid_argument("cholesky: matrix not square");
    const std::size_t n = a.rows();
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(s > 0.0) || !std::isfinite(s)) {
                    throw NumericalError("cholesky: matrix not positive-definite (pivot " +
                                         std::to_string(s) + " at index " + std::to_string(i) +
                                         ")");
                }
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

inline bool is_symmetric(const Matrix& a, double tol = 1e-12) {
    if (a.rows() != a.cols()) return false;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = i + 1; j < a.cols(); ++j)
            if (std::abs(a(i, j) - a(j, i)) > tol) return false;
    return true;
}

/// Solve L x = b for lower-triangular L.
inline std::vector<double> solve_lower(const Matrix& l, std::span<const double> b) {
    const std::size_t n = l.rows();
    if (b.size() != n) throw std::invalid_argument("solve_lower: length mismatch");
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

/// Solve L^T x = b for lower-triangular L (back-substitution).
inline std::vector<double> solve_lower_transpose(const Matrix& l, std::span<const double> b) {
    const std::size_t n = l.rows();
    if (b.size() != n) throw std::invalid_argument("solve_lower_transpose: length mismatch");
    std::vector<double> x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

/// Solve (L L^T) x = b given the lower Cholesky factor.
inline std::vector<double> cholesky_solve(const Matrix& l, std::span<const double> b) {
    return solve_lower_transpose(l, solve_lower(l, b));
}

/// Inverse of an SPD matrix from its lower Cholesky factor.
inline Matrix spd_inverse_from_cholesky(const Matrix& l) {
    const std::size_t n = l.rows();
    Matrix inv(n, n);
    std::vector<double> e(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        e[j] = 1.0;
        std::vector<double> col = cholesky_solve(l, e);
        for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
        e[j] = 0.0;
    }
    // symmetrize away round-off so downstream symmetry checks hold exactly
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = 0.5 * (inv(i, j) + inv(j, i));
            inv(i, j) = v;
            inv(j, i) = v;
        }
    return inv;
}

/// log det of an SPD matrix from its lower Cholesky factor.
inline double logdet_from_cholesky(const Matrix& l) {
    double s = 0.0;
    for (std::size_t i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

/// Trace of A * B for symmetric A, B: sum_ij A_ij B_ij.
inline double trace_product_symmetric(const Matrix& a, const Matrix& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != a.cols()) {
        throw std::invalid_argument("trace_product_symmetric: shape mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * b(i, j);
    return s;
}

}  // namespace tvgp
