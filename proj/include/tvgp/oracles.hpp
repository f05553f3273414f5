#pragma once

// Dense reference routes for the structured code paths. Everything here
// materializes full Kronecker matrices and runs textbook formulas, so it is
// only usable at small sizes; the point is that it shares no code with the
// separable implementations it is checked against.

#include <cmath>
#include <numbers>
#include <vector>

#include "tvgp/linalg.hpp"
#include "tvgp/tensor.hpp"
#include "tvgp/tvgauss.hpp"

namespace tvgp::oracle {

/// Full covariance of vec(x): Kronecker product of the per-mode
/// covariances in descending mode order, matching the vec() convention.
inline Matrix kron_covariance_descending(const TensorNormalParams& p) {
    p.validate();
    const std::size_t order = p.mean.order();
    if (order == 0) return Matrix::identity(1);
    Matrix acc = dense_covariance(p.covariances[order - 1]);
    for (std::size_t m = order - 1; m-- > 0;) {
        acc = kron(acc, dense_covariance(p.covariances[m]));
    }
    return acc;
}

/// Textbook multivariate normal log density via a dense Cholesky solve.
inline double mvn_logpdf(std::span<const double> x, std::span<const double> mean,
                         const Matrix& cov) {
    const std::size_t n = cov.rows();
    if (x.size() != n || mean.size() != n) {
        throw std::invalid_argument("mvn_logpdf: length mismatch");
    }
    Matrix l = cholesky(cov);
    std::vector<double> r(n);
    for (std::size_t i = 0; i < n; ++i) r[i] = x[i] - mean[i];
    std::vector<double> w = solve_lower(l, r);  // quad = ||L^{-1} r||^2
    double quad = 0.0;
    for (double v : w) quad += v * v;
    return -0.5 * quad - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi) -
           0.5 * logdet_from_cholesky(l);
}

/// Tensor-variate log density through the fully dense route: vectorize,
/// assemble the Kronecker covariance, apply the multivariate formula.
inline double tensor_normal_logpdf_dense(const Tensor& x, const TensorNormalParams& p) {
    Tensor xv = vec(x);
    Tensor mv = vec(p.mean);
    return mvn_logpdf(xv.data(), mv.data(), kron_covariance_descending(p));
}

/// Textbook KL(N(mu0, s0) || N(mu1, s1)).
inline double mvn_kl(std::span<const double> mu0, const Matrix& s0, std::span<const double> mu1,
                     const Matrix& s1) {
    const std::size_t n = s0.rows();
    if (mu0.size() != n || mu1.size() != n || s1.rows() != n) {
        throw std::invalid_argument("mvn_kl: length mismatch");
    }
    Matrix l1 = cholesky(s1);
    Matrix s1_inv = spd_inverse_from_cholesky(l1);
    double trace = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) trace += s1_inv(i, j) * s0(j, i);
    std::vector<double> d(n);
    for (std::size_t i = 0; i < n; ++i) d[i] = mu1[i] - mu0[i];
    std::vector<double> sd = matvec(s1_inv, d);
    double quad = 0.0;
    for (std::size_t i = 0; i < n; ++i) quad += d[i] * sd[i];
    double logdets = logdet_from_cholesky(l1) - logdet_from_cholesky(cholesky(s0));
    return 0.5 * (trace + quad - static_cast<double>(n) + logdets);
}

/// KL between two tensor-variate Gaussians through the dense route.
inline double tensor_normal_kl_dense(const TensorNormalParams& q, const TensorNormalParams& p) {
    Tensor mq = vec(q.mean);
    Tensor mp = vec(p.mean);
    return mvn_kl(mq.data(), kron_covariance_descending(q), mp.data(),
                  kron_covariance_descending(p));
}

/// Dense evaluation of the separable quadratic form: build the rank-one
/// tensor from the factors, vectorize, assemble the Kronecker precision
/// (descending order), take the quadratic form by explicit loops.
inline double lowrank_quadratic_dense(const std::vector<Tensor>& mean_factors,
                                      const std::vector<Matrix>& precisions) {
    if (mean_factors.empty() || mean_factors.size() != precisions.size()) {
        throw std::invalid_argument("lowrank_quadratic_dense: factor/precision count mismatch");
    }
    Tensor v = vec(outer(mean_factors));
    const std::size_t order = precisions.size();
    Matrix big = precisions[order - 1];
    for (std::size_t m = order - 1; m-- > 0;) big = kron(big, precisions[m]);
    double s = 0.0;
    for (std::size_t i = 0; i < big.rows(); ++i)
        for (std::size_t j = 0; j < big.cols(); ++j) s += v[i] * big(i, j) * v[j];
    return s;
}

}  // namespace tvgp::oracle
