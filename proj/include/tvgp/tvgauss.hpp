#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <variant>
#include <vector>

#include "tvgp/bidiagonal.hpp"
#include "tvgp/errors.hpp"
#include "tvgp/linalg.hpp"
#include "tvgp/tensor.hpp"

namespace tvgp {

/// Mode covariance given explicitly as a dense SPD matrix. Symmetry and
/// factorizability are checked at construction; the lower Cholesky factor
/// is kept alongside for log-dets, solves and sampling.
struct DenseCovariance {
    Matrix sigma;
    Matrix chol;

    explicit DenseCovariance(Matrix m) : sigma(std::move(m)), chol(1, 1) {
        if (!is_symmetric(sigma, 1e-12)) {
            throw std::invalid_argument("DenseCovariance: matrix not symmetric to 1e-12");
        }
        chol = cholesky(sigma);  // throws NumericalError if not PD
    }
};

/// Mode covariance given implicitly through the bidiagonal Cholesky factor
/// L of its precision: Sigma^{-1} = L L^T.
struct PrecisionCholesky {
    BidiagonalCholesky factor;
};

using ModeCovariance = std::variant<DenseCovariance, PrecisionCholesky>;

inline std::size_t side(const ModeCovariance& c) {
    if (const auto* d = std::get_if<DenseCovariance>(&c)) return d->sigma.rows();
    return std::get<PrecisionCholesky>(c).factor.size();
}

inline double logdet_covariance(const ModeCovariance& c) {
    if (const auto* d = std::get_if<DenseCovariance>(&c)) return logdet_from_cholesky(d->chol);
    return std::get<PrecisionCholesky>(c).factor.logdet_covariance();
}

/// Sigma as a dense matrix (test scale / per-mode sizes only).
inline Matrix dense_covariance(const ModeCovariance& c) {
    if (const auto* d = std::get_if<DenseCovariance>(&c)) return d->sigma;
    return std::get<PrecisionCholesky>(c).factor.to_dense_covariance();
}

/// Sigma^{-1} as a dense matrix.
inline Matrix dense_inverse_covariance(const ModeCovariance& c) {
    if (const auto* d = std::get_if<DenseCovariance>(&c)) return spd_inverse_from_cholesky(d->chol);
    return std::get<PrecisionCholesky>(c).factor.to_dense_precision();
}

/// Sigma^{-1} v.
inline std::vector<double> apply_inverse(const ModeCovariance& c, std::span<const double> v) {
    if (const auto* d = std::get_if<DenseCovariance>(&c)) return cholesky_solve(d->chol, v);
    const auto& f = std::get<PrecisionCholesky>(c).factor;
    return f.apply(f.apply_transpose(v));
}

/// S v for a square root S with S S^T = Sigma: the lower Cholesky factor in
/// the dense case, L^{-T} (applied by back-substitution) in the
/// precision-Cholesky case.
inline std::vector<double> apply_sqrt(const ModeCovariance& c, std::span<const double> v) {
    if (const auto* d = std::get_if<DenseCovariance>(&c)) {
        std::vector<double> y(v.size(), 0.0);
        for (std::size_t i = 0; i < d->chol.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j <= i; ++j) s += d->chol(i, j) * v[j];
            y[i] = s;
        }
        return y;
    }
    return std::get<PrecisionCholesky>(c).factor.solve_transpose(v);
}

/// Parameters of a tensor-variate Gaussian: mean tensor plus one covariance
/// per mode. An order-0 mean with no covariances is the unit-variance
/// scalar Gaussian.
struct TensorNormalParams {
    Tensor mean;
    std::vector<ModeCovariance> covariances;

    void validate() const {
        if (covariances.size() != mean.order()) {
            throw std::invalid_argument("TensorNormalParams: need one covariance per mode");
        }
        for (std::size_t m = 1; m <= covariances.size(); ++m) {
            if (side(covariances[m - 1]) != mean.dim(m)) {
                throw std::invalid_argument("TensorNormalParams: covariance side mismatch at mode " +
                                            std::to_string(m));
            }
        }
    }
};

namespace detail {

/// Apply a square column transform along one mode: unfold, map each column,
/// fold back.
template <typename ColumnFn>
Tensor transform_mode(const Tensor& t, std::size_t mode, ColumnFn&& f) {
    Matrix u = unfold(t, mode);
    std::vector<double> col(u.rows());
    for (std::size_t c = 0; c < u.cols(); ++c) {
        for (std::size_t r = 0; r < u.rows(); ++r) col[r] = u(r, c);
        std::vector<double> out = f(col);
        for (std::size_t r = 0; r < u.rows(); ++r) u(r, c) = out[r];
    }
    return fold(u, mode, t.dims());
}

}  // namespace detail

/// Log density of the tensor-variate Gaussian. The quadratic form is the
/// inner product of the residual with the residual transformed by each
/// mode's inverse covariance via mode products; per-mode log-dets carry
/// D/(2 D_m) weights. Never materializes the D x D Kronecker covariance.
inline double log_pdf(const Tensor& x, const TensorNormalParams& p) {
    p.validate();
    if (!x.same_dims(p.mean)) throw std::invalid_argument("log_pdf: x dims mismatch");
    const double total = static_cast<double>(x.size());

    Tensor residual = sub(x, p.mean);
    Tensor transformed = residual;
    for (std::size_t m = 1; m <= p.covariances.size(); ++m) {
        transformed = detail::transform_mode(transformed, m, [&](std::span<const double> col) {
            return apply_inverse(p.covariances[m - 1], col);
        });
    }
    const double quad = dot(residual, transformed);

    double logdets = 0.0;
    for (std::size_t m = 1; m <= p.covariances.size(); ++m) {
        const double dm = static_cast<double>(side(p.covariances[m - 1]));
        logdets += total / (2.0 * dm) * logdet_covariance(p.covariances[m - 1]);
    }
    return -0.5 * quad - 0.5 * total * std::log(2.0 * std::numbers::pi) - logdets;
}

/// Reparameterized draw: mean + noise transformed along each mode by a
/// square root of that mode's covariance. The caller supplies the i.i.d.
/// standard-normal noise tensor; the result is a deterministic function
/// of (params, noise).
inline Tensor sample(const TensorNormalParams& p, const Tensor& noise) {
    p.validate();
    if (!noise.same_dims(p.mean)) throw std::invalid_argument("sample: noise dims mismatch");
    Tensor z = noise;
    for (std::size_t m = 1; m <= p.covariances.size(); ++m) {
        z = detail::transform_mode(z, m, [&](std::span<const double> col) {
            return apply_sqrt(p.covariances[m - 1], col);
        });
    }
    return add(p.mean, z);
}

/// KL(q || p) for two tensor-variate Gaussians over the same dims,
/// exploiting Kronecker separability:
///   1/2 [ prod_m tr(P_m Sq_m) + quad + sum_m (D/D_m)(log|Sp_m| - log|Sq_m|) - D ]
/// with P_m the prior's per-mode inverse covariance. The quadratic term is
/// evaluated by mode products on the mean difference (general p.mean is
/// accepted; the zero-mean prior is the common case). The (D/D_m) log-det
/// weights come from the Kronecker determinant identity.
inline double kl_divergence(const TensorNormalParams& q, const TensorNormalParams& p) {
    q.validate();
    p.validate();
    if (!q.mean.same_dims(p.mean)) throw std::invalid_argument("kl_divergence: dims mismatch");
    const double total = static_cast<double>(q.mean.size());
    const std::size_t order = q.mean.order();

    double trace_term = 1.0;
    for (std::size_t m = 1; m <= order; ++m) {
        trace_term *= trace_product_symmetric(dense_inverse_covariance(p.covariances[m - 1]),
                                              dense_covariance(q.covariances[m - 1]));
    }

    Tensor diff = sub(q.mean, p.mean);
    Tensor u = diff;
    for (std::size_t m = 1; m <= order; ++m) {
        u = detail::transform_mode(u, m, [&](std::span<const double> col) {
            return apply_inverse(p.covariances[m - 1], col);
        });
    }
    const double quad = dot(diff, u);

    double logdets = 0.0;
    for (std::size_t m = 1; m <= order; ++m) {
        const double dm = static_cast<double>(side(p.covariances[m - 1]));
        logdets += total / dm *
                   (logdet_covariance(p.covariances[m - 1]) - logdet_covariance(q.covariances[m - 1]));
    }
    return 0.5 * (trace_term + quad + logdets - total);
}

/// vec(outer(m_1,...,m_M))^T (kron of precisions, descending) vec(...)
/// evaluated as the separable product prod_m m_m^T P_m m_m. `precisions`
/// are the per-mode inverse covariances, given directly as dense matrices.
inline double lowrank_quadratic(const std::vector<Tensor>& mean_factors,
                                const std::vector<Matrix>& precisions) {
    if (mean_factors.size() != precisions.size()) {
        throw std::invalid_argument("lowrank_quadratic: one precision per mean factor required");
    }
    double prod = 1.0;
    for (std::size_t m = 0; m < mean_factors.size(); ++m) {
        const Tensor& v = mean_factors[m];
        if (v.order() != 1 || precisions[m].rows() != v.size() ||
            precisions[m].cols() != v.size()) {
            throw std::invalid_argument("lowrank_quadratic: shape mismatch at mode " +
                                        std::to_string(m + 1));
        }
        std::vector<double> pv = matvec(precisions[m], v.data());
        double s = 0.0;
        for (std::size_t i = 0; i < pv.size(); ++i) s += v[i] * pv[i];
        prod *= s;
    }
    return prod;
}

}  // namespace tvgp
