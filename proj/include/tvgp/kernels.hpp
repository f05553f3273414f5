#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tvgp/linalg.hpp"
#include "tvgp/tensor.hpp"

namespace tvgp {

/// Squared-exponential kernel hyperparameters: signal standard deviation
/// sigma and length scale ell, both strictly positive.
struct SEKernelParams {
    double sigma = 1.0;
    double length_scale = 1.0;

    void validate() const {
        if (!(sigma > 0.0)) throw std::invalid_argument("SEKernelParams: sigma must be > 0");
        if (!(length_scale > 0.0))
            throw std::invalid_argument("SEKernelParams: length_scale must be > 0");
    }
};

/// k(i, j) = sigma^2 * exp(-(i-j)^2 / (2*ell)). The length scale enters to
/// the first power in the denominator; with ell = 1 this coincides with
/// the textbook form.
inline double se_kernel(std::int64_t i, std::int64_t j, const SEKernelParams& p) {
    const double d = static_cast<double>(i - j);
    return p.sigma * p.sigma * std::exp(-(d * d) / (2.0 * p.length_scale));
}

/// Gram matrix of the SE kernel on the integer grid of size n, plus jitter
/// on the diagonal. The result is constructed symmetric and must admit a
/// Cholesky factorization; failure signals ill-conditioning and the caller
/// should raise the jitter.
inline Matrix build_covariance(std::size_t n, const SEKernelParams& p, double jitter) {
    if (n < 1) throw std::invalid_argument("build_covariance: n must be >= 1");
    if (jitter < 0.0) throw std::invalid_argument("build_covariance: jitter must be >= 0");
    p.validate();
    Matrix k(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        k(i, i) = se_kernel(0, 0, p) + jitter;
        for (std::size_t j = i + 1; j < n; ++j) {
            double v = se_kernel(static_cast<std::int64_t>(i), static_cast<std::int64_t>(j), p);
            k(i, j) = v;
            k(j, i) = v;
        }
    }
    cholesky(k);  // factorization check; throws NumericalError if it fails
    return k;
}

/// Prior over the latent grid: per-mode extents, per-mode kernel
/// hyperparameters (shared across latent channels), and the diagonal
/// jitter used when building mode covariances.
struct PriorSpec {
    std::vector<std::size_t> dims;
    std::vector<SEKernelParams> kernels;
    double jitter = 1e-6;

    void validate() const {
        if (kernels.size() != dims.size())
            throw std::invalid_argument("PriorSpec: one kernel per mode required");
        for (std::size_t d : dims)
            if (d == 0) throw std::invalid_argument("PriorSpec: dims must be positive");
        for (const auto& k : kernels) k.validate();
        if (jitter < 0.0) throw std::invalid_argument("PriorSpec: jitter must be >= 0");
    }

    Matrix mode_covariance(std::size_t mode) const {
        return build_covariance(dims[mode - 1], kernels[mode - 1], jitter);
    }
};

}  // namespace tvgp
