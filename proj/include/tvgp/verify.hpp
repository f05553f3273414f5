#pragma once

// Self-checking suites that pit the structured code paths against slow,
// independent routes: dense Kronecker assembly for densities and
// divergences, Monte Carlo for the sampler, central finite differences for
// the training gradient. The CLI exposes them behind `verify`, and the
// acceptance tests reuse them with the same pinned tolerances.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "tvgp/bidiagonal.hpp"
#include "tvgp/kernels.hpp"
#include "tvgp/oracles.hpp"
#include "tvgp/rng.hpp"
#include "tvgp/tensor.hpp"
#include "tvgp/tvgauss.hpp"
#include "tvgp/vae.hpp"

namespace tvgp {

struct SuiteResult {
    std::string name;
    bool pass = false;
    double max_error = 0.0;
    double tolerance = 0.0;
    std::string detail;
    double seconds = 0.0;
};

namespace verify_detail {

class Stopwatch {
public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline Tensor random_tensor(Rng& rng, const std::vector<std::size_t>& dims, double lo, double hi) {
    Tensor t(dims);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

inline Matrix random_spd(Rng& rng, std::size_t n) {
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
    }
    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += a(k, i) * a(k, j);
            s(i, j) = acc;
        }
        s(i, i) += static_cast<double>(n);
    }
    return s;
}

inline BidiagonalCholesky random_bidiagonal(Rng& rng, std::size_t n) {
    std::vector<double> diag(n), sub(n > 0 ? n - 1 : 0);
    for (double& d : diag) d = rng.uniform(0.5, 2.0);
    for (double& s : sub) s = rng.uniform(-0.8, 0.8);
    return BidiagonalCholesky(diag, sub);
}

inline ModeCovariance random_mode_covariance(Rng& rng, std::size_t n) {
    if (rng.below(2) == 0) return DenseCovariance(random_spd(rng, n));
    return PrecisionCholesky{random_bidiagonal(rng, n)};
}

inline TensorNormalParams random_params(Rng& rng, const std::vector<std::size_t>& dims) {
    TensorNormalParams p{random_tensor(rng, dims, -1.0, 1.0), {}};
    for (std::size_t d : dims) p.covariances.push_back(random_mode_covariance(rng, d));
    return p;
}

inline std::string fixed(double v) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific << v;
    return os.str();
}

}  // namespace verify_detail

/// Pinned storage convention: reading a tensor out first-index-fastest turns
/// chained mode products into one descending Kronecker product.
inline SuiteResult verify_vec_kron_bridge(std::uint64_t seed) {
    namespace vd = verify_detail;
    vd::Stopwatch clock;
    Rng rng(mix_seed(seed, 0x62726964));
    SuiteResult r;
    r.name = "vec/kron bridge";
    r.tolerance = 1e-12;
    const std::size_t instances = 40;
    for (std::size_t rep = 0; rep < instances; ++rep) {
        const std::size_t order = 1 + rng.below(4);
        std::vector<std::size_t> dims(order);
        for (auto& d : dims) d = 1 + rng.below(4);
        Tensor t = vd::random_tensor(rng, dims, -1.0, 1.0);
        std::vector<Matrix> mats;
        Tensor chained = t;
        for (std::size_t m = 0; m < order; ++m) {
            Matrix a(dims[m], dims[m]);
            for (std::size_t i = 0; i < dims[m]; ++i) {
                for (std::size_t j = 0; j < dims[m]; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
            }
            chained = mode_product(chained, a, m + 1);
            mats.push_back(std::move(a));
        }
        Matrix big = mats[order - 1];
        for (std::size_t m = order - 1; m-- > 0;) big = kron(big, mats[m]);
        const Tensor lhs = vec(chained);
        const std::vector<double> rhs = matvec(big, vec(t).data());
        double scale = 1.0;
        for (double v : rhs) scale = std::max(scale, std::abs(v));
        for (std::size_t i = 0; i < rhs.size(); ++i) {
            r.max_error = std::max(r.max_error, std::abs(lhs[i] - rhs[i]) / scale);
        }
    }
    r.pass = r.max_error < r.tolerance;
    r.detail = std::to_string(instances) + " random instances, orders 1..4, dims <= 4";
    r.seconds = clock.seconds();
    return r;
}

/// Structured log-density against dense Kronecker assembly.
inline SuiteResult verify_density_equivalence(std::uint64_t seed) {
    namespace vd = verify_detail;
    vd::Stopwatch clock;
    Rng rng(mix_seed(seed, 0x64656e73));
    SuiteResult r;
    r.name = "density equivalence";
    r.tolerance = 1e-10;
    const std::size_t instances = 100;
    for (std::size_t rep = 0; rep < instances; ++rep) {
        const std::size_t order = 1 + rng.below(4);
        std::vector<std::size_t> dims(order);
        for (auto& d : dims) d = 1 + rng.below(4);
        TensorNormalParams p = vd::random_params(rng, dims);
        Tensor x = vd::random_tensor(rng, dims, -1.5, 1.5);
        const double fast = log_pdf(x, p);
        const double slow = oracle::tensor_normal_logpdf_dense(x, p);
        r.max_error = std::max(r.max_error, std::abs(fast - slow) / std::max(1.0, std::abs(slow)));
    }
    r.pass = r.max_error < r.tolerance;
    r.detail = std::to_string(instances) + " random instances, orders 1..4, dims <= 4";
    r.seconds = clock.seconds();
    return r;
}

/// Kronecker-factored divergence against the dense closed form, plus
/// exactness of the self-divergence.
inline SuiteResult verify_kl_equivalence(std::uint64_t seed) {
    namespace vd = verify_detail;
    vd::Stopwatch clock;
    Rng rng(mix_seed(seed, 0x6b6c6571));
    SuiteResult r;
    r.name = "kl equivalence";
    r.tolerance = 1e-9;
    const double self_tol = 1e-12;
    double worst_self = 0.0;
    const std::size_t instances = 100;
    for (std::size_t rep = 0; rep < instances; ++rep) {
        const std::size_t order = 1 + rng.below(3);
        std::vector<std::size_t> dims(order);
        for (auto& d : dims) d = 1 + rng.below(3);
        TensorNormalParams q = vd::random_params(rng, dims);
        TensorNormalParams p = vd::random_params(rng, dims);
        const double fast = kl_divergence(q, p);
        const double slow = oracle::tensor_normal_kl_dense(q, p);
        r.max_error =
            std::max(r.max_error, std::abs(fast - slow) / std::max(1e-12, std::abs(slow)));
        worst_self = std::max(worst_self, std::abs(kl_divergence(q, q)));
    }
    r.pass = r.max_error < r.tolerance && worst_self < self_tol;
    r.detail = std::to_string(instances) + " random instances, orders 1..3, dims <= 3; worst self-divergence " +
               vd::fixed(worst_self) + " (tol " + vd::fixed(self_tol) + ")";
    r.seconds = clock.seconds();
    return r;
}

/// Monte Carlo covariance of the reparameterized sampler on a fixed
/// order-3 posterior with bidiagonal precision factors, entrywise within
/// three standard errors of the separable ground truth.
inline SuiteResult verify_sampling_covariance(std::uint64_t seed,
                                              std::size_t draws = 200000) {
    namespace vd = verify_detail;
    vd::Stopwatch clock;
    SuiteResult r;
    r.name = "sampling covariance";
    r.tolerance = 3.0;  // standard errors

    TensorNormalParams p{Tensor({3, 4, 2}), {}};
    for (std::size_t i = 0; i < p.mean.size(); ++i) {
        p.mean[i] = 0.1 * static_cast<double>(i) - 0.5;
    }
    p.covariances.push_back(
        PrecisionCholesky{BidiagonalCholesky({1.1, 0.8, 1.3}, {0.4, -0.3})});
    p.covariances.push_back(
        PrecisionCholesky{BidiagonalCholesky({0.9, 1.2, 0.7, 1.0}, {0.5, -0.2, 0.3})});
    p.covariances.push_back(PrecisionCholesky{BidiagonalCholesky({1.4, 0.6}, {-0.5})});

    const Matrix truth = oracle::kron_covariance_descending(p);
    const Tensor mean_vec = vec(p.mean);
    const std::size_t d = truth.rows();

    Rng rng(mix_seed(seed, 0x73616d70));
    Tensor noise(p.mean.dims());
    std::vector<double> acc(d * d, 0.0);
    std::vector<double> centered(d);
    for (std::size_t rep = 0; rep < draws; ++rep) {
        for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
        const Tensor v = vec(sample(p, noise));
        for (std::size_t i = 0; i < d; ++i) centered[i] = v[i] - mean_vec[i];
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) acc[i * d + j] += centered[i] * centered[j];
        }
    }
    const double nd = static_cast<double>(draws);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const double est = acc[i * d + j] / nd;
            const double se =
                std::sqrt((truth(i, i) * truth(j, j) + truth(i, j) * truth(i, j)) / nd);
            r.max_error = std::max(r.max_error, std::abs(est - truth(i, j)) / se);
        }
    }
    r.pass = r.max_error < r.tolerance;
    r.detail = std::to_string(draws) + " draws, 3x4x2 posterior, error in standard-error units";
    r.seconds = clock.seconds();
    return r;
}

/// Full training gradient against central finite differences on a
/// miniature model: every parameter scalar must agree to 1e-4 relative
/// (absolute floor 1e-7).
inline SuiteResult verify_elbo_gradients(std::uint64_t seed) {
    namespace vd = verify_detail;
    vd::Stopwatch clock;
    SuiteResult r;
    r.name = "elbo gradients";
    r.tolerance = 1e-4;
    const double abs_floor = 1e-7;
    const double h = 1e-5;

    ModelSpec spec;
    spec.data_dims = {1, 4, 4, 3};
    spec.latent.channels = 2;
    spec.latent.mode_dims = {2, 2, 2};
    spec.prior.dims = spec.latent.mode_dims;
    spec.prior.kernels.assign(3, SEKernelParams{1.0, 2.0});
    spec.enc_hidden = 8;
    spec.dec_hidden = 8;
    TvgpVae model = TvgpVae::create(spec, mix_seed(seed, 0x67726164));

    Rng rng(mix_seed(seed, 0x67726165));
    const Tensor x = vd::random_tensor(rng, spec.data_dims, 0.05, 0.95);
    Tensor noise({model.noise_size()});
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.normal();

    std::vector<double> grad;
    model.elbo_with_gradient(x, noise, grad);
    std::vector<double> theta = model.params().flatten();
    bool ok = true;
    double worst_abs = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double orig = theta[i];
        theta[i] = orig + h;
        model.params().assign(theta);
        const double fp = model.elbo(x, noise).elbo;
        theta[i] = orig - h;
        model.params().assign(theta);
        const double fm = model.elbo(x, noise).elbo;
        theta[i] = orig;
        const double fd = (fp - fm) / (2.0 * h);
        const double err = std::abs(grad[i] - fd);
        worst_abs = std::max(worst_abs, err);
        if (err <= abs_floor) continue;
        const double rel = err / std::max(std::abs(fd), std::abs(grad[i]));
        r.max_error = std::max(r.max_error, rel);
        if (rel > r.tolerance) ok = false;
    }
    model.params().assign(theta);
    r.pass = ok;
    r.detail = std::to_string(theta.size()) +
               " parameter scalars, central differences, abs floor 1e-07, worst abs err " +
               vd::fixed(worst_abs);
    r.seconds = clock.seconds();
    return r;
}

inline std::vector<SuiteResult> run_all_suites(std::uint64_t seed) {
    return {verify_vec_kron_bridge(seed), verify_density_equivalence(seed),
            verify_kl_equivalence(seed), verify_sampling_covariance(seed),
            verify_elbo_gradients(seed)};
}

inline std::string format_suite_result(const SuiteResult& r) {
    std::ostringstream os;
    os.precision(3);
    os << std::scientific;
    os << (r.pass ? "PASS" : "FAIL") << "  " << r.name << ": max error " << r.max_error
       << " (tolerance " << r.tolerance << ", " << r.detail << ")";
    os.precision(2);
    os << std::fixed << " [" << r.seconds << "s]";
    return os.str();
}

}  // namespace tvgp
