#pragma once

// Synthetic spatiotemporal sequences: exact draws from a known tensor GP
// over the (C, W, H, T) grid, squashed into (0,1) by a logistic map. Stands
// in for image-sequence data at desk scale while keeping the generative
// ground truth fully known.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tvgp/kernels.hpp"
#include "tvgp/rng.hpp"
#include "tvgp/tensor.hpp"
#include "tvgp/tvgauss.hpp"

namespace tvgp {

struct DatasetSpec {
    std::size_t n = 600;
    std::vector<std::size_t> dims{1, 8, 8, 6};  // (C, W, H, T)
    std::vector<SEKernelParams> kernels;        // one per mode
    double jitter = 1e-6;
    std::uint64_t seed = 0;
    std::string nonlinearity = "logistic";

    void validate() const {
        if (n < 1) throw std::invalid_argument("DatasetSpec: n must be >= 1");
        if (dims.empty()) throw std::invalid_argument("DatasetSpec: dims empty");
        for (std::size_t d : dims) {
            if (d < 1) throw std::invalid_argument("DatasetSpec: dims must be positive");
        }
        if (kernels.size() != dims.size()) {
            throw std::invalid_argument("DatasetSpec: one kernel per mode required");
        }
        for (const auto& k : kernels) k.validate();
        if (jitter < 0.0) throw std::invalid_argument("DatasetSpec: jitter must be >= 0");
        if (nonlinearity != "logistic") {
            throw std::invalid_argument("DatasetSpec: unsupported nonlinearity '" + nonlinearity +
                                        "'");
        }
    }
};

/// Stock kernels for a (C, W, H, T) grid: an inert channel mode, moderate
/// spatial smoothness, slower temporal drift. Falls back to the spatial
/// setting for other layouts. Amplitude 3 pushes the squashed values
/// across most of (0,1) so the sequences carry enough contrast for a
/// latent code to pay for itself under a unit-variance likelihood.
inline std::vector<SEKernelParams> default_kernels(const std::vector<std::size_t>& dims) {
    std::vector<SEKernelParams> out;
    out.reserve(dims.size());
    for (std::size_t m = 0; m < dims.size(); ++m) {
        double ell = 1.5;
        if (dims.size() > 1 && m == 0) ell = 1.0;
        if (dims.size() > 1 && m + 1 == dims.size()) ell = 3.0;
        out.push_back(SEKernelParams{3.0, ell});
    }
    return out;
}

namespace detail {

constexpr std::uint64_t kFieldStream = 0x6669656c;  // per-sequence noise
constexpr std::uint64_t kSplitStream = 0x73706c69;  // split permutation

inline TensorNormalParams field_distribution(const DatasetSpec& spec) {
    TensorNormalParams p{Tensor(spec.dims), {}};
    for (std::size_t m = 0; m < spec.dims.size(); ++m) {
        p.covariances.push_back(
            DenseCovariance(build_covariance(spec.dims[m], spec.kernels[m], spec.jitter)));
    }
    return p;
}

inline Tensor draw_field(const TensorNormalParams& p, const DatasetSpec& spec,
                         std::size_t index) {
    Rng rng(mix_seed(spec.seed, kFieldStream, index));
    Tensor noise(spec.dims);
    for (std::size_t i = 0; i < noise.size(); ++i) noise[i] = rng.normal();
    return sample(p, noise);
}

}  // namespace detail

/// Pre-squash tensor GP field for one sequence; exposed so statistical
/// oracles can measure the field's covariance directly.
inline Tensor generate_field(const DatasetSpec& spec, std::size_t index) {
    spec.validate();
    if (index >= spec.n) throw std::invalid_argument("generate_field: index out of range");
    return detail::draw_field(detail::field_distribution(spec), spec, index);
}

/// The dataset: n sequences of logistic-squashed tvGP fields, entries in
/// the open interval (0,1). Deterministic per seed, and each sequence
/// depends only on (seed, index).
inline std::vector<Tensor> generate(const DatasetSpec& spec) {
    spec.validate();
    TensorNormalParams p = detail::field_distribution(spec);
    std::vector<Tensor> out;
    out.reserve(spec.n);
    for (std::size_t i = 0; i < spec.n; ++i) {
        Tensor t = detail::draw_field(p, spec, i);
        for (std::size_t j = 0; j < t.size(); ++j) {
            const double x = t[j];
            t[j] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                            : std::exp(x) / (1.0 + std::exp(x));
        }
        out.push_back(std::move(t));
    }
    return out;
}

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Deterministic permutation split with floor-allocated sizes; the
/// remainder goes to train. Fractions must be nonnegative and sum to 1.
inline SplitIndices split_indices(std::size_t n, const std::array<double, 3>& fractions,
                                  std::uint64_t seed) {
    double sum = 0.0;
    for (double f : fractions) {
        if (f < 0.0) throw std::invalid_argument("split_indices: fractions must be >= 0");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("split_indices: fractions must sum to 1, got " +
                                    std::to_string(sum));
    }
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    Rng rng(mix_seed(seed, detail::kSplitStream));
    for (std::size_t i = n; i-- > 1;) {
        std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(perm[i], perm[j]);
    }
    const double nd = static_cast<double>(n);
    std::size_t n_val = static_cast<std::size_t>(std::floor(fractions[1] * nd));
    std::size_t n_test = static_cast<std::size_t>(std::floor(fractions[2] * nd));
    std::size_t n_train = n - n_val - n_test;  // floor(f0*n) plus the remainder
    SplitIndices s;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
    s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train),
                 perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), perm.end());
    return s;
}

}  // namespace tvgp
