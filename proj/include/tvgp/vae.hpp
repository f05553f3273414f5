#pragma once

// The model: an amortized-inference VAE whose latent posterior is either a
// set of K mean-field scalar Gaussians (order-0 baseline) or K independent
// tensor-variate Gaussians with Kronecker-separable structure, rank-one
// means and bidiagonal precision-Cholesky mode covariances. The prior on
// structured latents is a zero-mean tensor GP over the latent grid with
// squared-exponential mode kernels.
//
// Everything differentiable runs through one tape-built graph; encode(),
// elbo() and elbo_with_gradient() share that single code path, so what the
// tests measure is exactly what training optimizes.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tvgp/autodiff.hpp"
#include "tvgp/bidiagonal.hpp"
#include "tvgp/kernels.hpp"
#include "tvgp/rng.hpp"
#include "tvgp/tensor.hpp"
#include "tvgp/tvgauss.hpp"

namespace tvgp {

/// Shape of the latent space: K channels, each an order-0 scalar (empty
/// mode_dims, the standard-VAE baseline) or an order-1..3 tensor over the
/// given latent grid.
struct LatentSpec {
    std::size_t channels = 1;
    std::vector<std::size_t> mode_dims;

    void validate() const {
        if (channels < 1) throw std::invalid_argument("LatentSpec: channels must be >= 1");
        if (mode_dims.size() > 3) {
            throw std::invalid_argument("LatentSpec: at most 3 explicit latent modes");
        }
        for (std::size_t d : mode_dims) {
            if (d < 1) throw std::invalid_argument("LatentSpec: mode dims must be >= 1");
        }
    }

    std::size_t order() const { return mode_dims.size(); }

    /// Entries per channel: product of mode dims, 1 for the scalar baseline.
    std::size_t per_channel_size() const {
        std::size_t p = 1;
        for (std::size_t d : mode_dims) p *= d;
        return p;
    }

    std::size_t total_size() const { return channels * per_channel_size(); }
};

/// Variational parameters the encoder emits for one channel.
struct PosteriorChannel {
    // structured form: one rank-one mean factor and one precision-Cholesky
    // factor per explicit mode
    std::vector<Tensor> mean_factors;
    std::vector<BidiagonalCholesky> chol_factors;
    // order-0 baseline form
    double mean = 0.0;
    double log_sigma = 0.0;
};

/// Per-datum variational parameters for all channels, plus the spec they
/// were produced under so parameter counts can be audited from shapes.
struct PosteriorFactorParams {
    LatentSpec spec;
    std::vector<PosteriorChannel> channels;

    bool structured() const { return !spec.mode_dims.empty(); }

    /// Mean parameters actually stored, counted from shapes. Structured:
    /// K * sum_m D'_m. Baseline: K.
    std::size_t mean_parameter_count() const {
        if (!structured()) return channels.size();
        std::size_t n = 0;
        for (const auto& c : channels) {
            for (const auto& f : c.mean_factors) n += f.size();
        }
        return n;
    }

    /// Covariance parameters actually stored. Structured: K * sum_m
    /// (2 D'_m - 1). Baseline: K (one log-sigma each).
    std::size_t covariance_parameter_count() const {
        if (!structured()) return channels.size();
        std::size_t n = 0;
        for (const auto& c : channels) {
            for (const auto& f : c.chol_factors) n += f.parameter_count();
        }
        return n;
    }
};

struct ElboBreakdown {
    double recon = 0.0;
    double complexity = 0.0;
    double elbo = 0.0;
};

/// Named parameter tensors in a fixed order; the order defines the flat
/// layout used by the optimizer and the checkpoint format.
class NetworkParams {
public:
    void add(std::string name, Tensor t) {
        for (const auto& e : entries_) {
            if (e.first == name) {
                throw std::invalid_argument("NetworkParams: duplicate name " + name);
            }
        }
        entries_.emplace_back(std::move(name), std::move(t));
    }

    std::size_t size() const { return entries_.size(); }
    const std::string& name(std::size_t i) const { return entries_[i].first; }
    const Tensor& tensor(std::size_t i) const { return entries_[i].second; }
    Tensor& tensor(std::size_t i) { return entries_[i].second; }

    std::size_t index(const std::string& name) const {
        for (std::size_t i = 0; i < entries_.size(); ++i) {
            if (entries_[i].first == name) return i;
        }
        throw std::invalid_argument("NetworkParams: no parameter named " + name);
    }

    const Tensor& find(const std::string& name) const { return entries_[index(name)].second; }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.second.size();
        return n;
    }

    std::vector<double> flatten() const {
        std::vector<double> out;
        out.reserve(scalar_count());
        for (const auto& e : entries_) {
            out.insert(out.end(), e.second.data().begin(), e.second.data().end());
        }
        return out;
    }

    void assign(std::span<const double> flat) {
        if (flat.size() != scalar_count()) {
            throw std::invalid_argument("NetworkParams: flat length mismatch");
        }
        std::size_t off = 0;
        for (auto& e : entries_) {
            for (std::size_t i = 0; i < e.second.size(); ++i) e.second[i] = flat[off + i];
            off += e.second.size();
        }
    }

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
};

/// Everything that fixes the model family: data dims, latent spec, prior
/// over the latent grid, and trunk widths.
struct ModelSpec {
    std::vector<std::size_t> data_dims;  // (C, W, H, T)
    LatentSpec latent;
    PriorSpec prior;  // over latent.mode_dims; unused for the order-0 baseline
    std::size_t enc_hidden = 48;
    std::size_t dec_hidden = 48;

    void validate() const {
        if (data_dims.empty()) throw std::invalid_argument("ModelSpec: data_dims empty");
        for (std::size_t d : data_dims) {
            if (d < 1) throw std::invalid_argument("ModelSpec: data dims must be >= 1");
        }
        latent.validate();
        if (enc_hidden < 1 || dec_hidden < 1) {
            throw std::invalid_argument("ModelSpec: hidden widths must be >= 1");
        }
        if (latent.order() > 0) {
            prior.validate();
            if (prior.dims != latent.mode_dims) {
                throw std::invalid_argument("ModelSpec: prior dims must equal latent mode dims");
            }
        }
    }

    std::size_t data_size() const {
        std::size_t n = 1;
        for (std::size_t d : data_dims) n *= d;
        return n;
    }
};

namespace detail {

constexpr double kDiagFloor = 1e-4;  // positivity floor under the factor diagonals

/// Fresh posterior factors start at the banded surrogate of the prior with
/// variances damped by this factor. A tight start keeps early z samples
/// low-noise so the reconstruction path can latch onto the data before the
/// complexity term relaxes the covariance back toward the prior; starting
/// at the prior itself leaves the decoder staring at nearly pure noise,
/// which is a well-known stable collapse point for VAE training.
constexpr double kInitVarianceScale = 0.1;

inline std::string head_w_name(std::size_t m) { return "head" + std::to_string(m) + ".w"; }
inline std::string head_b_name(std::size_t m) { return "head" + std::to_string(m) + ".b"; }

}  // namespace detail

class TvgpVae {
public:
    TvgpVae(ModelSpec spec, NetworkParams params)
        : spec_(std::move(spec)), params_(std::move(params)) {
        spec_.validate();
        build_prior_tables();
        // catch wiring mistakes early: a full graph must assemble
        ad::Tape probe;
        build_graph(probe, Tensor(spec_.data_dims), Tensor({noise_size()}));
    }

    /// Fresh model with deterministic initialization: uniform fan-in/fan-out
    /// scaled weights and zero biases, except that covariance head biases
    /// start each posterior mode at the Markov surrogate of its prior mode,
    /// so the divergence term begins near its structural minimum instead of
    /// dominating early training.
    static TvgpVae create(ModelSpec spec, std::uint64_t seed) {
        spec.validate();
        NetworkParams p;
        Rng rng(mix_seed(seed, kInitStream));
        const std::size_t d = spec.data_size();
        const std::size_t k = spec.latent.channels;
        const std::size_t pc = spec.latent.per_channel_size();
        const bool structured = spec.latent.order() > 0;
        const std::size_t trunk_out = structured ? k * pc : 2 * k;

        auto weight = [&rng](std::size_t out, std::size_t in) {
            Tensor w({out, in});
            const double lim = std::sqrt(6.0 / static_cast<double>(out + in));
            for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-lim, lim);
            return w;
        };

        p.add("enc.w1", weight(spec.enc_hidden, d));
        p.add("enc.b1", Tensor({spec.enc_hidden}));
        p.add("enc.w2", weight(spec.enc_hidden, spec.enc_hidden));
        p.add("enc.b2", Tensor({spec.enc_hidden}));
        p.add("enc.w3", weight(trunk_out, spec.enc_hidden));
        p.add("enc.b3", Tensor({trunk_out}));
        if (structured) {
            for (std::size_t m = 1; m <= spec.latent.order(); ++m) {
                const std::size_t dm = spec.latent.mode_dims[m - 1];
                p.add(detail::head_w_name(m), weight(3 * dm, dm));
                const BidiagonalCholesky start = markov_approximation(spec.prior.mode_covariance(m));
                const double tighten = 1.0 / std::sqrt(detail::kInitVarianceScale);
                Tensor hb({3 * dm});
                for (std::size_t i = 0; i < dm; ++i) {
                    hb[dm + i] = softplus_inverse(
                        std::max(start.diag()[i] * tighten - detail::kDiagFloor, 1e-12));
                }
                for (std::size_t i = 0; i + 1 < dm; ++i)
                    hb[2 * dm + i] = start.subdiag()[i] * tighten;
                p.add(detail::head_b_name(m), std::move(hb));
            }
        }
        const std::size_t zin = structured ? k * pc : k;
        p.add("dec.w1", weight(spec.dec_hidden, zin));
        p.add("dec.b1", Tensor({spec.dec_hidden}));
        p.add("dec.w2", weight(spec.dec_hidden, spec.dec_hidden));
        p.add("dec.b2", Tensor({spec.dec_hidden}));
        p.add("dec.w3", weight(d, spec.dec_hidden));
        p.add("dec.b3", Tensor({d}));
        return TvgpVae(std::move(spec), std::move(p));
    }

    const ModelSpec& spec() const { return spec_; }
    const NetworkParams& params() const { return params_; }
    NetworkParams& params() { return params_; }

    /// Length of the flat standard-normal noise vector elbo() consumes:
    /// one draw per latent entry.
    std::size_t noise_size() const {
        return spec_.latent.order() > 0 ? spec_.latent.total_size() : spec_.latent.channels;
    }

    /// Dense prior mode covariances (structured latents only).
    const std::vector<Matrix>& prior_covariances() const { return prior_covs_; }

    PosteriorFactorParams encode(const Tensor& x) const {
        ad::Tape tape;
        Graph g = build_graph(tape, x, Tensor({noise_size()}));
        PosteriorFactorParams out;
        out.spec = spec_.latent;
        for (const auto& ch : g.channels) {
            PosteriorChannel c;
            if (spec_.latent.order() > 0) {
                for (std::size_t m = 0; m < spec_.latent.order(); ++m) {
                    c.mean_factors.push_back(tape.value(ch.mean_factors[m]));
                    const Tensor& dv = tape.value(ch.diags[m]);
                    std::vector<double> diag(dv.data().begin(), dv.data().end());
                    std::vector<double> sub;
                    if (ch.subs[m]) {
                        const Tensor& sv = tape.value(*ch.subs[m]);
                        sub.assign(sv.data().begin(), sv.data().end());
                    }
                    c.chol_factors.emplace_back(std::move(diag), std::move(sub));
                }
            } else {
                c.mean = tape.value(ch.mu_scalar)[0];
                c.log_sigma = tape.value(ch.logsig_scalar)[0];
            }
            out.channels.push_back(std::move(c));
        }
        return out;
    }

    /// Decoder only: flat latent vector (length latent total) to likelihood
    /// means with the data dims, every entry in (0,1).
    Tensor decode(const Tensor& z) const {
        const std::size_t zin_len =
            spec_.latent.order() > 0 ? spec_.latent.total_size() : spec_.latent.channels;
        if (z.size() != zin_len) {
            throw std::invalid_argument("decode: latent length " + std::to_string(z.size()) +
                                        ", expected " + std::to_string(zin_len));
        }
        ad::Tape tape;
        std::array<ad::NodeId, 6> dec{};
        const char* names[6] = {"dec.w1", "dec.b1", "dec.w2", "dec.b2", "dec.w3", "dec.b3"};
        for (std::size_t i = 0; i < 6; ++i) dec[i] = tape.leaf(params_.find(names[i]));
        ad::NodeId zin = tape.constant(Tensor({zin_len}, {z.data().begin(), z.data().end()}));
        ad::NodeId xhat = decode_stack(tape, zin, dec);
        return Tensor(spec_.data_dims,
                      {tape.value(xhat).data().begin(), tape.value(xhat).data().end()});
    }

    ElboBreakdown elbo(const Tensor& x, const Tensor& noise) const {
        ad::Tape tape;
        Graph g = build_graph(tape, x, noise);
        return breakdown(tape, g);
    }

    /// ELBO plus its gradient with respect to every parameter scalar, laid
    /// out to match NetworkParams::flatten().
    ElboBreakdown elbo_with_gradient(const Tensor& x, const Tensor& noise,
                                     std::vector<double>& grad_out) const {
        ad::Tape tape;
        Graph g = build_graph(tape, x, noise);
        tape.backward(g.elbo);
        grad_out.clear();
        grad_out.reserve(params_.scalar_count());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            const Tensor& gt = tape.grad(g.param_ids[i]);
            grad_out.insert(grad_out.end(), gt.data().begin(), gt.data().end());
        }
        return breakdown(tape, g);
    }

    /// Closed-form complexity loss for given posterior parameters against
    /// this model's prior; the injectable-prior variants below carry the
    /// actual computation.
    double complexity_loss(const PosteriorFactorParams& q) const {
        if (q.structured()) return structured_complexity(q, prior_covs_);
        return meanfield_complexity(q);
    }

    /// Sum over channels of KL(q_k || tensor GP prior with the given dense
    /// mode covariances), via the tvgauss closed form.
    static double structured_complexity(const PosteriorFactorParams& q,
                                        const std::vector<Matrix>& prior_covariances) {
        if (prior_covariances.size() != q.spec.mode_dims.size()) {
            throw std::invalid_argument("structured_complexity: one prior cov per mode");
        }
        double total = 0.0;
        for (const auto& ch : q.channels) {
            TensorNormalParams qk{outer(ch.mean_factors), {}};
            for (const auto& f : ch.chol_factors) qk.covariances.push_back(PrecisionCholesky{f});
            TensorNormalParams pk{Tensor(q.spec.mode_dims), {}};
            for (const auto& cov : prior_covariances) {
                pk.covariances.push_back(DenseCovariance(cov));
            }
            total += kl_divergence(qk, pk);
        }
        return total;
    }

    /// Sum over channels of KL(N(mu, sigma^2) || N(0,1)).
    static double meanfield_complexity(const PosteriorFactorParams& q) {
        double total = 0.0;
        for (const auto& ch : q.channels) {
            const double s2 = std::exp(2.0 * ch.log_sigma);
            total += 0.5 * (s2 + ch.mean * ch.mean - 1.0 - 2.0 * ch.log_sigma);
        }
        return total;
    }

    /// Flat posterior-mean latent vector (noise-free z), the reconstruction
    /// path's input.
    Tensor posterior_mean_latents(const PosteriorFactorParams& q) const {
        Tensor z({noise_size()});
        const std::size_t pc = spec_.latent.per_channel_size();
        for (std::size_t k = 0; k < q.channels.size(); ++k) {
            if (q.structured()) {
                Tensor mk = outer(q.channels[k].mean_factors);
                for (std::size_t i = 0; i < pc; ++i) z[k * pc + i] = mk[i];
            } else {
                z[k] = q.channels[k].mean;
            }
        }
        return z;
    }

private:
    struct ChannelRefs {
        std::vector<ad::NodeId> mean_factors;
        std::vector<ad::NodeId> diags;
        std::vector<std::optional<ad::NodeId>> subs;
        ad::NodeId mu_scalar = 0;
        ad::NodeId logsig_scalar = 0;
    };

    struct Graph {
        std::vector<ad::NodeId> param_ids;
        std::vector<ChannelRefs> channels;
        ad::NodeId xhat = 0;
        ad::NodeId recon = 0;
        ad::NodeId complexity = 0;
        ad::NodeId elbo = 0;
    };

    static constexpr std::uint64_t kInitStream = 0x696e6974;  // parameter init

    void build_prior_tables() {
        prior_covs_.clear();
        prior_invs_.clear();
        prior_logdets_.clear();
        for (std::size_t m = 1; m <= spec_.latent.order(); ++m) {
            Matrix omega = spec_.prior.mode_covariance(m);
            Matrix l = cholesky(omega);
            prior_covs_.push_back(std::move(omega));
            prior_invs_.push_back(spd_inverse_from_cholesky(l));
            prior_logdets_.push_back(logdet_from_cholesky(l));
        }
    }

    ElboBreakdown breakdown(const ad::Tape& tape, const Graph& g) const {
        ElboBreakdown b;
        b.recon = tape.scalar_value(g.recon);
        b.complexity = tape.scalar_value(g.complexity);
        b.elbo = tape.scalar_value(g.elbo);
        return b;
    }

    ad::NodeId decode_stack(ad::Tape& t, ad::NodeId zin,
                            const std::array<ad::NodeId, 6>& dec) const {
        ad::NodeId h = t.relu(t.affine(dec[0], dec[1], zin));
        h = t.relu(t.affine(dec[2], dec[3], h));
        return t.logistic(t.affine(dec[4], dec[5], h));
    }

    Graph build_graph(ad::Tape& tape, const Tensor& x, const Tensor& noise) const {
        if (x.dims() != spec_.data_dims) {
            throw std::invalid_argument("elbo: data dims do not match the model spec");
        }
        if (noise.size() != noise_size()) {
            throw std::invalid_argument("elbo: noise length " + std::to_string(noise.size()) +
                                        ", expected " + std::to_string(noise_size()));
        }
        Graph g;
        g.param_ids.reserve(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            g.param_ids.push_back(tape.leaf(params_.tensor(i)));
        }
        auto pid = [&](const std::string& name) { return g.param_ids[params_.index(name)]; };

        const std::size_t d = spec_.data_size();
        Tensor x_flat({d}, {x.data().begin(), x.data().end()});
        ad::NodeId xin = tape.constant(x_flat);
        ad::NodeId nin =
            tape.constant(Tensor({noise.size()}, {noise.data().begin(), noise.data().end()}));

        ad::NodeId h = tape.relu(tape.affine(pid("enc.w1"), pid("enc.b1"), xin));
        h = tape.relu(tape.affine(pid("enc.w2"), pid("enc.b2"), h));
        ad::NodeId trunk = tape.affine(pid("enc.w3"), pid("enc.b3"), h);

        const std::size_t k_count = spec_.latent.channels;
        const std::size_t order = spec_.latent.order();
        const std::size_t pc = spec_.latent.per_channel_size();
        std::vector<ad::NodeId> z_parts;
        ad::NodeId zin = 0;

        if (order > 0) {
            std::vector<ad::NodeId> kl_terms;
            for (std::size_t k = 0; k < k_count; ++k) {
                ChannelRefs ch;
                ad::NodeId hk =
                    tape.reshape(tape.slice(trunk, k * pc, pc), spec_.latent.mode_dims);
                for (std::size_t m = 1; m <= order; ++m) {
                    const std::size_t dm = spec_.latent.mode_dims[m - 1];
                    ad::NodeId pooled = tape.mean_pool_except(hk, m);
                    ad::NodeId head = tape.affine(pid(detail::head_w_name(m)),
                                                  pid(detail::head_b_name(m)), pooled);
                    ch.mean_factors.push_back(tape.slice(head, 0, dm));
                    ch.diags.push_back(
                        tape.softplus_floor(tape.slice(head, dm, dm), detail::kDiagFloor));
                    // 3 outputs per index; the last subdiagonal slot is
                    // structurally unused and simply never sliced
                    ch.subs.push_back(dm > 1
                                          ? std::optional(tape.slice(head, 2 * dm, dm - 1))
                                          : std::nullopt);
                }
                ad::NodeId zk_noise =
                    tape.reshape(tape.slice(nin, k * pc, pc), spec_.latent.mode_dims);
                for (std::size_t m = 1; m <= order; ++m) {
                    zk_noise = tape.mode_solve_transpose(zk_noise, ch.diags[m - 1],
                                                         ch.subs[m - 1], m);
                }
                ad::NodeId zk = tape.add(tape.outer_product(ch.mean_factors), zk_noise);
                z_parts.push_back(tape.reshape(zk, {pc}));

                // KL against the tensor GP prior, assembled from separable
                // pieces; log|Omega| terms are constants folded into the
                // affine tail.
                ad::NodeId trace = tape.prec_chol_trace(prior_invs_[0], ch.diags[0], ch.subs[0]);
                ad::NodeId quad = tape.quad_form(prior_invs_[0], ch.mean_factors[0]);
                for (std::size_t m = 1; m < order; ++m) {
                    trace = tape.mul(trace,
                                     tape.prec_chol_trace(prior_invs_[m], ch.diags[m], ch.subs[m]));
                    quad = tape.mul(quad, tape.quad_form(prior_invs_[m], ch.mean_factors[m]));
                }
                std::vector<ad::NodeId> terms{trace, quad};
                std::vector<double> coeffs{0.5, 0.5};
                double constant = -0.5 * static_cast<double>(pc);
                for (std::size_t m = 0; m < order; ++m) {
                    const double weight =
                        static_cast<double>(pc) / static_cast<double>(spec_.latent.mode_dims[m]);
                    terms.push_back(tape.logdet_cov(ch.diags[m]));
                    coeffs.push_back(-0.5 * weight);
                    constant += 0.5 * weight * prior_logdets_[m];
                }
                kl_terms.push_back(tape.scalar_affine(terms, coeffs, constant));
                g.channels.push_back(std::move(ch));
            }
            g.complexity =
                tape.scalar_affine(kl_terms, std::vector<double>(kl_terms.size(), 1.0), 0.0);
            zin = tape.concat(z_parts);
        } else {
            ad::NodeId mu = tape.slice(trunk, 0, k_count);
            ad::NodeId logsig = tape.slice(trunk, k_count, k_count);
            zin = tape.add(mu, tape.mul(tape.exp(logsig), nin));
            g.complexity = tape.kl_meanfield(mu, logsig);
            for (std::size_t k = 0; k < k_count; ++k) {
                ChannelRefs ch;
                ch.mu_scalar = tape.slice(mu, k, 1);
                ch.logsig_scalar = tape.slice(logsig, k, 1);
                g.channels.push_back(std::move(ch));
            }
        }

        std::array<ad::NodeId, 6> dec{pid("dec.w1"), pid("dec.b1"), pid("dec.w2"),
                                      pid("dec.b2"), pid("dec.w3"), pid("dec.b3")};
        g.xhat = decode_stack(tape, zin, dec);
        g.recon = tape.gauss_recon_loglik(g.xhat, x_flat);
        g.elbo = tape.scalar_affine({g.recon, g.complexity}, {1.0, -1.0}, 0.0);
        return g;
    }

    ModelSpec spec_;
    NetworkParams params_;
    std::vector<Matrix> prior_covs_;
    std::vector<Matrix> prior_invs_;
    std::vector<double> prior_logdets_;
};

}  // namespace tvgp
