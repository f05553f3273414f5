#pragma once

// Minibatch Adam on the negative evidence bound with single-draw noise
// reparameterization. Every random stream (shuffles, training noise,
// validation noise) is derived from (seed, epoch, index), so runs are
// reproducible bit for bit, including across thread counts: per-item
// gradients are computed in parallel but reduced in index order.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "tvgp/errors.hpp"
#include "tvgp/io.hpp"
#include "tvgp/optim.hpp"
#include "tvgp/rng.hpp"
#include "tvgp/tensor.hpp"
#include "tvgp/vae.hpp"

namespace tvgp {

struct TrainOptions {
    std::uint64_t seed = 0;
    double lr = 1e-3;
    std::size_t batch_size = 50;
    std::size_t max_epochs = 500;
    std::size_t eval_every = 10;
    std::size_t patience = 5;
    std::size_t threads = 1;

    void validate() const {
        if (!(lr > 0.0)) throw std::invalid_argument("TrainOptions: lr must be > 0");
        if (batch_size < 1) throw std::invalid_argument("TrainOptions: batch_size must be >= 1");
        if (max_epochs < 1) throw std::invalid_argument("TrainOptions: max_epochs must be >= 1");
        if (eval_every < 1) throw std::invalid_argument("TrainOptions: eval_every must be >= 1");
        if (patience < 1) throw std::invalid_argument("TrainOptions: patience must be >= 1");
        if (threads < 1) throw std::invalid_argument("TrainOptions: threads must be >= 1");
    }
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;  // epoch whose parameters the model holds, 0 if never evaluated
    double best_val_elbo = -std::numeric_limits<double>::infinity();
    bool early_stopped = false;
};

struct EvalStats {
    double mean_nll = 0.0;
    double stderr_nll = 0.0;
    std::size_t count = 0;
};

namespace detail {

constexpr std::uint64_t kShuffleStream = 0x73687566;
constexpr std::uint64_t kNoiseStream = 0x6e6f6973;
constexpr std::uint64_t kValNoiseStream = 0x76616c6e;

inline Tensor draw_noise(std::uint64_t stream_seed, std::size_t n) {
    Rng rng(stream_seed);
    Tensor t({n});
    for (std::size_t i = 0; i < n; ++i) t[i] = rng.normal();
    return t;
}

/// Static-chunked parallel loop; the work itself must not depend on which
/// thread runs it. Exceptions are captured and rethrown on the caller.
inline void parallel_for(std::size_t n, std::size_t threads,
                         const std::function<void(std::size_t)>& fn) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t use = std::min(threads, n);
    const std::size_t chunk = (n + use - 1) / use;
    std::mutex err_mutex;
    std::exception_ptr first_error;
    std::vector<std::thread> pool;
    pool.reserve(use);
    for (std::size_t t = 0; t < use; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        pool.emplace_back([&, lo, hi] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline void check_breakdown(const ElboBreakdown& b, std::size_t epoch, std::size_t index) {
    if (!std::isfinite(b.elbo) || !std::isfinite(b.recon) || !std::isfinite(b.complexity)) {
        throw NumericalError("training diverged: non-finite objective at epoch " +
                             std::to_string(epoch) + ", item " + std::to_string(index));
    }
    if (b.complexity < -1e-9) {
        throw NumericalError("training diverged: negative divergence at epoch " +
                             std::to_string(epoch) + ", item " + std::to_string(index));
    }
}

}  // namespace detail

/// Runs minibatch training and returns per-epoch metrics. Validation runs
/// every eval_every epochs (and on the final epoch); training stops early
/// after `patience` consecutive evaluations without improvement, and the
/// model is left holding the parameters of the best-validation epoch, not
/// the last one. on_epoch, when given, sees each record as it is produced.
inline TrainResult train(TvgpVae& model, const std::vector<Tensor>& train_set,
                         const std::vector<Tensor>& val_set, const TrainOptions& opt,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
    opt.validate();
    if (train_set.empty()) throw std::invalid_argument("train: empty training set");
    const std::size_t n = train_set.size();
    const std::size_t pcount = model.params().scalar_count();
    const std::size_t noise_len = model.noise_size();

    Adam adam(pcount, AdamConfig{opt.lr});
    std::vector<double> flat = model.params().flatten();

    // one fixed noise draw per validation item, so the validation bound is
    // comparable across epochs
    std::vector<Tensor> val_noise;
    val_noise.reserve(val_set.size());
    for (std::size_t i = 0; i < val_set.size(); ++i) {
        val_noise.push_back(
            detail::draw_noise(mix_seed(opt.seed, detail::kValNoiseStream, i), noise_len));
    }

    TrainResult result;
    std::size_t stalled_evals = 0;
    std::vector<double> best_flat;

    std::vector<std::vector<double>> grad_slots;
    std::vector<ElboBreakdown> breakdown_slots;
    std::vector<double> grad_mean(pcount);

    for (std::size_t epoch = 1; epoch <= opt.max_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        std::vector<std::size_t> order(n);
        for (std::size_t i = 0; i < n; ++i) order[i] = i;
        Rng shuffle_rng(mix_seed(opt.seed, detail::kShuffleStream, epoch));
        for (std::size_t i = n; i-- > 1;) {
            std::size_t j = static_cast<std::size_t>(shuffle_rng.below(i + 1));
            std::swap(order[i], order[j]);
        }

        double sum_elbo = 0.0, sum_recon = 0.0, sum_kl = 0.0;
        for (std::size_t start = 0; start < n; start += opt.batch_size) {
            const std::size_t count = std::min(opt.batch_size, n - start);
            grad_slots.assign(count, {});
            breakdown_slots.assign(count, {});
            detail::parallel_for(count, opt.threads, [&](std::size_t slot) {
                const std::size_t index = order[start + slot];
                const Tensor noise = detail::draw_noise(
                    mix_seed(mix_seed(opt.seed, detail::kNoiseStream), epoch, index), noise_len);
                breakdown_slots[slot] =
                    model.elbo_with_gradient(train_set[index], noise, grad_slots[slot]);
            });

            std::fill(grad_mean.begin(), grad_mean.end(), 0.0);
            for (std::size_t slot = 0; slot < count; ++slot) {
                detail::check_breakdown(breakdown_slots[slot], epoch, order[start + slot]);
                sum_elbo += breakdown_slots[slot].elbo;
                sum_recon += breakdown_slots[slot].recon;
                sum_kl += breakdown_slots[slot].complexity;
                const std::vector<double>& g = grad_slots[slot];
                for (std::size_t p = 0; p < pcount; ++p) grad_mean[p] += g[p];
            }
            // loss is the negative bound, so descend along -grad(elbo)
            const double scale = -1.0 / static_cast<double>(count);
            for (std::size_t p = 0; p < pcount; ++p) grad_mean[p] *= scale;
            adam.step(flat, grad_mean);
            model.params().assign(flat);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_elbo = sum_elbo / static_cast<double>(n);
        rec.train_recon = sum_recon / static_cast<double>(n);
        rec.train_kl = sum_kl / static_cast<double>(n);

        bool stop = false;
        const bool do_eval = (epoch % opt.eval_every == 0) || epoch == opt.max_epochs;
        if (do_eval && !val_set.empty()) {
            double vsum = 0.0;
            for (std::size_t i = 0; i < val_set.size(); ++i) {
                const ElboBreakdown b = model.elbo(val_set[i], val_noise[i]);
                detail::check_breakdown(b, epoch, i);
                vsum += b.elbo;
            }
            rec.val_elbo = vsum / static_cast<double>(val_set.size());
            if (rec.val_elbo > result.best_val_elbo) {
                result.best_val_elbo = rec.val_elbo;
                result.best_epoch = epoch;
                best_flat = flat;
                stalled_evals = 0;
            } else if (++stalled_evals >= opt.patience) {
                stop = true;
            }
        }

        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                                t0)
                          .count();
        result.history.push_back(rec);
        result.epochs_run = epoch;
        if (on_epoch) on_epoch(rec);
        if (stop) {
            result.early_stopped = true;
            break;
        }
    }
    if (!best_flat.empty()) model.params().assign(best_flat);
    return result;
}

/// Reconstruction negative log-likelihood over a split: each item is
/// encoded, the posterior-mean latent (noise-free z) is decoded, and the
/// unit-variance Gaussian NLL of the item under that reconstruction is
/// averaged. Deterministic — no sampling enters the reported number.
inline EvalStats evaluate_nll(const TvgpVae& model, const std::vector<Tensor>& data) {
    if (data.empty()) throw std::invalid_argument("evaluate_nll: empty split");
    const double d = static_cast<double>(model.spec().data_size());
    const double log2pi = std::log(2.0 * 3.141592653589793238462643383279502884);
    std::vector<double> nll(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const PosteriorFactorParams q = model.encode(data[i]);
        const Tensor xhat = model.decode(model.posterior_mean_latents(q));
        double sq = 0.0;
        for (std::size_t t = 0; t < xhat.size(); ++t) {
            const double r = data[i][t] - xhat[t];
            sq += r * r;
        }
        nll[i] = 0.5 * sq + 0.5 * d * log2pi;
        if (!std::isfinite(nll[i])) {
            throw NumericalError("evaluate_nll: non-finite likelihood at item " +
                                 std::to_string(i));
        }
    }
    EvalStats stats;
    stats.count = nll.size();
    double sum = 0.0;
    for (double v : nll) sum += v;
    stats.mean_nll = sum / static_cast<double>(nll.size());
    if (nll.size() > 1) {
        double ss = 0.0;
        for (double v : nll) ss += (v - stats.mean_nll) * (v - stats.mean_nll);
        const double var = ss / static_cast<double>(nll.size() - 1);
        stats.stderr_nll = std::sqrt(var / static_cast<double>(nll.size()));
    }
    return stats;
}

}  // namespace tvgp
