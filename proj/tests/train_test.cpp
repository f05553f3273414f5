#include "tvgp/train.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "tvgp/data_synth.hpp"
#include "test_util.hpp"

namespace {

using namespace tvgp;

ModelSpec small_model_spec(std::size_t channels, std::vector<std::size_t> mode_dims) {
    ModelSpec spec;
    spec.data_dims = {1, 3, 3, 2};
    spec.latent.channels = channels;
    spec.latent.mode_dims = mode_dims;
    if (!mode_dims.empty()) {
        spec.prior.dims = mode_dims;
        spec.prior.kernels.assign(mode_dims.size(), SEKernelParams{1.0, 2.0});
    }
    spec.enc_hidden = 6;
    spec.dec_hidden = 6;
    return spec;
}

std::vector<Tensor> small_dataset(std::size_t n, std::uint64_t seed) {
    DatasetSpec spec;
    spec.n = n;
    spec.dims = {1, 3, 3, 2};
    spec.kernels = {SEKernelParams{1.0, 1.0}, SEKernelParams{1.0, 1.5}, SEKernelParams{1.0, 1.5},
                    SEKernelParams{1.0, 3.0}};
    spec.seed = seed;
    return generate(spec);
}

void expect_same_history_modulo_wall_time(const TrainResult& a, const TrainResult& b) {
    ASSERT_EQ(a.history.size(), b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
        EXPECT_EQ(a.history[i].epoch, b.history[i].epoch);
        EXPECT_EQ(a.history[i].train_elbo, b.history[i].train_elbo) << "epoch " << i + 1;
        EXPECT_EQ(a.history[i].train_recon, b.history[i].train_recon);
        EXPECT_EQ(a.history[i].train_kl, b.history[i].train_kl);
        const bool a_nan = std::isnan(a.history[i].val_elbo);
        const bool b_nan = std::isnan(b.history[i].val_elbo);
        EXPECT_EQ(a_nan, b_nan);
        if (!a_nan) EXPECT_EQ(a.history[i].val_elbo, b.history[i].val_elbo);
    }
    EXPECT_EQ(a.epochs_run, b.epochs_run);
    EXPECT_EQ(a.early_stopped, b.early_stopped);
    EXPECT_EQ(a.best_val_elbo, b.best_val_elbo);
}

TEST(Train, BoundImprovesOnSmallDataset) {
    TvgpVae model = TvgpVae::create(small_model_spec(2, {2, 2}), 7);
    auto data = small_dataset(12, 100);
    std::vector<Tensor> train_set(data.begin(), data.begin() + 10);
    std::vector<Tensor> val_set(data.begin() + 10, data.end());
    TrainOptions opt;
    opt.seed = 1;
    opt.lr = 5e-3;
    opt.batch_size = 5;
    opt.max_epochs = 30;
    opt.eval_every = 10;
    auto result = train(model, train_set, val_set, opt);
    ASSERT_EQ(result.history.size(), 30u);
    EXPECT_GT(result.history.back().train_elbo, result.history.front().train_elbo);
    EXPECT_TRUE(std::isfinite(result.best_val_elbo));
    // evals land on epochs 10, 20, 30; others carry no validation number
    EXPECT_TRUE(std::isnan(result.history[0].val_elbo));
    EXPECT_FALSE(std::isnan(result.history[9].val_elbo));
    EXPECT_FALSE(std::isnan(result.history[29].val_elbo));
}

TEST(Train, RepeatRunsAreBitIdentical) {
    auto run = [] {
        TvgpVae model = TvgpVae::create(small_model_spec(2, {2, 2}), 7);
        auto data = small_dataset(10, 100);
        std::vector<Tensor> train_set(data.begin(), data.begin() + 8);
        std::vector<Tensor> val_set(data.begin() + 8, data.end());
        TrainOptions opt;
        opt.seed = 5;
        opt.lr = 2e-3;
        opt.batch_size = 4;
        opt.max_epochs = 6;
        opt.eval_every = 2;
        return train(model, train_set, val_set, opt);
    };
    expect_same_history_modulo_wall_time(run(), run());
}

TEST(Train, ThreadCountDoesNotChangeResults) {
    auto run = [](std::size_t threads) {
        TvgpVae model = TvgpVae::create(small_model_spec(2, {2, 2}), 9);
        auto data = small_dataset(9, 55);
        std::vector<Tensor> train_set(data.begin(), data.begin() + 7);
        std::vector<Tensor> val_set(data.begin() + 7, data.end());
        TrainOptions opt;
        opt.seed = 3;
        opt.lr = 3e-3;
        opt.batch_size = 4;
        opt.max_epochs = 4;
        opt.eval_every = 2;
        opt.threads = threads;
        return train(model, train_set, val_set, opt);
    };
    expect_same_history_modulo_wall_time(run(1), run(3));
}

TEST(Train, EarlyStoppingFiresOnFirstStall) {
    TvgpVae model = TvgpVae::create(small_model_spec(2, {2}), 13);
    auto data = small_dataset(8, 200);
    std::vector<Tensor> train_set(data.begin(), data.begin() + 6);
    std::vector<Tensor> val_set(data.begin() + 6, data.end());
    TrainOptions opt;
    opt.seed = 2;
    opt.lr = 1e-2;
    opt.batch_size = 6;
    opt.max_epochs = 400;
    opt.eval_every = 1;
    opt.patience = 1;
    auto result = train(model, train_set, val_set, opt);
    ASSERT_TRUE(result.early_stopped);
    ASSERT_LT(result.epochs_run, 400u);
    // every evaluation before the stop improved on the best so far; the
    // last one did not
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 1 < result.history.size(); ++i) {
        EXPECT_GT(result.history[i].val_elbo, best) << "epoch " << i + 1;
        best = result.history[i].val_elbo;
    }
    EXPECT_LE(result.history.back().val_elbo, best);
    EXPECT_EQ(result.best_val_elbo, best);
}

TEST(Train, PatienceCountsConsecutiveStallsOnly) {
    TvgpVae model = TvgpVae::create(small_model_spec(2, {2}), 13);
    auto data = small_dataset(8, 200);
    std::vector<Tensor> train_set(data.begin(), data.begin() + 6);
    std::vector<Tensor> val_set(data.begin() + 6, data.end());
    TrainOptions opt;
    opt.seed = 2;
    opt.lr = 1e-2;
    opt.batch_size = 6;
    opt.max_epochs = 400;
    opt.eval_every = 1;
    opt.patience = 3;
    auto result = train(model, train_set, val_set, opt);
    ASSERT_TRUE(result.early_stopped);
    const std::size_t e = result.history.size();
    ASSERT_GE(e, 3u);
    // the last three evaluations failed to beat the running best
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i + 3 < e; ++i) best = std::max(best, result.history[i].val_elbo);
    for (std::size_t i = e - 3; i < e; ++i) EXPECT_LE(result.history[i].val_elbo, best);
}

TEST(Train, NonFiniteParametersRaiseNumericalError) {
    TvgpVae model = TvgpVae::create(small_model_spec(2, {2, 2}), 7);
    auto flat = model.params().flatten();
    flat.back() = std::numeric_limits<double>::quiet_NaN();  // decoder output bias
    model.params().assign(flat);
    auto data = small_dataset(4, 100);
    TrainOptions opt;
    opt.max_epochs = 1;
    EXPECT_THROW(train(model, data, {}, opt), NumericalError);
}

TEST(Train, RejectsBadOptionsAndEmptyData) {
    TvgpVae model = TvgpVae::create(small_model_spec(2, {2, 2}), 7);
    auto data = small_dataset(4, 100);
    TrainOptions opt;
    opt.lr = 0.0;
    EXPECT_THROW(train(model, data, {}, opt), std::invalid_argument);
    opt = TrainOptions{};
    opt.batch_size = 0;
    EXPECT_THROW(train(model, data, {}, opt), std::invalid_argument);
    opt = TrainOptions{};
    EXPECT_THROW(train(model, {}, {}, opt), std::invalid_argument);
}

TEST(Train, CallbackSeesEveryRecordInOrder) {
    TvgpVae model = TvgpVae::create(small_model_spec(1, {}), 3);
    auto data = small_dataset(6, 42);
    TrainOptions opt;
    opt.max_epochs = 3;
    opt.eval_every = 2;
    std::vector<std::size_t> seen;
    auto result = train(model, data, {}, opt,
                        [&](const EpochRecord& r) { seen.push_back(r.epoch); });
    EXPECT_EQ(seen, (std::vector<std::size_t>{1, 2, 3}));
    EXPECT_EQ(result.epochs_run, 3u);
    EXPECT_FALSE(result.early_stopped);  // no validation data, no stopping
}

TEST(Eval, NllIsMeanDecodeReconstructionError) {
    TvgpVae model = TvgpVae::create(small_model_spec(2, {2, 2}), 7);
    auto data = small_dataset(6, 300);
    auto a = evaluate_nll(model, data);
    auto b = evaluate_nll(model, data);
    EXPECT_EQ(a.mean_nll, b.mean_nll);  // no sampling anywhere
    EXPECT_EQ(a.stderr_nll, b.stderr_nll);
    EXPECT_EQ(a.count, 6u);
    EXPECT_GE(a.stderr_nll, 0.0);
    EXPECT_TRUE(std::isfinite(a.mean_nll));
    // single item: the stat is exactly the unit-variance Gaussian NLL of
    // the item under the posterior-mean reconstruction
    std::vector<Tensor> one{data[0]};
    const Tensor xhat = model.decode(model.posterior_mean_latents(model.encode(data[0])));
    double sq = 0.0;
    for (std::size_t t = 0; t < xhat.size(); ++t) {
        sq += (data[0][t] - xhat[t]) * (data[0][t] - xhat[t]);
    }
    const double expect =
        0.5 * sq + 0.5 * static_cast<double>(xhat.size()) * std::log(2.0 * M_PI);
    EXPECT_NEAR(evaluate_nll(model, one).mean_nll, expect, 1e-12);
    EXPECT_THROW(evaluate_nll(model, {}), std::invalid_argument);
}

TEST(Eval, TrainedModelBeatsFreshModelOnHeldOut) {
    auto data = small_dataset(26, 100);
    std::vector<Tensor> train_set(data.begin(), data.begin() + 20);
    std::vector<Tensor> heldout(data.begin() + 20, data.end());
    TvgpVae fresh = TvgpVae::create(small_model_spec(2, {2, 2}), 7);
    TvgpVae trained = TvgpVae::create(small_model_spec(2, {2, 2}), 7);
    TrainOptions opt;
    opt.seed = 1;
    opt.lr = 5e-3;
    opt.batch_size = 5;
    opt.max_epochs = 40;
    opt.eval_every = 10;
    train(trained, train_set, {}, opt);
    EXPECT_LT(evaluate_nll(trained, heldout).mean_nll, evaluate_nll(fresh, heldout).mean_nll);
}

TEST(Train, KeepsParametersOfBestValidationEpoch) {
    TvgpVae model = TvgpVae::create(small_model_spec(1, {3}), 11);
    auto data = small_dataset(12, 55);
    std::vector<Tensor> train_set(data.begin(), data.begin() + 8);
    std::vector<Tensor> val_set(data.begin() + 8, data.end());
    TrainOptions opt;
    opt.seed = 2;
    opt.lr = 2e-2;  // deliberately twitchy so validation moves around
    opt.batch_size = 4;
    opt.max_epochs = 12;
    opt.eval_every = 1;
    opt.patience = 100;
    std::vector<std::pair<double, std::vector<double>>> snaps;
    auto result = train(model, train_set, val_set, opt, [&](const EpochRecord& rec) {
        if (!std::isnan(rec.val_elbo)) snaps.emplace_back(rec.val_elbo, model.params().flatten());
    });
    ASSERT_EQ(snaps.size(), 12u);
    std::size_t best = 0;
    for (std::size_t i = 1; i < snaps.size(); ++i) {
        if (snaps[i].first > snaps[best].first) best = i;
    }
    EXPECT_EQ(result.best_epoch, best + 1);
    EXPECT_EQ(result.best_val_elbo, snaps[best].first);
    EXPECT_EQ(model.params().flatten(), snaps[best].second);  // restored, bitwise
}

}  // namespace
