// Command-line front end: synthetic data generation, training, held-out
// evaluation, single-sequence reconstruction, and the numerical
// verification suites. Configuration is a flat key-value file; every
// subcommand is deterministic given its inputs.
//
// Exit codes: 0 success, 1 usage/configuration error, 2 numerical failure.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tvgp/data_synth.hpp"
#include "tvgp/errors.hpp"
#include "tvgp/io.hpp"
#include "tvgp/train.hpp"
#include "tvgp/vae.hpp"
#include "tvgp/verify.hpp"

namespace fs = std::filesystem;
using namespace tvgp;

namespace {

SEKernelParams kernel_from_config(const io::KeyValueFile& kv, const std::string& uniform_base,
                                  const std::string& mode_base, const SEKernelParams& fallback) {
    SEKernelParams k = fallback;
    k.sigma = kv.get_double_or(uniform_base + "sigma", k.sigma);
    k.length_scale = kv.get_double_or(uniform_base + "length_scale", k.length_scale);
    k.sigma = kv.get_double_or(mode_base + "sigma", k.sigma);
    k.length_scale = kv.get_double_or(mode_base + "length_scale", k.length_scale);
    return k;
}

int cmd_gen_data(const std::string& config_path) {
    const io::KeyValueFile kv = io::KeyValueFile::parse_file(config_path);
    const std::string dir = kv.get_string("data.dir");

    DatasetSpec spec;
    spec.seed = kv.get_u64_or("seed", 0);
    spec.n = kv.get_u64_or("data.n", spec.n);
    if (kv.has("data.dims")) spec.dims = kv.get_size_list("data.dims");
    spec.jitter = kv.get_double_or("data.jitter", spec.jitter);
    spec.nonlinearity = kv.get_string_or("data.nonlinearity", spec.nonlinearity);
    const std::vector<SEKernelParams> defaults = default_kernels(spec.dims);
    spec.kernels.clear();
    for (std::size_t m = 0; m < spec.dims.size(); ++m) {
        spec.kernels.push_back(kernel_from_config(
            kv, "data.kernel.", "data.kernel." + std::to_string(m + 1) + ".", defaults[m]));
    }
    spec.validate();

    std::array<double, 3> fractions{0.8, 0.1, 0.1};
    if (kv.has("split.fractions")) {
        const std::vector<double> f = kv.get_double_list("split.fractions");
        if (f.size() != 3) {
            throw std::runtime_error("split.fractions must list train,val,test");
        }
        fractions = {f[0], f[1], f[2]};
    }

    const std::vector<Tensor> data = generate(spec);
    const SplitIndices split = split_indices(spec.n, fractions, spec.seed);
    io::save_dataset(dir, spec, data, split);
    std::cout << "wrote " << spec.n << " sequences to " << dir << " (train/val/test = "
              << split.train.size() << "/" << split.val.size() << "/" << split.test.size()
              << ")\n";
    return 0;
}

ModelSpec model_spec_from_config(const io::KeyValueFile& kv,
                                 const std::vector<std::size_t>& data_dims) {
    ModelSpec spec;
    spec.data_dims = data_dims;
    spec.latent.channels = kv.get_u64_or("latent.channels", 1);
    spec.latent.mode_dims = kv.get_size_list("latent.mode_dims");
    spec.enc_hidden = kv.get_u64_or("net.enc_hidden", spec.enc_hidden);
    spec.dec_hidden = kv.get_u64_or("net.dec_hidden", spec.dec_hidden);
    if (!spec.latent.mode_dims.empty()) {
        spec.prior.dims = spec.latent.mode_dims;
        spec.prior.jitter = kv.get_double_or("prior.jitter", 1e-6);
        spec.prior.kernels.clear();
        for (std::size_t m = 0; m < spec.prior.dims.size(); ++m) {
            spec.prior.kernels.push_back(
                kernel_from_config(kv, "prior.", "prior." + std::to_string(m + 1) + ".",
                                   SEKernelParams{1.0, 1.0}));
        }
    }
    spec.validate();
    return spec;
}

int cmd_train(const std::string& config_path) {
    const io::KeyValueFile kv = io::KeyValueFile::parse_file(config_path);
    const std::string dataset_dir = kv.get_string("dataset.dir");
    const std::string checkpoint_dir = kv.get_string("out.checkpoint");
    const io::StoredDataset ds = io::load_dataset(dataset_dir);

    const ModelSpec spec = model_spec_from_config(kv, ds.spec.dims);

    TrainOptions opt;
    opt.seed = kv.get_u64_or("seed", 0);
    opt.lr = kv.get_double_or("train.lr", opt.lr);
    opt.batch_size = kv.get_u64_or("train.batch_size", opt.batch_size);
    opt.max_epochs = kv.get_u64_or("train.max_epochs", opt.max_epochs);
    opt.eval_every = kv.get_u64_or("train.eval_every", opt.eval_every);
    opt.patience = kv.get_u64_or("train.patience", opt.patience);
    opt.threads = kv.get_u64_or("train.threads", opt.threads);
    opt.validate();

    const std::string metrics_path = kv.get_string_or(
        "out.metrics", (fs::path(checkpoint_dir) / "metrics.txt").string());
    if (!fs::path(metrics_path).parent_path().empty()) {
        fs::create_directories(fs::path(metrics_path).parent_path());
    }
    std::ofstream metrics(metrics_path, std::ios::trunc);
    if (!metrics) throw std::runtime_error("cannot open for writing: " + metrics_path);

    TvgpVae model = TvgpVae::create(spec, opt.seed);
    const std::vector<Tensor> train_set = io::gather(ds.tensors, ds.split.train);
    const std::vector<Tensor> val_set = io::gather(ds.tensors, ds.split.val);

    const TrainResult result =
        train(model, train_set, val_set, opt, [&](const EpochRecord& rec) {
            const std::string line = io::format_metrics_line(rec);
            metrics << line << "\n";
            metrics.flush();
            std::cout << line << "\n";
        });

    // the checkpoint records the epoch whose parameters the model kept
    const std::size_t kept = result.best_epoch > 0 ? result.best_epoch : result.epochs_run;
    io::save_checkpoint(checkpoint_dir, model.spec(), model.params(), opt.seed, kept,
                        dataset_dir);
    std::cout << "finished after " << result.epochs_run << " epochs"
              << (result.early_stopped ? " (early stop)" : "") << ", best val elbo "
              << io::format_double(result.best_val_elbo) << " at epoch " << kept
              << ", checkpoint at " << checkpoint_dir << "\n";
    return 0;
}

const std::vector<std::size_t>& split_of(const io::StoredDataset& ds, const std::string& name) {
    if (name == "train") return ds.split.train;
    if (name == "val") return ds.split.val;
    if (name == "test") return ds.split.test;
    throw std::runtime_error("unknown split '" + name + "', expected train, val or test");
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& split_name) {
    io::Checkpoint ck = io::load_checkpoint(checkpoint_dir);
    const io::StoredDataset ds = io::load_dataset(ck.dataset_dir);
    if (ds.spec.dims != ck.spec.data_dims) {
        throw std::runtime_error("checkpoint and dataset disagree on data dims");
    }
    const std::vector<Tensor> data = io::gather(ds.tensors, split_of(ds, split_name));
    if (data.empty()) throw std::runtime_error("split '" + split_name + "' is empty");
    const TvgpVae model(ck.spec, std::move(ck.params));
    const EvalStats stats = evaluate_nll(model, data);
    std::cout << "split=" << split_name << " count=" << stats.count
              << " mean_nll=" << io::format_double(stats.mean_nll)
              << " stderr_nll=" << io::format_double(stats.stderr_nll) << "\n";
    return 0;
}

int cmd_reconstruct(const std::string& checkpoint_dir, std::size_t index,
                    const std::string& out_dir) {
    io::Checkpoint ck = io::load_checkpoint(checkpoint_dir);
    const io::StoredDataset ds = io::load_dataset(ck.dataset_dir);
    if (index >= ds.tensors.size()) {
        throw std::runtime_error("index " + std::to_string(index) + " out of range, dataset has " +
                                 std::to_string(ds.tensors.size()) + " sequences");
    }
    const TvgpVae model(ck.spec, std::move(ck.params));
    const Tensor& x = ds.tensors[index];
    const Tensor xhat = model.decode(model.posterior_mean_latents(model.encode(x)));

    fs::create_directories(out_dir);
    io::write_tensor(fs::path(out_dir) / "original.tvt", x);
    io::write_tensor(fs::path(out_dir) / "reconstruction.tvt", xhat);
    double sse = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sse += (x[i] - xhat[i]) * (x[i] - xhat[i]);
    std::cout << "wrote original.tvt and reconstruction.tvt to " << out_dir
              << " (rmse = " << io::format_double(std::sqrt(sse / static_cast<double>(x.size())))
              << ")\n";
    return 0;
}

int cmd_verify(const std::string& suite, std::uint64_t seed) {
    std::vector<SuiteResult> results;
    if (suite.empty()) {
        results = run_all_suites(seed);
    } else if (suite == "bridge") {
        results.push_back(verify_vec_kron_bridge(seed));
    } else if (suite == "density") {
        results.push_back(verify_density_equivalence(seed));
    } else if (suite == "kl") {
        results.push_back(verify_kl_equivalence(seed));
    } else if (suite == "sampling") {
        results.push_back(verify_sampling_covariance(seed));
    } else if (suite == "gradients") {
        results.push_back(verify_elbo_gradients(seed));
    } else {
        throw std::runtime_error("unknown suite '" + suite +
                                 "', expected bridge, density, kl, sampling or gradients");
    }
    bool all_pass = true;
    for (const SuiteResult& r : results) {
        std::cout << format_suite_result(r) << "\n";
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Kronecker-structured Gaussian toolkit: synthetic tensor sequences, "
                 "structured-posterior training, evaluation and self-verification"};
    app.require_subcommand(1);

    std::string config_path;
    std::string checkpoint_dir;
    std::string split_name = "val";
    std::string out_path;
    std::string suite;
    std::uint64_t verify_seed = 0;
    std::size_t index = 0;

    CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset directory");
    gen->add_option("--config", config_path, "key-value config file")->required();

    CLI::App* tr = app.add_subcommand("train", "train a model and write a checkpoint");
    tr->add_option("--config", config_path, "key-value config file")->required();

    CLI::App* ev = app.add_subcommand("eval", "report mean reconstruction NLL on a split");
    ev->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    ev->add_option("--split", split_name, "train, val or test");

    CLI::App* rec = app.add_subcommand("reconstruct", "encode/decode one sequence to disk");
    rec->add_option("--checkpoint", checkpoint_dir, "checkpoint directory")->required();
    rec->add_option("--index", index, "sequence index within the dataset")->required();
    rec->add_option("--out", out_path, "output directory")->required();

    CLI::App* ver = app.add_subcommand("verify", "run the numerical verification suites");
    ver->add_option("--suite", suite, "bridge, density, kl, sampling or gradients");
    ver->add_option("--seed", verify_seed, "seed for the randomized suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (app.got_subcommand(gen)) return cmd_gen_data(config_path);
        if (app.got_subcommand(tr)) return cmd_train(config_path);
        if (app.got_subcommand(ev)) return cmd_eval(checkpoint_dir, split_name);
        if (app.got_subcommand(rec)) return cmd_reconstruct(checkpoint_dir, index, out_path);
        if (app.got_subcommand(ver)) return cmd_verify(suite, verify_seed);
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
