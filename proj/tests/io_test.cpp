#include "tvgp/io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tvgp/rng.hpp"
#include "test_util.hpp"

namespace {

using namespace tvgp;
namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& leaf) {
    fs::path dir = fs::temp_directory_path() / ("tvgp_io_test_" + leaf);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

TEST(TensorFile, RoundTripPreservesFloat32Values) {
    Rng rng(5);
    Tensor t({2, 3, 4});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal() * 3.7;
    fs::path dir = fresh_dir("roundtrip");
    io::write_tensor(dir / "t.tvt", t);
    Tensor back = io::read_tensor(dir / "t.tvt");
    ASSERT_EQ(back.dims(), t.dims());
    for (std::size_t i = 0; i < t.size(); ++i) {
        EXPECT_EQ(back[i], static_cast<double>(static_cast<float>(t[i])));
    }
}

TEST(TensorFile, OrderZeroScalarRoundTrip) {
    fs::path dir = fresh_dir("scalar");
    io::write_tensor(dir / "s.tvt", Tensor::scalar(-0.625));
    Tensor back = io::read_tensor(dir / "s.tvt");
    EXPECT_EQ(back.order(), 0u);
    EXPECT_EQ(back[0], -0.625);
}

TEST(TensorFile, EncodedLayoutIsExactlyAsDocumented) {
    const std::string bytes = io::encode_tensor(Tensor::vector({1.0, -2.5}));
    const unsigned char expect[] = {'T', 'V',  'T',  '1',           // magic
                                    0x01,                           // order
                                    0x02, 0x00, 0x00, 0x00,         // dim 2, LE
                                    0x00, 0x00, 0x80, 0x3f,         // 1.0f
                                    0x00, 0x00, 0x20, 0xc0};        // -2.5f
    ASSERT_EQ(bytes.size(), sizeof expect);
    for (std::size_t i = 0; i < sizeof expect; ++i) {
        EXPECT_EQ(static_cast<unsigned char>(bytes[i]), expect[i]) << "byte " << i;
    }
}

TEST(TensorFile, RejectsCorruptInput) {
    const std::string good = io::encode_tensor(Tensor::vector({1.0, 2.0, 3.0}));
    EXPECT_THROW(io::decode_tensor("TVTX" + good.substr(4), "x"), std::runtime_error);
    EXPECT_THROW(io::decode_tensor(good.substr(0, 3), "x"), std::runtime_error);
    EXPECT_THROW(io::decode_tensor(good.substr(0, good.size() - 1), "x"), std::runtime_error);
    EXPECT_THROW(io::decode_tensor(good + std::string(1, '\0'), "x"), std::runtime_error);
    EXPECT_THROW(io::read_tensor(fs::path("/nonexistent/t.tvt")), std::runtime_error);
}

TEST(KeyValue, ParsesCommentsBlanksAndEmptyValues) {
    const std::string text =
        "# header comment\n"
        "\n"
        "alpha = 1\n"
        "  beta.gamma =  two words \n"
        "empty =\n";
    auto kv = io::KeyValueFile::parse_string(text, "conf");
    EXPECT_EQ(kv.size(), 3u);
    EXPECT_TRUE(kv.has("alpha"));
    EXPECT_FALSE(kv.has("missing"));
    EXPECT_EQ(kv.get_string("alpha"), "1");
    EXPECT_EQ(kv.get_string("beta.gamma"), "two words");
    EXPECT_EQ(kv.get_string("empty"), "");
    EXPECT_TRUE(kv.get_size_list("empty").empty());
}

TEST(KeyValue, ErrorsCarryFileAndLine) {
    try {
        io::KeyValueFile::parse_string("a = 1\nnonsense line\n", "conf");
        FAIL() << "expected parse error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("conf:2:"), std::string::npos) << e.what();
    }
    try {
        io::KeyValueFile::parse_string("a = 1\nb = 2\na = 3\n", "conf");
        FAIL() << "expected duplicate error";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("conf:3:"), std::string::npos) << msg;
        EXPECT_NE(msg.find("duplicate"), std::string::npos) << msg;
    }
    try {
        auto kv = io::KeyValueFile::parse_string("rate = fast\n", "conf");
        kv.get_double("rate");
        FAIL() << "expected value error";
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("conf:1:"), std::string::npos) << msg;
        EXPECT_NE(msg.find("rate"), std::string::npos) << msg;
    }
    auto kv = io::KeyValueFile::parse_string("a = 1\n", "conf");
    EXPECT_THROW(kv.get_string("b"), std::runtime_error);
}

TEST(KeyValue, TypedGettersAndFallbacks) {
    auto kv = io::KeyValueFile::parse_string(
        "n = 600\n"
        "lr = 0.001\n"
        "dims = 1,8,8,6\n"
        "fracs = 0.8, 0.1, 0.1\n",
        "conf");
    EXPECT_EQ(kv.get_u64("n"), 600u);
    EXPECT_DOUBLE_EQ(kv.get_double("lr"), 0.001);
    EXPECT_EQ(kv.get_size_list("dims"), (std::vector<std::size_t>{1, 8, 8, 6}));
    auto f = kv.get_double_list("fracs");
    ASSERT_EQ(f.size(), 3u);
    EXPECT_DOUBLE_EQ(f[0], 0.8);
    EXPECT_EQ(kv.get_u64_or("missing", 7), 7u);
    EXPECT_DOUBLE_EQ(kv.get_double_or("missing", 2.5), 2.5);
    EXPECT_EQ(kv.get_string_or("missing", "dflt"), "dflt");
    EXPECT_THROW(kv.get_u64("lr"), std::runtime_error);
    EXPECT_THROW(kv.get_size_list("fracs"), std::runtime_error);
}

DatasetSpec tiny_dataset_spec() {
    DatasetSpec spec;
    spec.n = 6;
    spec.dims = {1, 2, 2, 3};
    spec.kernels = {SEKernelParams{1.0, 1.0}, SEKernelParams{1.0, 1.5}, SEKernelParams{1.0, 1.5},
                    SEKernelParams{1.0, 3.0}};
    spec.seed = 42;
    return spec;
}

TEST(DatasetDir, SaveLoadRoundTrip) {
    DatasetSpec spec = tiny_dataset_spec();
    auto data = generate(spec);
    auto split = split_indices(spec.n, {0.5, 0.25, 0.25}, spec.seed);
    fs::path dir = fresh_dir("dataset");
    io::save_dataset(dir, spec, data, split);

    auto ds = io::load_dataset(dir);
    EXPECT_EQ(ds.spec.n, spec.n);
    EXPECT_EQ(ds.spec.dims, spec.dims);
    EXPECT_EQ(ds.spec.seed, spec.seed);
    EXPECT_EQ(ds.spec.nonlinearity, spec.nonlinearity);
    EXPECT_DOUBLE_EQ(ds.spec.jitter, spec.jitter);
    ASSERT_EQ(ds.spec.kernels.size(), spec.kernels.size());
    for (std::size_t m = 0; m < spec.kernels.size(); ++m) {
        EXPECT_DOUBLE_EQ(ds.spec.kernels[m].sigma, spec.kernels[m].sigma);
        EXPECT_DOUBLE_EQ(ds.spec.kernels[m].length_scale, spec.kernels[m].length_scale);
    }
    EXPECT_EQ(ds.split.train, split.train);
    EXPECT_EQ(ds.split.val, split.val);
    EXPECT_EQ(ds.split.test, split.test);
    ASSERT_EQ(ds.tensors.size(), data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t j = 0; j < data[i].size(); ++j) {
            EXPECT_EQ(ds.tensors[i][j], static_cast<double>(static_cast<float>(data[i][j])));
        }
    }
}

TEST(DatasetDir, RerunWritesIdenticalBytes) {
    DatasetSpec spec = tiny_dataset_spec();
    auto data = generate(spec);
    auto split = split_indices(spec.n, {0.8, 0.1, 0.1}, spec.seed);
    fs::path a = fresh_dir("dataset_a");
    fs::path b = fresh_dir("dataset_b");
    io::save_dataset(a, spec, data, split);
    io::save_dataset(b, spec, data, split);
    EXPECT_EQ(slurp(a / "manifest.txt"), slurp(b / "manifest.txt"));
    EXPECT_EQ(slurp(a / io::sequence_filename(0)), slurp(b / io::sequence_filename(0)));
}

TEST(DatasetDir, LoadRejectsBadManifest) {
    fs::path dir = fresh_dir("dataset_bad");
    io::write_text_file(dir / "manifest.txt", "format = something-else\n");
    EXPECT_THROW(io::load_dataset(dir), std::runtime_error);
}

ModelSpec small_model_spec() {
    ModelSpec spec;
    spec.data_dims = {1, 3, 3, 2};
    spec.latent.channels = 2;
    spec.latent.mode_dims = {2, 2};
    spec.prior.dims = spec.latent.mode_dims;
    spec.prior.kernels = {SEKernelParams{1.0, 2.0}, SEKernelParams{1.0, 3.0}};
    spec.enc_hidden = 5;
    spec.dec_hidden = 4;
    return spec;
}

TEST(CheckpointDir, SaveLoadRebuildsModel) {
    ModelSpec spec = small_model_spec();
    TvgpVae model = TvgpVae::create(spec, 11);
    fs::path dir = fresh_dir("checkpoint");
    io::save_checkpoint(dir, model.spec(), model.params(), 11, 40, "/data/somewhere");

    auto ck = io::load_checkpoint(dir);
    EXPECT_EQ(ck.seed, 11u);
    EXPECT_EQ(ck.epoch, 40u);
    EXPECT_EQ(ck.dataset_dir, "/data/somewhere");
    EXPECT_EQ(ck.spec.data_dims, spec.data_dims);
    EXPECT_EQ(ck.spec.latent.channels, spec.latent.channels);
    EXPECT_EQ(ck.spec.latent.mode_dims, spec.latent.mode_dims);
    EXPECT_EQ(ck.spec.enc_hidden, spec.enc_hidden);
    EXPECT_EQ(ck.spec.dec_hidden, spec.dec_hidden);
    ASSERT_EQ(ck.params.size(), model.params().size());
    for (std::size_t i = 0; i < ck.params.size(); ++i) {
        EXPECT_EQ(ck.params.name(i), model.params().name(i));
        const Tensor& orig = model.params().tensor(i);
        const Tensor& back = ck.params.tensor(i);
        ASSERT_EQ(back.dims(), orig.dims());
        for (std::size_t j = 0; j < orig.size(); ++j) {
            EXPECT_EQ(back[j], static_cast<double>(static_cast<float>(orig[j])));
        }
    }
    // the restored spec and params must assemble into a working model
    TvgpVae restored(ck.spec, std::move(ck.params));
    Tensor x = Tensor::filled(spec.data_dims, 0.4);
    auto q = restored.encode(x);
    EXPECT_EQ(q.channels.size(), spec.latent.channels);
}

TEST(CheckpointDir, OrderZeroLatentRoundTrip) {
    ModelSpec spec;
    spec.data_dims = {1, 2, 2, 2};
    spec.latent.channels = 3;
    spec.enc_hidden = 4;
    spec.dec_hidden = 4;
    TvgpVae model = TvgpVae::create(spec, 3);
    fs::path dir = fresh_dir("checkpoint_mf");
    io::save_checkpoint(dir, model.spec(), model.params(), 3, 1, "d");
    auto ck = io::load_checkpoint(dir);
    EXPECT_TRUE(ck.spec.latent.mode_dims.empty());
    TvgpVae restored(ck.spec, std::move(ck.params));
    EXPECT_EQ(restored.noise_size(), 3u);
}

TEST(CheckpointDir, TamperedManifestFailsHashCheck) {
    ModelSpec spec = small_model_spec();
    TvgpVae model = TvgpVae::create(spec, 11);
    fs::path dir = fresh_dir("checkpoint_tampered");
    io::save_checkpoint(dir, model.spec(), model.params(), 11, 40, "d");
    std::string manifest = slurp(dir / "manifest.txt");
    const std::string from = "latent.channels = 2";
    const std::size_t pos = manifest.find(from);
    ASSERT_NE(pos, std::string::npos);
    manifest.replace(pos, from.size(), "latent.channels = 3");
    io::write_text_file(dir / "manifest.txt", manifest);
    EXPECT_THROW(io::load_checkpoint(dir), std::runtime_error);
}

TEST(Metrics, FormatAndParseRoundTrip) {
    EpochRecord r;
    r.epoch = 17;
    r.train_elbo = -123.45678901234567;
    r.train_recon = -120.0;
    r.train_kl = 3.4567890123456789;
    r.val_elbo = -130.0e-3;
    r.wall_ms = 251.25;
    EpochRecord back = io::parse_metrics_line(io::format_metrics_line(r));
    EXPECT_EQ(back.epoch, r.epoch);
    EXPECT_EQ(back.train_elbo, r.train_elbo);
    EXPECT_EQ(back.train_recon, r.train_recon);
    EXPECT_EQ(back.train_kl, r.train_kl);
    EXPECT_EQ(back.val_elbo, r.val_elbo);
    EXPECT_EQ(back.wall_ms, r.wall_ms);
}

TEST(Metrics, UnevaluatedEpochRoundTripsAsNaN) {
    EpochRecord r;
    r.epoch = 3;
    const std::string line = io::format_metrics_line(r);
    EXPECT_NE(line.find("val_elbo=nan"), std::string::npos) << line;
    EXPECT_TRUE(std::isnan(io::parse_metrics_line(line).val_elbo));
}

TEST(Metrics, FileReaderSkipsBlankLinesAndKeepsOrder) {
    fs::path dir = fresh_dir("metrics");
    EpochRecord a;
    a.epoch = 1;
    a.train_elbo = -5.0;
    EpochRecord b;
    b.epoch = 2;
    b.train_elbo = -4.0;
    b.val_elbo = -4.5;
    io::write_text_file(dir / "metrics.txt", io::format_metrics_line(a) + "\n\n" +
                                                 io::format_metrics_line(b) + "\n");
    auto rows = io::read_metrics(dir / "metrics.txt");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].epoch, 1u);
    EXPECT_EQ(rows[1].epoch, 2u);
    EXPECT_EQ(rows[1].val_elbo, -4.5);
    EXPECT_THROW(io::parse_metrics_line("epoch=1 junk"), std::runtime_error);
    EXPECT_THROW(io::parse_metrics_line("epoch=1"), std::runtime_error);
}

}  // namespace
