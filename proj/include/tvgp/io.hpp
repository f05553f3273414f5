#pragma once

// On-disk formats. Four small pieces that the CLI and training loop share:
//  - a little-endian binary tensor container ("TVT1"),
//  - flat key-value text files used for configs and manifests,
//  - dataset directories (manifest + one tensor file per sequence),
//  - model checkpoints (manifest + one tensor file per parameter block)
//    and the per-epoch metrics log format.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tvgp/data_synth.hpp"
#include "tvgp/tensor.hpp"
#include "tvgp/vae.hpp"

namespace tvgp {

/// One line of the training metrics log. val_elbo is NaN on epochs where
/// the validation set was not evaluated.
struct EpochRecord {
    std::size_t epoch = 0;
    double train_elbo = 0.0;
    double train_recon = 0.0;
    double train_kl = 0.0;
    double val_elbo = std::numeric_limits<double>::quiet_NaN();
    double wall_ms = 0.0;
};

namespace io {

/// Shortest round-trip-safe decimal rendering.
inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Binary tensor container. Layout: "TVT1", uint8 order, order x uint32 dims
// (little endian), then the values as little-endian float32 in storage
// (row-major) order. Doubles narrow to float32 on write.

namespace detail {

inline void append_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xffu));
    out.push_back(static_cast<char>((v >> 8) & 0xffu));
    out.push_back(static_cast<char>((v >> 16) & 0xffu));
    out.push_back(static_cast<char>((v >> 24) & 0xffu));
}

inline std::uint32_t read_u32_le(const std::string& bytes, std::size_t off) {
    auto b = [&](std::size_t i) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + i]));
    };
    return b(0) | (b(1) << 8) | (b(2) << 16) | (b(3) << 24);
}

}  // namespace detail

inline std::string encode_tensor(const Tensor& t) {
    if (t.order() > 255) throw std::invalid_argument("encode_tensor: order exceeds 255");
    std::string out = "TVT1";
    out.push_back(static_cast<char>(t.order()));
    for (std::size_t d : t.dims()) {
        if (d > std::numeric_limits<std::uint32_t>::max()) {
            throw std::invalid_argument("encode_tensor: dim exceeds uint32");
        }
        detail::append_u32_le(out, static_cast<std::uint32_t>(d));
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        detail::append_u32_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
    }
    return out;
}

inline Tensor decode_tensor(const std::string& bytes, const std::string& name) {
    auto fail = [&](const std::string& what) -> std::runtime_error {
        return std::runtime_error(name + ": " + what);
    };
    if (bytes.size() < 5) throw fail("truncated tensor file (header)");
    if (std::memcmp(bytes.data(), "TVT1", 4) != 0) throw fail("bad magic, expected TVT1");
    const std::size_t order = static_cast<unsigned char>(bytes[4]);
    std::size_t off = 5;
    if (bytes.size() - off < 4 * order) throw fail("truncated tensor file (dims)");
    std::vector<std::size_t> dims(order);
    std::size_t total = 1;
    for (std::size_t m = 0; m < order; ++m) {
        dims[m] = detail::read_u32_le(bytes, off);
        off += 4;
        if (dims[m] == 0) throw fail("zero dim");
        if (total > (std::size_t{1} << 32) / dims[m]) throw fail("dims product too large");
        total *= dims[m];
    }
    if (bytes.size() - off < 4 * total) throw fail("truncated tensor file (values)");
    if (bytes.size() - off > 4 * total) throw fail("trailing bytes after values");
    Tensor t(dims);
    for (std::size_t i = 0; i < total; ++i) {
        t[i] = static_cast<double>(std::bit_cast<float>(detail::read_u32_le(bytes, off)));
        off += 4;
    }
    return t;
}

inline void write_tensor(const std::filesystem::path& file, const Tensor& t) {
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + file.string());
    const std::string bytes = encode_tensor(t);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + file.string());
}

inline Tensor read_tensor(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + file.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_tensor(bytes, file.string());
}

// ---------------------------------------------------------------------------
// Flat key-value text: one `key = value` per line, full-line # comments,
// blank lines allowed, duplicate keys rejected. Values may be empty.
// Shared by configs and the dataset/checkpoint manifests.

class KeyValueFile {
public:
    static KeyValueFile parse_string(const std::string& text, std::string name) {
        KeyValueFile kv;
        kv.name_ = std::move(name);
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const std::string stripped = trim(line);
            if (stripped.empty() || stripped[0] == '#') continue;
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) {
                throw std::runtime_error(kv.where(lineno) + "expected 'key = value', got '" +
                                         stripped + "'");
            }
            std::string key = trim(line.substr(0, eq));
            std::string value = trim(line.substr(eq + 1));
            if (key.empty()) throw std::runtime_error(kv.where(lineno) + "empty key");
            if (kv.index_.count(key)) {
                throw std::runtime_error(kv.where(lineno) + "duplicate key '" + key + "'");
            }
            kv.index_[key] = kv.entries_.size();
            kv.entries_.push_back(Entry{std::move(key), std::move(value), lineno});
        }
        return kv;
    }

    static KeyValueFile parse_file(const std::filesystem::path& file) {
        std::ifstream in(file);
        if (!in) throw std::runtime_error("cannot open: " + file.string());
        std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return parse_string(text, file.string());
    }

    const std::string& name() const { return name_; }
    bool has(const std::string& key) const { return index_.count(key) > 0; }
    std::size_t size() const { return entries_.size(); }
    const std::string& key_at(std::size_t i) const { return entries_.at(i).key; }

    const std::string& get_string(const std::string& key) const { return find(key).value; }

    std::string get_string_or(const std::string& key, const std::string& fallback) const {
        return has(key) ? get_string(key) : fallback;
    }

    std::uint64_t get_u64(const std::string& key) const {
        const Entry& e = find(key);
        std::size_t used = 0;
        std::uint64_t v = 0;
        try {
            if (!e.value.empty() && (e.value[0] == '-' || e.value[0] == '+')) throw 0;
            v = std::stoull(e.value, &used);
        } catch (...) {
            throw std::runtime_error(value_error(e, "unsigned integer"));
        }
        if (used != e.value.size()) throw std::runtime_error(value_error(e, "unsigned integer"));
        return v;
    }

    std::uint64_t get_u64_or(const std::string& key, std::uint64_t fallback) const {
        return has(key) ? get_u64(key) : fallback;
    }

    double get_double(const std::string& key) const {
        const Entry& e = find(key);
        return parse_double_token(e.value, e);
    }

    double get_double_or(const std::string& key, double fallback) const {
        return has(key) ? get_double(key) : fallback;
    }

    /// Comma-separated nonnegative integers; an empty value is an empty list.
    std::vector<std::size_t> get_size_list(const std::string& key) const {
        const Entry& e = find(key);
        std::vector<std::size_t> out;
        for (const std::string& tok : split_list(e.value)) {
            std::size_t used = 0;
            unsigned long long v = 0;
            try {
                v = std::stoull(tok, &used);
            } catch (...) {
                throw std::runtime_error(value_error(e, "integer list"));
            }
            if (used != tok.size()) throw std::runtime_error(value_error(e, "integer list"));
            out.push_back(static_cast<std::size_t>(v));
        }
        return out;
    }

    std::vector<double> get_double_list(const std::string& key) const {
        const Entry& e = find(key);
        std::vector<double> out;
        for (const std::string& tok : split_list(e.value)) out.push_back(parse_double_token(tok, e));
        return out;
    }

private:
    struct Entry {
        std::string key, value;
        std::size_t line = 0;
    };

    const Entry& find(const std::string& key) const {
        auto it = index_.find(key);
        if (it == index_.end()) {
            throw std::runtime_error(name_ + ": missing key '" + key + "'");
        }
        return entries_[it->second];
    }

    std::string where(std::size_t line) const {
        return name_ + ":" + std::to_string(line) + ": ";
    }

    std::string value_error(const Entry& e, const std::string& wanted) const {
        return where(e.line) + "key '" + e.key + "': cannot parse '" + e.value + "' as " + wanted;
    }

    double parse_double_token(const std::string& tok, const Entry& e) const {
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(tok, &used);
        } catch (...) {
            throw std::runtime_error(value_error(e, "number"));
        }
        if (used != tok.size()) throw std::runtime_error(value_error(e, "number"));
        return v;
    }

    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t");
        return s.substr(a, b - a + 1);
    }

    static std::vector<std::string> split_list(const std::string& value) {
        std::vector<std::string> out;
        if (trim(value).empty()) return out;
        std::size_t start = 0;
        while (true) {
            std::size_t comma = value.find(',', start);
            std::string tok =
                trim(comma == std::string::npos ? value.substr(start)
                                                : value.substr(start, comma - start));
            out.push_back(std::move(tok));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        return out;
    }

    std::string name_;
    std::vector<Entry> entries_;
    std::map<std::string, std::size_t> index_;
};

inline std::string join_sizes(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

inline void write_text_file(const std::filesystem::path& file, const std::string& text) {
    std::ofstream out(file, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + file.string());
    out << text;
    out.flush();
    if (!out) throw std::runtime_error("write failed: " + file.string());
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.txt plus seq_NNNNNN.tvt per sequence. The
// manifest pins the generator spec and the train/val/test index lists so a
// saved dataset is self-describing.

struct StoredDataset {
    DatasetSpec spec;
    std::vector<Tensor> tensors;  // all sequences, in index order
    SplitIndices split;
};

inline std::string sequence_filename(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "seq_%06zu.tvt", i);
    return buf;
}

inline void save_dataset(const std::filesystem::path& dir, const DatasetSpec& spec,
                         const std::vector<Tensor>& tensors, const SplitIndices& split) {
    spec.validate();
    if (tensors.size() != spec.n) {
        throw std::invalid_argument("save_dataset: tensor count does not match spec.n");
    }
    if (split.train.size() + split.val.size() + split.test.size() != spec.n) {
        throw std::invalid_argument("save_dataset: split does not cover the dataset");
    }
    std::filesystem::create_directories(dir);
    std::ostringstream m;
    m << "format = tvgp-dataset-v1\n";
    m << "count = " << spec.n << "\n";
    m << "dims = " << join_sizes(spec.dims) << "\n";
    m << "seed = " << spec.seed << "\n";
    m << "jitter = " << format_double(spec.jitter) << "\n";
    m << "nonlinearity = " << spec.nonlinearity << "\n";
    for (std::size_t mode = 0; mode < spec.kernels.size(); ++mode) {
        m << "kernel." << (mode + 1) << ".sigma = " << format_double(spec.kernels[mode].sigma)
          << "\n";
        m << "kernel." << (mode + 1)
          << ".length_scale = " << format_double(spec.kernels[mode].length_scale) << "\n";
    }
    m << "split.train = " << join_sizes(split.train) << "\n";
    m << "split.val = " << join_sizes(split.val) << "\n";
    m << "split.test = " << join_sizes(split.test) << "\n";
    for (std::size_t i = 0; i < tensors.size(); ++i) {
        write_tensor(dir / sequence_filename(i), tensors[i]);
        m << "file." << i << " = " << sequence_filename(i) << "\n";
    }
    write_text_file(dir / "manifest.txt", m.str());
}

inline StoredDataset load_dataset(const std::filesystem::path& dir) {
    const KeyValueFile kv = KeyValueFile::parse_file(dir / "manifest.txt");
    if (kv.get_string("format") != "tvgp-dataset-v1") {
        throw std::runtime_error(kv.name() + ": unsupported format '" + kv.get_string("format") +
                                 "'");
    }
    StoredDataset ds;
    ds.spec.n = kv.get_u64("count");
    ds.spec.dims = kv.get_size_list("dims");
    ds.spec.seed = kv.get_u64("seed");
    ds.spec.jitter = kv.get_double("jitter");
    ds.spec.nonlinearity = kv.get_string("nonlinearity");
    ds.spec.kernels.clear();
    for (std::size_t mode = 1; mode <= ds.spec.dims.size(); ++mode) {
        const std::string base = "kernel." + std::to_string(mode) + ".";
        ds.spec.kernels.push_back(
            SEKernelParams{kv.get_double(base + "sigma"), kv.get_double(base + "length_scale")});
    }
    ds.spec.validate();
    ds.split.train = kv.get_size_list("split.train");
    ds.split.val = kv.get_size_list("split.val");
    ds.split.test = kv.get_size_list("split.test");
    if (ds.split.train.size() + ds.split.val.size() + ds.split.test.size() != ds.spec.n) {
        throw std::runtime_error(kv.name() + ": split lists do not cover count");
    }
    ds.tensors.reserve(ds.spec.n);
    for (std::size_t i = 0; i < ds.spec.n; ++i) {
        Tensor t = read_tensor(dir / kv.get_string("file." + std::to_string(i)));
        if (t.dims() != ds.spec.dims) {
            throw std::runtime_error(kv.name() + ": sequence " + std::to_string(i) +
                                     " has wrong dims");
        }
        ds.tensors.push_back(std::move(t));
    }
    return ds;
}

/// Collect the tensors of one split, in split-list order.
inline std::vector<Tensor> gather(const std::vector<Tensor>& tensors,
                                  const std::vector<std::size_t>& indices) {
    std::vector<Tensor> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(tensors.at(i));
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint directory: manifest.txt plus param_NNN.tvt per parameter block.
// The manifest carries everything needed to rebuild the model and a hash of
// the architecture so stale parameter files cannot be loaded silently.

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string canonical_spec_string(const ModelSpec& spec) {
    std::ostringstream os;
    os << "data=" << join_sizes(spec.data_dims) << ";channels=" << spec.latent.channels
       << ";modes=" << join_sizes(spec.latent.mode_dims) << ";enc=" << spec.enc_hidden
       << ";dec=" << spec.dec_hidden;
    if (spec.latent.order() > 0) {
        os << ";prior.jitter=" << format_double(spec.prior.jitter);
        for (std::size_t m = 0; m < spec.prior.kernels.size(); ++m) {
            os << ";prior." << (m + 1) << "=" << format_double(spec.prior.kernels[m].sigma) << ":"
               << format_double(spec.prior.kernels[m].length_scale);
        }
    }
    return os.str();
}

struct Checkpoint {
    ModelSpec spec;
    NetworkParams params;  // float32 precision after a round trip
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    std::string dataset_dir;
};

inline std::string param_filename(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "param_%03zu.tvt", i);
    return buf;
}

inline void save_checkpoint(const std::filesystem::path& dir, const ModelSpec& spec,
                            const NetworkParams& params, std::uint64_t seed, std::size_t epoch,
                            const std::string& dataset_dir) {
    spec.validate();
    std::filesystem::create_directories(dir);
    std::ostringstream m;
    m << "format = tvgp-checkpoint-v1\n";
    m << "spec_hash = " << fnv1a64(canonical_spec_string(spec)) << "\n";
    m << "epoch = " << epoch << "\n";
    m << "seed = " << seed << "\n";
    m << "dataset = " << dataset_dir << "\n";
    m << "data_dims = " << join_sizes(spec.data_dims) << "\n";
    m << "latent.channels = " << spec.latent.channels << "\n";
    m << "latent.mode_dims = " << join_sizes(spec.latent.mode_dims) << "\n";
    m << "net.enc_hidden = " << spec.enc_hidden << "\n";
    m << "net.dec_hidden = " << spec.dec_hidden << "\n";
    if (spec.latent.order() > 0) {
        m << "prior.jitter = " << format_double(spec.prior.jitter) << "\n";
        for (std::size_t mode = 0; mode < spec.prior.kernels.size(); ++mode) {
            m << "prior." << (mode + 1)
              << ".sigma = " << format_double(spec.prior.kernels[mode].sigma) << "\n";
            m << "prior." << (mode + 1)
              << ".length_scale = " << format_double(spec.prior.kernels[mode].length_scale)
              << "\n";
        }
    }
    m << "param_count = " << params.size() << "\n";
    for (std::size_t i = 0; i < params.size(); ++i) {
        write_tensor(dir / param_filename(i), params.tensor(i));
        m << "param." << i << ".name = " << params.name(i) << "\n";
        m << "param." << i << ".file = " << param_filename(i) << "\n";
    }
    write_text_file(dir / "manifest.txt", m.str());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
    const KeyValueFile kv = KeyValueFile::parse_file(dir / "manifest.txt");
    if (kv.get_string("format") != "tvgp-checkpoint-v1") {
        throw std::runtime_error(kv.name() + ": unsupported format '" + kv.get_string("format") +
                                 "'");
    }
    Checkpoint ck;
    ck.spec.data_dims = kv.get_size_list("data_dims");
    ck.spec.latent.channels = kv.get_u64("latent.channels");
    ck.spec.latent.mode_dims = kv.get_size_list("latent.mode_dims");
    ck.spec.enc_hidden = kv.get_u64("net.enc_hidden");
    ck.spec.dec_hidden = kv.get_u64("net.dec_hidden");
    if (ck.spec.latent.order() > 0) {
        ck.spec.prior.dims = ck.spec.latent.mode_dims;
        ck.spec.prior.jitter = kv.get_double("prior.jitter");
        ck.spec.prior.kernels.clear();
        for (std::size_t mode = 1; mode <= ck.spec.latent.mode_dims.size(); ++mode) {
            const std::string base = "prior." + std::to_string(mode) + ".";
            ck.spec.prior.kernels.push_back(SEKernelParams{kv.get_double(base + "sigma"),
                                                           kv.get_double(base + "length_scale")});
        }
    }
    ck.spec.validate();
    const std::uint64_t expected = fnv1a64(canonical_spec_string(ck.spec));
    if (kv.get_u64("spec_hash") != expected) {
        throw std::runtime_error(kv.name() + ": spec hash mismatch, checkpoint is inconsistent");
    }
    ck.epoch = kv.get_u64("epoch");
    ck.seed = kv.get_u64("seed");
    ck.dataset_dir = kv.get_string("dataset");
    const std::size_t count = kv.get_u64("param_count");
    for (std::size_t i = 0; i < count; ++i) {
        const std::string base = "param." + std::to_string(i) + ".";
        ck.params.add(kv.get_string(base + "name"),
                      read_tensor(dir / kv.get_string(base + "file")));
    }
    return ck;
}

// ---------------------------------------------------------------------------
// Metrics log: one space-separated line per recorded epoch with a fixed
// field order, doubles rendered round-trip safe.

inline std::string format_metrics_line(const EpochRecord& r) {
    std::ostringstream os;
    os << "epoch=" << r.epoch << " train_elbo=" << format_double(r.train_elbo)
       << " train_recon=" << format_double(r.train_recon)
       << " train_kl=" << format_double(r.train_kl)
       << " val_elbo=" << format_double(r.val_elbo)
       << " wall_ms=" << format_double(r.wall_ms);
    return os.str();
}

inline EpochRecord parse_metrics_line(const std::string& line) {
    std::istringstream in(line);
    std::string tok;
    std::map<std::string, std::string> fields;
    while (in >> tok) {
        const std::size_t eq = tok.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("metrics line: bad token '" + tok + "'");
        }
        fields[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
    auto need = [&](const char* k) -> const std::string& {
        auto it = fields.find(k);
        if (it == fields.end()) {
            throw std::runtime_error(std::string("metrics line: missing field '") + k + "'");
        }
        return it->second;
    };
    EpochRecord r;
    r.epoch = static_cast<std::size_t>(std::stoull(need("epoch")));
    r.train_elbo = std::stod(need("train_elbo"));
    r.train_recon = std::stod(need("train_recon"));
    r.train_kl = std::stod(need("train_kl"));
    r.val_elbo = std::stod(need("val_elbo"));
    r.wall_ms = std::stod(need("wall_ms"));
    return r;
}

inline std::vector<EpochRecord> read_metrics(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot open: " + file.string());
    std::vector<EpochRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        out.push_back(parse_metrics_line(line));
    }
    return out;
}

}  // namespace io
}  // namespace tvgp
