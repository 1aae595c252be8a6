#ifndef MIRAGE_CHECKPOINT_IO_HPP
#define MIRAGE_CHECKPOINT_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mirage/error.hpp"
#include "mirage/model.hpp"

namespace mirage {

// Checkpoint container. Layout:
//   magic "MIRAGECK" | u32 version | meta string map | shape table |
//   named f64 blocks (row-major, little-endian) | 64-byte hex config hash
//
// All integers are little-endian. Serialization is canonical: the same
// checkpoint always produces the same bytes.

constexpr char kCkptMagic[8] = {'M', 'I', 'R', 'A', 'G', 'E', 'C', 'K'};
constexpr std::uint32_t kCkptVersion = 1;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
    put_u64(out, std::bit_cast<std::uint64_t>(d));
}

inline void put_str(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

class ByteReader {
  public:
    ByteReader(const std::string& bytes, std::string origin)
        : bytes_(&bytes), origin_(std::move(origin)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>((*bytes_)[pos_ + i])) << (8 * i);
        }
        pos_ += 4;
        return v;
    }

    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>((*bytes_)[pos_ + i])) << (8 * i);
        }
        pos_ += 8;
        return v;
    }

    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        const std::uint32_t len = u32();
        need(len);
        std::string s = bytes_->substr(pos_, len);
        pos_ += len;
        return s;
    }

    std::string raw(std::size_t len) {
        need(len);
        std::string s = bytes_->substr(pos_, len);
        pos_ += len;
        return s;
    }

    std::size_t remaining() const { return bytes_->size() - pos_; }

  private:
    void need(std::size_t n) {
        if (pos_ + n > bytes_->size()) {
            throw DataError(origin_ + ": truncated checkpoint file");
        }
    }

    const std::string* bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

}  // namespace detail

struct CheckpointBlock {
    std::string name;
    const Matrix* matrix = nullptr;        // either a matrix...
    const std::vector<double>* vec = nullptr;  // ...or a flat vector (1 x n)
};

inline std::vector<CheckpointBlock> checkpoint_blocks(const Checkpoint& ckpt) {
    std::vector<CheckpointBlock> blocks;
    blocks.push_back({"encoder", &ckpt.backbone.encoder, nullptr});
    blocks.push_back({"projection", &ckpt.backbone.projection, nullptr});
    for (std::size_t l = 0; l < ckpt.backbone.mixing.size(); ++l) {
        blocks.push_back({"mixing." + std::to_string(l), &ckpt.backbone.mixing[l], nullptr});
    }
    blocks.push_back({"embeddings", &ckpt.head.embeddings, nullptr});
    blocks.push_back({"lm_head", &ckpt.head.lm_head, nullptr});
    blocks.push_back({"lm_head_bias", nullptr, &ckpt.head.bias});
    return blocks;
}

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
    std::string out;
    out.append(kCkptMagic, sizeof(kCkptMagic));
    detail::put_u32(out, kCkptVersion);

    std::map<std::string, std::string> meta;  // ordered -> canonical bytes
    meta["stage"] = ckpt.meta.stage;
    meta["step_count"] = std::to_string(ckpt.meta.step_count);
    meta["backbone_seed"] = std::to_string(ckpt.backbone.seed);
    {
        std::ostringstream sig;
        sig.precision(17);
        sig << ckpt.backbone.noise_sigma;
        meta["noise_sigma"] = sig.str();
    }
    meta["nonlinearity"] = ckpt.backbone.nonlinearity;
    meta["grid"] = std::to_string(ckpt.dims.grid);
    meta["visual_dim"] = std::to_string(ckpt.dims.visual_dim);
    meta["hidden_dim"] = std::to_string(ckpt.dims.hidden_dim);
    meta["layers"] = std::to_string(ckpt.dims.layers);
    {
        std::string joined;
        for (const auto& name : ckpt.vocab.class_names()) {
            if (!joined.empty()) joined.push_back(',');
            joined += name;
        }
        meta["class_names"] = joined;
    }
    detail::put_u32(out, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        detail::put_str(out, k);
        detail::put_str(out, v);
    }

    const auto blocks = checkpoint_blocks(ckpt);
    detail::put_u32(out, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& b : blocks) {
        detail::put_str(out, b.name);
        if (b.matrix) {
            detail::put_u32(out, static_cast<std::uint32_t>(b.matrix->rows()));
            detail::put_u32(out, static_cast<std::uint32_t>(b.matrix->cols()));
        } else {
            detail::put_u32(out, 1);
            detail::put_u32(out, static_cast<std::uint32_t>(b.vec->size()));
        }
    }
    for (const auto& b : blocks) {
        if (b.matrix) {
            for (std::size_t i = 0; i < b.matrix->size(); ++i) {
                detail::put_f64(out, b.matrix->data()[i]);
            }
        } else {
            for (double d : *b.vec) detail::put_f64(out, d);
        }
    }

    std::string hash = ckpt.meta.config_hash;
    hash.resize(64, '0');
    out.append(hash);
    return out;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    const std::string bytes = serialize_checkpoint(ckpt);
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

inline Checkpoint parse_checkpoint(const std::string& bytes, const std::string& origin) {
    detail::ByteReader r(bytes, origin);
    if (r.raw(sizeof(kCkptMagic)) != std::string(kCkptMagic, sizeof(kCkptMagic))) {
        throw DataError(origin + ": not a checkpoint file (bad magic)");
    }
    const std::uint32_t version = r.u32();
    if (version != kCkptVersion) {
        throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version));
    }

    std::map<std::string, std::string> meta;
    const std::uint32_t meta_count = r.u32();
    for (std::uint32_t i = 0; i < meta_count; ++i) {
        std::string k = r.str();
        meta[k] = r.str();
    }
    auto require = [&](const char* key) -> const std::string& {
        auto it = meta.find(key);
        if (it == meta.end()) throw DataError(origin + ": checkpoint missing meta key " + key);
        return it->second;
    };

    Checkpoint ckpt;
    ckpt.meta.stage = require("stage");
    ckpt.meta.step_count = std::stoll(require("step_count"));
    ckpt.backbone.seed = std::stoull(require("backbone_seed"));
    ckpt.backbone.noise_sigma = std::stod(require("noise_sigma"));
    ckpt.backbone.nonlinearity = require("nonlinearity");

    std::vector<std::string> class_names;
    {
        const std::string& joined = require("class_names");
        std::string cur;
        for (char c : joined) {
            if (c == ',') {
                class_names.push_back(cur);
                cur.clear();
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) class_names.push_back(cur);
    }
    ckpt.vocab = Vocabulary(class_names);
    ckpt.dims.grid = std::stoi(require("grid"));
    ckpt.dims.classes = static_cast<int>(class_names.size());
    ckpt.dims.visual_dim = std::stoi(require("visual_dim"));
    ckpt.dims.hidden_dim = std::stoi(require("hidden_dim"));
    ckpt.dims.layers = std::stoi(require("layers"));
    ckpt.dims.vocab = ckpt.vocab.size();

    struct Shape {
        std::string name;
        std::uint32_t rows, cols;
    };
    std::vector<Shape> shapes;
    const std::uint32_t block_count = r.u32();
    for (std::uint32_t i = 0; i < block_count; ++i) {
        Shape s;
        s.name = r.str();
        s.rows = r.u32();
        s.cols = r.u32();
        shapes.push_back(std::move(s));
    }

    std::map<std::string, Matrix> loaded;
    for (const auto& s : shapes) {
        Matrix m(s.rows, s.cols);
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
        loaded.emplace(s.name, std::move(m));
    }

    const std::string hash = r.raw(64);
    ckpt.meta.config_hash = hash;
    if (r.remaining() != 0) throw DataError(origin + ": trailing bytes after checkpoint hash");

    auto take = [&](const std::string& name, std::size_t rows, std::size_t cols) -> Matrix {
        auto it = loaded.find(name);
        if (it == loaded.end()) throw DataError(origin + ": checkpoint missing block " + name);
        if (it->second.rows() != rows || it->second.cols() != cols) {
            throw DataError(origin + ": block " + name + " has shape " +
                            std::to_string(it->second.rows()) + "x" +
                            std::to_string(it->second.cols()) + ", expected " +
                            std::to_string(rows) + "x" + std::to_string(cols));
        }
        return std::move(it->second);
    };

    const auto& d = ckpt.dims;
    ckpt.backbone.encoder = take("encoder", static_cast<std::size_t>(d.visual_dim),
                                 static_cast<std::size_t>(d.encoder_in()));
    ckpt.backbone.projection = take("projection", static_cast<std::size_t>(d.hidden_dim),
                                    static_cast<std::size_t>(d.visual_dim));
    for (int l = 0; l < d.layers; ++l) {
        ckpt.backbone.mixing.push_back(take("mixing." + std::to_string(l),
                                            static_cast<std::size_t>(d.hidden_dim),
                                            static_cast<std::size_t>(d.hidden_dim)));
    }
    ckpt.head.embeddings = take("embeddings", static_cast<std::size_t>(d.vocab),
                                static_cast<std::size_t>(d.hidden_dim));
    ckpt.head.lm_head = take("lm_head", static_cast<std::size_t>(d.vocab),
                             static_cast<std::size_t>(d.hidden_dim));
    Matrix bias = take("lm_head_bias", 1, static_cast<std::size_t>(d.vocab));
    ckpt.head.bias.assign(bias.data(), bias.data() + bias.size());
    return ckpt;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str(), path.string());
}

}  // namespace mirage

#endif  // MIRAGE_CHECKPOINT_IO_HPP
