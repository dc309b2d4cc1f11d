#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ceinfuse/model.hpp"

// Checkpoint container "NTC1": a little-endian binary file that is fully
// self-describing (the architecture config rides in the header, so loading
// needs no side information).  Layout:
//
//   bytes 0..3   magic "NTC1"
//   bytes 4..7   u32 LE header length H
//   bytes 8..8+H UTF-8 header, one "key=value" per line; tensor directory
//                lines are "tensor=<name> f32 <rows>x<cols> <byte offset>"
//   rest         raw float32 LE tensor data, in directory order
//
// A plain-text sidecar "<path>.meta" with the same config keys is written
// next to the checkpoint for humans and shell scripts.

namespace ceinfuse {

struct CheckpointMeta {
    std::string vocab_path;
    std::map<std::string, std::string> extra;  // free-form provenance (e.g. k_copy)
};

namespace detail {

inline constexpr char kCkptMagic[4] = {'N', 'T', 'C', '1'};

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void append_f32_le(std::string& out, const float* src, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        out.append(reinterpret_cast<const char*>(src), count * sizeof(float));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits;
            std::memcpy(&bits, &src[i], sizeof(bits));
            put_u32_le(out, bits);
        }
    }
}

inline void read_f32_le(const unsigned char* src, float* dst, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(dst, src, count * sizeof(float));
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            std::uint32_t bits = get_u32_le(src + 4 * i);
            std::memcpy(&dst[i], &bits, sizeof(float));
        }
    }
}

// Shortest decimal form that round-trips a float/double exactly.
inline std::string fmt_float(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    for (int prec = 1; prec <= 16; ++prec) {
        char probe[64];
        std::snprintf(probe, sizeof(probe), "%.*g", prec, v);
        if (std::strtod(probe, nullptr) == v) return probe;
    }
    return buf;
}

inline std::string config_header_text(const ModelConfig& c, const CheckpointMeta& meta) {
    std::ostringstream h;
    h << "format=ntc\n";
    h << "version=1\n";
    h << "role=" << role_name(c.role) << "\n";
    h << "num_layers=" << c.num_layers << "\n";
    h << "hidden=" << c.hidden << "\n";
    h << "heads=" << c.heads << "\n";
    h << "ff=" << c.ff << "\n";
    h << "vocab_size=" << c.vocab_size << "\n";
    h << "max_positions=" << c.max_positions << "\n";
    h << "segment_types=" << c.segment_types << "\n";
    h << "layer_norm_eps=" << fmt_float(c.layer_norm_eps) << "\n";
    h << "init_std=" << fmt_float(c.init_std) << "\n";
    h << "pool_include_cls=" << (c.pool_include_cls ? 1 : 0) << "\n";
    h << "pool_both_segments=" << (c.pool_both_segments ? 1 : 0) << "\n";
    if (!meta.vocab_path.empty()) h << "vocab_path=" << meta.vocab_path << "\n";
    for (const auto& [k, v] : meta.extra) h << "x." << k << "=" << v << "\n";
    return h.str();
}

struct TensorDirEntry {
    std::string name;
    std::size_t rows = 0, cols = 0;
    std::size_t offset = 0;
};

[[noreturn]] inline void ckpt_fail(const std::string& path, const std::string& what) {
    throw std::runtime_error("checkpoint '" + path + "': " + what);
}

}  // namespace detail

inline void save_checkpoint(const EncoderWeights& w, const std::string& path,
                            const CheckpointMeta& meta = {}) {
    std::string header = detail::config_header_text(w.config, meta);
    std::string blob;
    std::size_t offset = 0;
    for_each_tensor(w, [&](const std::string& name, const Matrix& t) {
        header += "tensor=" + name + " f32 " + std::to_string(t.rows) + "x" +
                  std::to_string(t.cols) + " " + std::to_string(offset) + "\n";
        detail::append_f32_le(blob, t.data.data(), t.size());
        offset += t.size() * sizeof(float);
    });

    std::string out;
    out.append(detail::kCkptMagic, 4);
    detail::put_u32_le(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    out += blob;

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) detail::ckpt_fail(path, "cannot open for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) detail::ckpt_fail(path, "write failed");
    f.close();

    std::ofstream sidecar(path + ".meta", std::ios::trunc);
    if (sidecar) sidecar << detail::config_header_text(w.config, meta);
}

inline EncoderWeights load_checkpoint(const std::string& path, CheckpointMeta* meta_out = nullptr) {
    std::ifstream f(path, std::ios::binary);
    if (!f) detail::ckpt_fail(path, "cannot open");
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (raw.size() < 8 || std::memcmp(raw.data(), detail::kCkptMagic, 4) != 0)
        detail::ckpt_fail(path, "bad magic (not an NTC1 file)");
    const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
    std::size_t header_len = detail::get_u32_le(bytes + 4);
    if (8 + header_len > raw.size()) detail::ckpt_fail(path, "truncated header");

    std::map<std::string, std::string> kv;
    std::vector<detail::TensorDirEntry> dir;
    std::istringstream hs(raw.substr(8, header_len));
    std::string line;
    while (std::getline(hs, line)) {
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) detail::ckpt_fail(path, "malformed header line '" + line + "'");
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "tensor") {
            detail::TensorDirEntry e;
            char name[256];
            unsigned long long r = 0, c = 0, off = 0;
            if (std::sscanf(val.c_str(), "%255s f32 %llux%llu %llu", name, &r, &c, &off) != 4)
                detail::ckpt_fail(path, "malformed tensor directory line '" + line + "'");
            e.name = name;
            e.rows = r;
            e.cols = c;
            e.offset = off;
            dir.push_back(std::move(e));
        } else {
            kv[key] = val;
        }
    }

    auto need = [&](const char* key) -> const std::string& {
        auto it = kv.find(key);
        if (it == kv.end()) detail::ckpt_fail(path, std::string("missing header key '") + key + "'");
        return it->second;
    };

    ModelConfig cfg;
    cfg.role = role_from_name(need("role"));
    cfg.num_layers = std::stoull(need("num_layers"));
    cfg.hidden = std::stoull(need("hidden"));
    cfg.heads = std::stoull(need("heads"));
    cfg.ff = std::stoull(need("ff"));
    cfg.vocab_size = std::stoull(need("vocab_size"));
    cfg.max_positions = std::stoull(need("max_positions"));
    cfg.segment_types = std::stoull(need("segment_types"));
    cfg.layer_norm_eps = std::strtof(need("layer_norm_eps").c_str(), nullptr);
    cfg.init_std = std::strtof(need("init_std").c_str(), nullptr);
    cfg.pool_include_cls = need("pool_include_cls") != "0";
    cfg.pool_both_segments = need("pool_both_segments") != "0";
    cfg.validate();

    if (meta_out) {
        meta_out->vocab_path.clear();
        meta_out->extra.clear();
        if (auto it = kv.find("vocab_path"); it != kv.end()) meta_out->vocab_path = it->second;
        for (const auto& [k, v] : kv)
            if (k.rfind("x.", 0) == 0) meta_out->extra[k.substr(2)] = v;
    }

    EncoderWeights w;
    w.config = cfg;
    detail::shape_weights(w);
    const std::size_t blob_base = 8 + header_len;
    std::size_t dir_pos = 0;
    for_each_tensor(w, [&](const std::string& name, Matrix& t) {
        if (dir_pos >= dir.size()) detail::ckpt_fail(path, "tensor directory too short");
        const auto& e = dir[dir_pos++];
        if (e.name != name)
            detail::ckpt_fail(path, "tensor order mismatch: expected '" + name + "', found '" +
                                        e.name + "'");
        if (e.rows != t.rows || e.cols != t.cols)
            detail::ckpt_fail(path, "shape mismatch for '" + name + "': config implies " +
                                        std::to_string(t.rows) + "x" + std::to_string(t.cols) +
                                        ", directory says " + std::to_string(e.rows) + "x" +
                                        std::to_string(e.cols));
        std::size_t nbytes = t.size() * sizeof(float);
        if (blob_base + e.offset + nbytes > raw.size())
            detail::ckpt_fail(path, "truncated tensor data for '" + name + "'");
        detail::read_f32_le(bytes + blob_base + e.offset, t.data.data(), t.size());
    });
    if (dir_pos != dir.size()) detail::ckpt_fail(path, "tensor directory has extra entries");
    return w;
}

// ---------------------------------------------------------------------------
// Knowledge infusion: checkpoint surgery from a source encoder into a fresh
// truncated encoder.  The embedding tables (word/position/segment + embedding
// layer norm) and encoder layers 0..k_copy-1 are copied verbatim; remaining
// layers keep their freshly initialized random weights.  The result is a
// dual encoder (no scoring head) with the source's widths.

inline EncoderWeights infuse(const EncoderWeights& src, std::size_t de_num_layers,
                             std::size_t k_copy, std::uint64_t seed) {
    if (de_num_layers == 0) throw std::invalid_argument("infuse: de_num_layers must be >= 1");
    if (k_copy > de_num_layers)
        throw std::invalid_argument("infuse: k_copy " + std::to_string(k_copy) +
                                    " exceeds target depth " + std::to_string(de_num_layers));
    if (k_copy > static_cast<std::size_t>(src.config.num_layers))
        throw std::invalid_argument("infuse: k_copy " + std::to_string(k_copy) +
                                    " exceeds source depth " +
                                    std::to_string(src.config.num_layers));

    ModelConfig cfg = src.config;
    cfg.num_layers = de_num_layers;
    cfg.role = ModelRole::DualEncoder;
    EncoderWeights out = init_random_t<float>(cfg, seed);

    out.word_emb = src.word_emb;
    out.pos_emb = src.pos_emb;
    out.seg_emb = src.seg_emb;
    out.emb_gamma = src.emb_gamma;
    out.emb_beta = src.emb_beta;
    for (std::size_t i = 0; i < k_copy; ++i) out.layers[i] = src.layers[i];
    return out;
}

// Report from behavioural verification of an infusion: forward a set of probe
// sentences through both models and compare hidden states at indices
// 0..k_copy (index 0 is the embedding output).
struct InfusionReport {
    std::size_t k_copy = 0;
    std::vector<double> max_dev_per_index;  // size k_copy + 1
    double max_dev = 0.0;
    double tolerance = 0.0;
    int first_bad_index = -1;  // smallest hidden-state index over tolerance, or -1
    bool pass = false;
};

inline InfusionReport verify_infusion(const EncoderWeights& src, const EncoderWeights& dst,
                                      std::size_t k_copy,
                                      const std::vector<std::string>& probes, const Vocab& vocab,
                                      std::size_t max_len = 64, double tolerance = 1e-6) {
    if (k_copy > static_cast<std::size_t>(src.config.num_layers) ||
        k_copy > static_cast<std::size_t>(dst.config.num_layers))
        throw std::invalid_argument("verify_infusion: k_copy exceeds a model's depth");
    if (probes.empty()) throw std::invalid_argument("verify_infusion: no probe sentences");

    InfusionReport rep;
    rep.k_copy = k_copy;
    rep.tolerance = tolerance;
    rep.max_dev_per_index.assign(k_copy + 1, 0.0);
    for (const std::string& s : probes) {
        Encoding enc = encode_single(s, vocab, max_len);
        HiddenStates hs_src = forward(src, enc, /*capture=*/true);
        HiddenStates hs_dst = forward(dst, enc, /*capture=*/true);
        for (std::size_t li = 0; li <= k_copy; ++li) {
            double d = max_abs_diff(hs_src.layers[li], hs_dst.layers[li]);
            if (d > rep.max_dev_per_index[li]) rep.max_dev_per_index[li] = d;
        }
    }
    for (std::size_t li = 0; li <= k_copy; ++li) {
        if (rep.max_dev_per_index[li] > rep.max_dev) rep.max_dev = rep.max_dev_per_index[li];
        if (rep.first_bad_index < 0 && rep.max_dev_per_index[li] > tolerance)
            rep.first_bad_index = static_cast<int>(li);
    }
    rep.pass = rep.first_bad_index < 0;
    return rep;
}

}  // namespace ceinfuse
