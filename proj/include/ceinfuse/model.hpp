#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ceinfuse/kernels.hpp"
#include "ceinfuse/matrix.hpp"
#include "ceinfuse/tokenizer.hpp"

namespace ceinfuse {

enum class ModelRole { DualEncoder, CrossEncoder };

inline const char* role_name(ModelRole role) {
    return role == ModelRole::CrossEncoder ? "ce" : "de";
}

inline ModelRole role_from_name(const std::string& name) {
    if (name == "ce") return ModelRole::CrossEncoder;
    if (name == "de") return ModelRole::DualEncoder;
    throw std::invalid_argument("unknown model role '" + name + "'");
}

struct ModelConfig {
    int num_layers = 2;
    int hidden = 64;
    int heads = 4;
    int ff = 256;
    int vocab_size = 0;
    int max_positions = 64;
    int segment_types = 2;
    float layer_norm_eps = 1e-12f;
    float init_std = 0.02f;
    ModelRole role = ModelRole::DualEncoder;
    // Pooling policy. The mean covers [CLS] by default and, for self-paired
    // input, both copies of the sentence; both are configurable.
    bool pool_include_cls = true;
    bool pool_both_segments = true;

    int head_dim() const { return hidden / heads; }

    void validate() const {
        if (num_layers < 1) throw std::invalid_argument("ModelConfig: num_layers must be >= 1");
        if (hidden <= 0 || heads <= 0 || hidden % heads != 0) {
            throw std::invalid_argument("ModelConfig: hidden must be a positive multiple of heads");
        }
        if (ff <= 0) throw std::invalid_argument("ModelConfig: ff must be positive");
        if (vocab_size <= 0) throw std::invalid_argument("ModelConfig: vocab_size must be positive");
        if (max_positions < 2) throw std::invalid_argument("ModelConfig: max_positions must be >= 2");
        if (segment_types != 2) throw std::invalid_argument("ModelConfig: segment_types must be 2");
    }
};

template <typename T>
struct LayerWeightsT {
    Mat<T> wq, bq, wk, bk, wv, bv, wo, bo;  // projections d x d, biases 1 x d
    Mat<T> attn_gamma, attn_beta;           // 1 x d
    Mat<T> w1, b1;                          // d x ff, 1 x ff
    Mat<T> w2, b2;                          // ff x d, 1 x d
    Mat<T> ffn_gamma, ffn_beta;             // 1 x d
};

template <typename T>
struct EncoderWeightsT {
    ModelConfig config;
    Mat<T> word_emb;  // V x d
    Mat<T> pos_emb;   // P x d
    Mat<T> seg_emb;   // 2 x d
    Mat<T> emb_gamma, emb_beta;
    std::vector<LayerWeightsT<T>> layers;
    // Cross-encoder scoring head, present iff role == CrossEncoder.
    Mat<T> pooler_w, pooler_b;  // d x d, 1 x d
    Mat<T> cls_w, cls_b;        // 1 x d, 1 x 1

    bool has_ce_head() const { return config.role == ModelRole::CrossEncoder; }
};

using EncoderWeights = EncoderWeightsT<float>;

// Visits every tensor in a fixed order shared by init, checkpointing, the
// optimizer and gradient checks.
template <typename Weights, typename F>
void for_each_tensor(Weights& w, F&& f) {
    f("emb.word", w.word_emb);
    f("emb.pos", w.pos_emb);
    f("emb.seg", w.seg_emb);
    f("emb.ln.gamma", w.emb_gamma);
    f("emb.ln.beta", w.emb_beta);
    for (std::size_t i = 0; i < w.layers.size(); ++i) {
        auto& layer = w.layers[i];
        const std::string p = "layer." + std::to_string(i) + ".";
        f(p + "attn.wq", layer.wq);
        f(p + "attn.bq", layer.bq);
        f(p + "attn.wk", layer.wk);
        f(p + "attn.bk", layer.bk);
        f(p + "attn.wv", layer.wv);
        f(p + "attn.bv", layer.bv);
        f(p + "attn.wo", layer.wo);
        f(p + "attn.bo", layer.bo);
        f(p + "attn.ln.gamma", layer.attn_gamma);
        f(p + "attn.ln.beta", layer.attn_beta);
        f(p + "ffn.w1", layer.w1);
        f(p + "ffn.b1", layer.b1);
        f(p + "ffn.w2", layer.w2);
        f(p + "ffn.b2", layer.b2);
        f(p + "ffn.ln.gamma", layer.ffn_gamma);
        f(p + "ffn.ln.beta", layer.ffn_beta);
    }
    if (w.has_ce_head()) {
        f("head.pooler.w", w.pooler_w);
        f("head.pooler.b", w.pooler_b);
        f("head.cls.w", w.cls_w);
        f("head.cls.b", w.cls_b);
    }
}

namespace detail {

enum class InitKind { Normal, Zero, One };

inline InitKind tensor_init_kind(const std::string& name) {
    auto pos = name.rfind('.');
    std::string last = pos == std::string::npos ? name : name.substr(pos + 1);
    if (last == "gamma") return InitKind::One;
    if (last == "beta") return InitKind::Zero;
    if (!last.empty() && last[0] == 'b') return InitKind::Zero;
    return InitKind::Normal;
}

template <typename T>
void shape_weights(EncoderWeightsT<T>& w) {
    const ModelConfig& c = w.config;
    const std::size_t d = static_cast<std::size_t>(c.hidden);
    const std::size_t ff = static_cast<std::size_t>(c.ff);
    w.word_emb = Mat<T>(static_cast<std::size_t>(c.vocab_size), d);
    w.pos_emb = Mat<T>(static_cast<std::size_t>(c.max_positions), d);
    w.seg_emb = Mat<T>(2, d);
    w.emb_gamma = Mat<T>(1, d);
    w.emb_beta = Mat<T>(1, d);
    w.layers.assign(static_cast<std::size_t>(c.num_layers), LayerWeightsT<T>{});
    for (auto& layer : w.layers) {
        layer.wq = Mat<T>(d, d);
        layer.bq = Mat<T>(1, d);
        layer.wk = Mat<T>(d, d);
        layer.bk = Mat<T>(1, d);
        layer.wv = Mat<T>(d, d);
        layer.bv = Mat<T>(1, d);
        layer.wo = Mat<T>(d, d);
        layer.bo = Mat<T>(1, d);
        layer.attn_gamma = Mat<T>(1, d);
        layer.attn_beta = Mat<T>(1, d);
        layer.w1 = Mat<T>(d, ff);
        layer.b1 = Mat<T>(1, ff);
        layer.w2 = Mat<T>(ff, d);
        layer.b2 = Mat<T>(1, d);
        layer.ffn_gamma = Mat<T>(1, d);
        layer.ffn_beta = Mat<T>(1, d);
    }
    if (w.has_ce_head()) {
        w.pooler_w = Mat<T>(d, d);
        w.pooler_b = Mat<T>(1, d);
        w.cls_w = Mat<T>(1, d);
        w.cls_b = Mat<T>(1, 1);
    }
}

}  // namespace detail

// Truncated normal(0, init_std) clipped at +/-2 sigma for weight matrices,
// zeros for biases, (1, 0) for layer norms. Deterministic given seed.
template <typename T>
EncoderWeightsT<T> init_random_t(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    EncoderWeightsT<T> w;
    w.config = config;
    detail::shape_weights(w);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, static_cast<double>(config.init_std));
    const double clip = 2.0 * static_cast<double>(config.init_std);
    for_each_tensor(w, [&](const std::string& name, Mat<T>& m) {
        switch (detail::tensor_init_kind(name)) {
            case detail::InitKind::One:
                m.fill(T(1));
                break;
            case detail::InitKind::Zero:
                m.fill(T(0));
                break;
            case detail::InitKind::Normal:
                for (auto& v : m.data) {
                    double x = dist(rng);
                    while (std::abs(x) > clip) x = dist(rng);
                    v = T(x);
                }
                break;
        }
    });
    return w;
}

inline EncoderWeights init_random(const ModelConfig& config, std::uint64_t seed) {
    return init_random_t<float>(config, seed);
}

template <typename T>
EncoderWeightsT<T> make_grads(const EncoderWeightsT<T>& w) {
    EncoderWeightsT<T> g;
    g.config = w.config;
    detail::shape_weights(g);
    return g;
}

template <typename T>
void zero_tensors(EncoderWeightsT<T>& w) {
    for_each_tensor(w, [](const std::string&, Mat<T>& m) { m.fill(T(0)); });
}

// Per-layer token matrices captured during a forward pass: index 0 is the
// embedding-layer output (post layer norm), index i the output of encoder
// layer i-1. PAD rows are zero-filled and ignored by pooling.
template <typename T>
struct HiddenStatesT {
    std::vector<Mat<T>> layers;
};

using HiddenStates = HiddenStatesT<float>;

template <typename T>
struct LayerCache {
    Mat<T> input;
    Mat<T> q, k, v;
    std::vector<AttentionCache<T>> heads;
    Mat<T> attn_concat;
    Mat<T> resid1;
    Mat<T> ln1_out;
    Mat<T> ffn_pre;
    Mat<T> ffn_act;
    Mat<T> resid2;
};

template <typename T>
struct ForwardCache {
    Encoding encoding;
    std::size_t active_len = 0;
    Mat<T> emb_sum;  // pre layer-norm embedding sum
    Mat<T> emb_out;  // hidden index 0
    std::vector<LayerCache<T>> layers;
    Mat<T> final_out;
};

namespace detail {

// y = x.w + b (b broadcast over rows)
template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
    Mat<T> y = matmul(x, w);
    for (std::size_t i = 0; i < y.rows; ++i) {
        T* yr = y.row(i);
        for (std::size_t j = 0; j < y.cols; ++j) yr[j] += b.data[j];
    }
    return y;
}

template <typename T>
void linear_backward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dy, Mat<T>& dx, Mat<T>& dw,
                     Mat<T>& db) {
    matmul_backward(x, w, dy, dx, dw);
    for (std::size_t i = 0; i < dy.rows; ++i) {
        const T* dyr = dy.row(i);
        for (std::size_t j = 0; j < dy.cols; ++j) db.data[j] += dyr[j];
    }
}

template <typename T>
Mat<T> slice_cols(const Mat<T>& m, std::size_t c0, std::size_t width) {
    Mat<T> out(m.rows, width);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const T* src = m.row(i) + c0;
        T* dst = out.row(i);
        for (std::size_t j = 0; j < width; ++j) dst[j] = src[j];
    }
    return out;
}

template <typename T>
void add_cols(Mat<T>& m, const Mat<T>& part, std::size_t c0) {
    for (std::size_t i = 0; i < m.rows; ++i) {
        T* dst = m.row(i) + c0;
        const T* src = part.row(i);
        for (std::size_t j = 0; j < part.cols; ++j) dst[j] += src[j];
    }
}

template <typename T>
std::size_t checked_active_len(const EncoderWeightsT<T>& w, const Encoding& enc) {
    if (enc.length() > static_cast<std::size_t>(w.config.max_positions)) {
        throw std::invalid_argument("forward: encoding length " + std::to_string(enc.length()) +
                                    " exceeds max_positions " +
                                    std::to_string(w.config.max_positions));
    }
    std::size_t active = enc.num_real_tokens();
    for (std::size_t i = 0; i < active; ++i) {
        if (enc.attention_mask[i] != 1) {
            throw std::invalid_argument("forward: attention_mask must be a prefix of 1s");
        }
        if (enc.ids[i] < 0 || enc.ids[i] >= w.config.vocab_size) {
            throw std::invalid_argument("forward: token id " + std::to_string(enc.ids[i]) +
                                        " out of vocab range");
        }
    }
    if (active == 0) throw std::invalid_argument("forward: encoding has no real tokens");
    return active;
}

// Pads a computed active-rows matrix back out to the encoding length.
template <typename T>
Mat<T> pad_rows(const Mat<T>& m, std::size_t total_rows) {
    Mat<T> out(total_rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i) {
        const T* src = m.row(i);
        T* dst = out.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) dst[j] = src[j];
    }
    return out;
}

}  // namespace detail

// Runs the encoder stack over the attention_mask=1 prefix of the encoding.
// PAD positions carry no attention weight for real tokens, so computing the
// prefix alone is exact; captured matrices are padded back to encoding length
// with zero rows. capture=false returns only the final layer (list length 1).
template <typename T>
HiddenStatesT<T> forward_t(const EncoderWeightsT<T>& w, const Encoding& enc, bool capture,
                           ForwardCache<T>* cache = nullptr) {
    const std::size_t active = detail::checked_active_len(w, enc);
    const std::size_t d = static_cast<std::size_t>(w.config.hidden);
    const std::size_t heads = static_cast<std::size_t>(w.config.heads);
    const std::size_t dh = static_cast<std::size_t>(w.config.head_dim());
    const T eps = T(w.config.layer_norm_eps);

    Mat<T> emb_sum(active, d);
    for (std::size_t i = 0; i < active; ++i) {
        const T* we = w.word_emb.row(static_cast<std::size_t>(enc.ids[i]));
        const T* pe = w.pos_emb.row(i);
        const T* se = w.seg_emb.row(static_cast<std::size_t>(enc.segment_ids[i]));
        T* dst = emb_sum.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] = we[j] + pe[j] + se[j];
    }
    Mat<T> x = layer_norm(emb_sum, w.emb_gamma, w.emb_beta, eps);

    HiddenStatesT<T> states;
    if (capture) states.layers.push_back(detail::pad_rows(x, enc.length()));
    if (cache) {
        cache->encoding = enc;
        cache->active_len = active;
        cache->emb_sum = emb_sum;
        cache->emb_out = x;
        cache->layers.clear();
        cache->layers.resize(w.layers.size());
    }

    const Mat<T> no_mask;  // the active prefix has no padded keys
    for (std::size_t li = 0; li < w.layers.size(); ++li) {
        const LayerWeightsT<T>& lw = w.layers[li];
        LayerCache<T>* lc = cache ? &cache->layers[li] : nullptr;

        Mat<T> q = detail::linear(x, lw.wq, lw.bq);
        Mat<T> k = detail::linear(x, lw.wk, lw.bk);
        Mat<T> v = detail::linear(x, lw.wv, lw.bv);

        Mat<T> concat(active, d);
        std::vector<AttentionCache<T>> head_caches(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Mat<T> qh = detail::slice_cols(q, h * dh, dh);
            Mat<T> kh = detail::slice_cols(k, h * dh, dh);
            Mat<T> vh = detail::slice_cols(v, h * dh, dh);
            Mat<T> oh = attention_forward(qh, kh, vh, no_mask, lc ? &head_caches[h] : nullptr);
            for (std::size_t i = 0; i < active; ++i) {
                T* dst = concat.row(i) + h * dh;
                const T* src = oh.row(i);
                for (std::size_t j = 0; j < dh; ++j) dst[j] = src[j];
            }
        }
        Mat<T> attn_out = detail::linear(concat, lw.wo, lw.bo);

        Mat<T> resid1(active, d);
        for (std::size_t i2 = 0; i2 < resid1.size(); ++i2) {
            resid1.data[i2] = x.data[i2] + attn_out.data[i2];
        }
        Mat<T> ln1 = layer_norm(resid1, lw.attn_gamma, lw.attn_beta, eps);

        Mat<T> ffn_pre = detail::linear(ln1, lw.w1, lw.b1);
        Mat<T> ffn_act = gelu(ffn_pre);
        Mat<T> ffn_out = detail::linear(ffn_act, lw.w2, lw.b2);

        Mat<T> resid2(active, d);
        for (std::size_t i2 = 0; i2 < resid2.size(); ++i2) {
            resid2.data[i2] = ln1.data[i2] + ffn_out.data[i2];
        }
        Mat<T> out = layer_norm(resid2, lw.ffn_gamma, lw.ffn_beta, eps);

        if (lc) {
            lc->input = std::move(x);
            lc->q = std::move(q);
            lc->k = std::move(k);
            lc->v = std::move(v);
            lc->heads = std::move(head_caches);
            lc->attn_concat = std::move(concat);
            lc->resid1 = std::move(resid1);
            lc->ln1_out = std::move(ln1);
            lc->ffn_pre = std::move(ffn_pre);
            lc->ffn_act = std::move(ffn_act);
            lc->resid2 = std::move(resid2);
        }
        if (capture) states.layers.push_back(detail::pad_rows(out, enc.length()));
        x = std::move(out);
    }

    if (!capture) states.layers.push_back(detail::pad_rows(x, enc.length()));
    if (cache) cache->final_out = std::move(x);
    return states;
}

inline HiddenStates forward(const EncoderWeights& w, const Encoding& enc, bool capture) {
    return forward_t<float>(w, enc, capture);
}

// Backward through the encoder stack. d_final has active_len rows and holds
// the loss gradient at the final layer-norm output; gradients accumulate into
// `grads` (same structure as the weights).
template <typename T>
void backward_t(const EncoderWeightsT<T>& w, const ForwardCache<T>& cache, const Mat<T>& d_final,
                EncoderWeightsT<T>& grads) {
    const std::size_t active = cache.active_len;
    const std::size_t d = static_cast<std::size_t>(w.config.hidden);
    const std::size_t heads = static_cast<std::size_t>(w.config.heads);
    const std::size_t dh = static_cast<std::size_t>(w.config.head_dim());
    const T eps = T(w.config.layer_norm_eps);
    if (d_final.rows != active || d_final.cols != d) {
        throw std::invalid_argument("backward: d_final shape mismatch");
    }

    Mat<T> dx = d_final;
    for (std::size_t li = w.layers.size(); li-- > 0;) {
        const LayerWeightsT<T>& lw = w.layers[li];
        const LayerCache<T>& lc = cache.layers[li];
        LayerWeightsT<T>& lg = grads.layers[li];

        // output = LN(resid2)
        Mat<T> d_resid2(active, d);
        layer_norm_backward(lc.resid2, lw.ffn_gamma, eps, dx, d_resid2, lg.ffn_gamma, lg.ffn_beta);

        // resid2 = ln1_out + ffn_out
        Mat<T> d_ln1 = d_resid2;
        Mat<T> d_ffn_act(active, static_cast<std::size_t>(w.config.ff));
        detail::linear_backward(lc.ffn_act, lw.w2, d_resid2, d_ffn_act, lg.w2, lg.b2);
        Mat<T> d_ffn_pre = gelu_backward(lc.ffn_pre, d_ffn_act);
        detail::linear_backward(lc.ln1_out, lw.w1, d_ffn_pre, d_ln1, lg.w1, lg.b1);

        // ln1_out = LN(resid1)
        Mat<T> d_resid1(active, d);
        layer_norm_backward(lc.resid1, lw.attn_gamma, eps, d_ln1, d_resid1, lg.attn_gamma,
                            lg.attn_beta);

        // resid1 = input + attn_out
        Mat<T> d_input = d_resid1;
        Mat<T> d_concat(active, d);
        detail::linear_backward(lc.attn_concat, lw.wo, d_resid1, d_concat, lg.wo, lg.bo);

        Mat<T> dq(active, d), dk(active, d), dv(active, d);
        for (std::size_t h = 0; h < heads; ++h) {
            Mat<T> qh = detail::slice_cols(lc.q, h * dh, dh);
            Mat<T> kh = detail::slice_cols(lc.k, h * dh, dh);
            Mat<T> vh = detail::slice_cols(lc.v, h * dh, dh);
            Mat<T> doh = detail::slice_cols(d_concat, h * dh, dh);
            Mat<T> dqh(active, dh), dkh(active, dh), dvh(active, dh);
            attention_backward(qh, kh, vh, lc.heads[h], doh, dqh, dkh, dvh);
            detail::add_cols(dq, dqh, h * dh);
            detail::add_cols(dk, dkh, h * dh);
            detail::add_cols(dv, dvh, h * dh);
        }
        detail::linear_backward(lc.input, lw.wq, dq, d_input, lg.wq, lg.bq);
        detail::linear_backward(lc.input, lw.wk, dk, d_input, lg.wk, lg.bk);
        detail::linear_backward(lc.input, lw.wv, dv, d_input, lg.wv, lg.bv);

        dx = std::move(d_input);
    }

    // embedding layer norm, then scatter into the three embedding tables
    Mat<T> d_emb_sum(active, d);
    layer_norm_backward(cache.emb_sum, w.emb_gamma, eps, dx, d_emb_sum, grads.emb_gamma,
                        grads.emb_beta);
    const Encoding& enc = cache.encoding;
    for (std::size_t i = 0; i < active; ++i) {
        const T* src = d_emb_sum.row(i);
        T* dw = grads.word_emb.row(static_cast<std::size_t>(enc.ids[i]));
        T* dp = grads.pos_emb.row(i);
        T* ds = grads.seg_emb.row(static_cast<std::size_t>(enc.segment_ids[i]));
        for (std::size_t j = 0; j < d; ++j) {
            dw[j] += src[j];
            dp[j] += src[j];
            ds[j] += src[j];
        }
    }
}

// ---------------------------------------------------------------------------
// pooling
// ---------------------------------------------------------------------------

struct PoolingPolicy {
    bool include_cls = true;
    bool both_segments = true;
};

inline PoolingPolicy pooling_policy(const ModelConfig& c) {
    return {c.pool_include_cls, c.pool_both_segments};
}

namespace detail {

// Pooled positions: real tokens (attention_mask=1, special_mask=0), filtered
// to segment 0 unless both_segments, plus the leading [CLS] when the policy
// includes it. At least one real token is required; a specials-only encoding
// is an empty-input error.
inline std::vector<std::size_t> pooled_positions(const Encoding& enc, const PoolingPolicy& policy) {
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < enc.length(); ++i) {
        if (enc.attention_mask[i] != 1 || enc.special_mask[i] != 0) continue;
        if (!policy.both_segments && enc.segment_ids[i] != 0) continue;
        pos.push_back(i);
    }
    if (pos.empty()) {
        throw std::invalid_argument("pool_mean: no eligible tokens to pool");
    }
    if (policy.include_cls && enc.attention_mask[0] == 1 && enc.special_mask[0] == 1) {
        pos.insert(pos.begin(), 0);
    }
    return pos;
}

}  // namespace detail

template <typename T>
std::vector<T> pool_mean(const Mat<T>& hidden, const Encoding& enc,
                         const PoolingPolicy& policy = {}) {
    if (hidden.rows != enc.length()) {
        throw std::invalid_argument("pool_mean: hidden rows must equal encoding length");
    }
    std::vector<std::size_t> pos = detail::pooled_positions(enc, policy);
    std::vector<T> out(hidden.cols, T(0));
    for (std::size_t p : pos) {
        const T* row = hidden.row(p);
        for (std::size_t j = 0; j < hidden.cols; ++j) out[j] += row[j];
    }
    const T inv = T(1) / T(pos.size());
    for (auto& v : out) v *= inv;
    return out;
}

// Scatters a pooled-embedding gradient back onto the hidden rows it averaged.
template <typename T>
Mat<T> pool_mean_backward(const std::vector<T>& d_pooled, const Encoding& enc,
                          const PoolingPolicy& policy, std::size_t active_len) {
    std::vector<std::size_t> pos = detail::pooled_positions(enc, policy);
    Mat<T> d_hidden(active_len, d_pooled.size());
    const T inv = T(1) / T(pos.size());
    for (std::size_t p : pos) {
        T* row = d_hidden.row(p);
        for (std::size_t j = 0; j < d_pooled.size(); ++j) row[j] += d_pooled[j] * inv;
    }
    return d_hidden;
}

// ---------------------------------------------------------------------------
// sentence embeddings
// ---------------------------------------------------------------------------

template <typename T>
void check_layer_index(const EncoderWeightsT<T>& w, int layer) {
    if (layer < 0 || layer > w.config.num_layers) {
        throw std::invalid_argument("layer index " + std::to_string(layer) +
                                    " out of range [0, " + std::to_string(w.config.num_layers) +
                                    "]");
    }
}

// One capture pass, pooled at every layer: row i of the result is the layer-i
// sentence embedding. DE mode encodes the sentence alone, CE mode self-pairs.
template <typename T>
std::vector<std::vector<T>> embed_all_layers(const EncoderWeightsT<T>& w, const Vocab& vocab,
                                             const std::string& text, ModelRole mode,
                                             std::size_t max_len) {
    Encoding enc = mode == ModelRole::CrossEncoder ? encode_pair(text, text, vocab, max_len, true)
                                                   : encode_single(text, vocab, max_len);
    HiddenStatesT<T> states = forward_t(w, enc, /*capture=*/true);
    std::vector<std::vector<T>> out;
    out.reserve(states.layers.size());
    for (const auto& hidden : states.layers) {
        out.push_back(pool_mean(hidden, enc, pooling_policy(w.config)));
    }
    return out;
}

template <typename T>
std::vector<T> embed_sentence_de(const EncoderWeightsT<T>& w, const Vocab& vocab,
                                 const std::string& text, int layer, std::size_t max_len) {
    check_layer_index(w, layer);
    Encoding enc = encode_single(text, vocab, max_len);
    HiddenStatesT<T> states = forward_t(w, enc, /*capture=*/true);
    return pool_mean(states.layers[static_cast<std::size_t>(layer)], enc,
                     pooling_policy(w.config));
}

// Self-pairing: a single sentence is embedded by feeding the pair (s, s).
template <typename T>
std::vector<T> embed_sentence_ce(const EncoderWeightsT<T>& w, const Vocab& vocab,
                                 const std::string& text, int layer, std::size_t max_len) {
    check_layer_index(w, layer);
    Encoding enc = encode_pair(text, text, vocab, max_len, /*self_pair=*/true);
    HiddenStatesT<T> states = forward_t(w, enc, /*capture=*/true);
    return pool_mean(states.layers[static_cast<std::size_t>(layer)], enc,
                     pooling_policy(w.config));
}

// ---------------------------------------------------------------------------
// cross-encoder scoring head
// ---------------------------------------------------------------------------

template <typename T>
struct CeHeadCache {
    Mat<T> h_cls;      // 1 x d, final-layer row 0
    Mat<T> tanh_out;   // 1 x d
};

template <typename T>
T ce_head_forward(const EncoderWeightsT<T>& w, const Mat<T>& final_hidden,
                  CeHeadCache<T>* cache = nullptr) {
    if (!w.has_ce_head()) throw std::invalid_argument("ce_score: model has no cross-encoder head");
    const std::size_t d = static_cast<std::size_t>(w.config.hidden);
    Mat<T> h_cls(1, d);
    for (std::size_t j = 0; j < d; ++j) h_cls(0, j) = final_hidden(0, j);
    Mat<T> pre = detail::linear(h_cls, w.pooler_w, w.pooler_b);
    for (auto& v : pre.data) v = std::tanh(v);
    T logit = w.cls_b(0, 0);
    for (std::size_t j = 0; j < d; ++j) logit += pre(0, j) * w.cls_w(0, j);
    if (cache) {
        cache->h_cls = std::move(h_cls);
        cache->tanh_out = std::move(pre);
    }
    return logit;
}

// Returns the gradient at the final hidden matrix (active rows, only row 0
// non-zero) and accumulates head gradients.
template <typename T>
Mat<T> ce_head_backward(const EncoderWeightsT<T>& w, const CeHeadCache<T>& cache, T dlogit,
                        std::size_t active_len, EncoderWeightsT<T>& grads) {
    const std::size_t d = static_cast<std::size_t>(w.config.hidden);
    Mat<T> d_tanh(1, d);
    for (std::size_t j = 0; j < d; ++j) {
        grads.cls_w(0, j) += dlogit * cache.tanh_out(0, j);
        d_tanh(0, j) = dlogit * w.cls_w(0, j);
    }
    grads.cls_b(0, 0) += dlogit;
    Mat<T> d_pre(1, d);
    for (std::size_t j = 0; j < d; ++j) {
        T t = cache.tanh_out(0, j);
        d_pre(0, j) = d_tanh(0, j) * (T(1) - t * t);
    }
    Mat<T> d_h_cls(1, d);
    detail::linear_backward(cache.h_cls, w.pooler_w, d_pre, d_h_cls, grads.pooler_w,
                            grads.pooler_b);
    Mat<T> d_final(active_len, d);
    for (std::size_t j = 0; j < d; ++j) d_final(0, j) = d_h_cls(0, j);
    return d_final;
}

template <typename T>
T ce_score_t(const EncoderWeightsT<T>& w, const Vocab& vocab, const std::string& query,
             const std::string& doc, std::size_t max_len) {
    if (!w.has_ce_head()) throw std::invalid_argument("ce_score: model has no cross-encoder head");
    Encoding enc = encode_pair(query, doc, vocab, max_len);
    HiddenStatesT<T> states = forward_t(w, enc, /*capture=*/false);
    return ce_head_forward(w, states.layers.back());
}

inline float ce_score(const EncoderWeights& w, const Vocab& vocab, const std::string& query,
                      const std::string& doc, std::size_t max_len) {
    return ce_score_t<float>(w, vocab, query, doc, max_len);
}

}  // namespace ceinfuse
