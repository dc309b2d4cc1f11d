#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ceinfuse/model.hpp"
#include "ceinfuse/types.hpp"

namespace ceinfuse {

// ---------------------------------------------------------------------------
// multiple-negatives ranking loss
// ---------------------------------------------------------------------------

// Candidates are laid out positives-first: row i of `cand` is the positive for
// query row i, rows B.. are shared hard negatives. Scores are scale * cosine.
template <typename T>
struct MnrlResultT {
    double loss = 0.0;
    Mat<T> d_query;  // B x d
    Mat<T> d_cand;   // M x d
};

using MnrlResult = MnrlResultT<float>;

template <typename T>
MnrlResultT<T> mnrl_loss(const Mat<T>& query, const Mat<T>& cand, T scale) {
    const std::size_t B = query.rows, M = cand.rows, d = query.cols;
    if (B == 0 || M < B) {
        throw std::invalid_argument("mnrl_loss: need >= 1 query and candidates >= queries");
    }
    if (cand.cols != d) throw std::invalid_argument("mnrl_loss: embedding widths differ");
    if (scale <= T(0)) throw std::invalid_argument("mnrl_loss: scale must be positive");

    auto normalize_rows = [](const Mat<T>& m, std::vector<T>& norms, const char* side) {
        Mat<T> unit(m.rows, m.cols);
        norms.resize(m.rows);
        for (std::size_t i = 0; i < m.rows; ++i) {
            T sq = T(0);
            const T* src = m.row(i);
            for (std::size_t j = 0; j < m.cols; ++j) sq += src[j] * src[j];
            T n = std::sqrt(sq);
            if (!(n > T(0))) {
                throw std::runtime_error(std::string("mnrl_loss: zero-norm ") + side +
                                         " embedding at row " + std::to_string(i));
            }
            norms[i] = n;
            T* dst = unit.row(i);
            for (std::size_t j = 0; j < m.cols; ++j) dst[j] = src[j] / n;
        }
        return unit;
    };

    std::vector<T> qn, cn;
    Mat<T> u = normalize_rows(query, qn, "query");
    Mat<T> v = normalize_rows(cand, cn, "candidate");

    Mat<T> scores = matmul(u, transpose(v));
    scale_inplace(scores, scale);

    // loss_i = logsumexp(scores_i) - scores_ii, averaged over queries
    Mat<T> probs = softmax_rows(scores);
    double loss = 0.0;
    for (std::size_t i = 0; i < B; ++i) {
        const T* row = scores.row(i);
        T mx = row[0];
        for (std::size_t j = 1; j < M; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < M; ++j) sum += std::exp(static_cast<double>(row[j] - mx));
        loss += static_cast<double>(mx) + std::log(sum) - static_cast<double>(row[i]);
    }
    loss /= static_cast<double>(B);

    // d scores = (softmax - onehot(i)) / B, then back through scale, dot
    // products and row normalization.
    Mat<T> d_scores = probs;
    const T invB = T(1) / T(B);
    for (std::size_t i = 0; i < B; ++i) {
        T* row = d_scores.row(i);
        for (std::size_t j = 0; j < M; ++j) row[j] *= invB;
        row[i] -= invB;
    }
    scale_inplace(d_scores, scale);

    Mat<T> du = matmul(d_scores, v);             // B x d
    Mat<T> dv = matmul(transpose(d_scores), u);  // M x d

    MnrlResultT<T> out;
    out.loss = loss;
    out.d_query = Mat<T>(B, d);
    out.d_cand = Mat<T>(M, d);
    for (std::size_t i = 0; i < B; ++i) {
        const T* ui = u.row(i);
        const T* dui = du.row(i);
        T dot = T(0);
        for (std::size_t j = 0; j < d; ++j) dot += ui[j] * dui[j];
        T* dst = out.d_query.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] = (dui[j] - ui[j] * dot) / qn[i];
    }
    for (std::size_t i = 0; i < M; ++i) {
        const T* vi = v.row(i);
        const T* dvi = dv.row(i);
        T dot = T(0);
        for (std::size_t j = 0; j < d; ++j) dot += vi[j] * dvi[j];
        T* dst = out.d_cand.row(i);
        for (std::size_t j = 0; j < d; ++j) dst[j] = (dvi[j] - vi[j] * dot) / cn[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// binary cross-entropy on a cross-encoder logit
// ---------------------------------------------------------------------------

struct CePairLoss {
    double loss = 0.0;
    double dlogit = 0.0;
};

inline CePairLoss ce_pair_loss(double logit, int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("ce_pair_loss: label must be 0 or 1");
    double y = static_cast<double>(label);
    double loss = std::max(logit, 0.0) - logit * y + std::log1p(std::exp(-std::abs(logit)));
    double sig = logit >= 0.0 ? 1.0 / (1.0 + std::exp(-logit))
                              : std::exp(logit) / (1.0 + std::exp(logit));
    return {loss, sig - y};
}

// ---------------------------------------------------------------------------
// AdamW
// ---------------------------------------------------------------------------

struct AdamWParams {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; applied to weight matrices only
};

template <typename T>
struct OptimizerStateT {
    std::vector<Mat<T>> m, v;  // first/second moments, for_each_tensor order
    long step = 0;
};

using OptimizerState = OptimizerStateT<float>;

template <typename T>
OptimizerStateT<T> make_optimizer_state(const EncoderWeightsT<T>& w) {
    OptimizerStateT<T> st;
    for_each_tensor(w, [&](const std::string&, const Mat<T>& t) {
        st.m.emplace_back(t.rows, t.cols);
        st.v.emplace_back(t.rows, t.cols);
    });
    return st;
}

template <typename T>
void adamw_step(EncoderWeightsT<T>& w, const EncoderWeightsT<T>& grads, OptimizerStateT<T>& st,
                double lr, const AdamWParams& p = {}) {
    st.step += 1;
    const double bc1 = 1.0 - std::pow(p.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(p.beta2, static_cast<double>(st.step));
    std::size_t idx = 0;
    // Pair up weight and grad tensors by the shared iteration order.
    std::vector<const Mat<T>*> gtensors;
    std::vector<std::string> names;
    for_each_tensor(grads, [&](const std::string& name, const Mat<T>& g) {
        gtensors.push_back(&g);
        names.push_back(name);
    });
    for_each_tensor(w, [&](const std::string& name, Mat<T>& t) {
        if (idx >= gtensors.size() || names[idx] != name) {
            throw std::invalid_argument("adamw_step: weight/gradient structure mismatch");
        }
        const Mat<T>& g = *gtensors[idx];
        if (g.rows != t.rows || g.cols != t.cols) {
            throw std::invalid_argument("adamw_step: gradient shape mismatch for '" + name + "'");
        }
        Mat<T>& m = st.m[idx];
        Mat<T>& v = st.v[idx];
        const bool decay = detail::tensor_init_kind(name) == detail::InitKind::Normal;
        for (std::size_t i = 0; i < t.size(); ++i) {
            double gi = static_cast<double>(g.data[i]);
            if (!std::isfinite(gi)) {
                throw std::runtime_error("adamw_step: non-finite gradient in tensor '" + name +
                                         "' at element " + std::to_string(i));
            }
            double mi = p.beta1 * static_cast<double>(m.data[i]) + (1.0 - p.beta1) * gi;
            double vi = p.beta2 * static_cast<double>(v.data[i]) + (1.0 - p.beta2) * gi * gi;
            m.data[i] = T(mi);
            v.data[i] = T(vi);
            double update = (mi / bc1) / (std::sqrt(vi / bc2) + p.eps);
            if (decay) update += p.weight_decay * static_cast<double>(t.data[i]);
            t.data[i] = T(static_cast<double>(t.data[i]) - lr * update);
        }
        ++idx;
    });
}

// Linear warmup to `base` over `warmup` steps, then linear decay to zero at
// `total`. `step` is 0-based.
inline double lr_at_step(long step, long total, long warmup, double base) {
    if (total <= 0) throw std::invalid_argument("lr_at_step: total must be positive");
    if (warmup < 0 || warmup > total) throw std::invalid_argument("lr_at_step: bad warmup");
    if (step < 0 || step >= total) return 0.0;
    if (warmup > 0 && step < warmup) {
        return base * static_cast<double>(step + 1) / static_cast<double>(warmup);
    }
    if (total == warmup) return base;
    return base * static_cast<double>(total - step) / static_cast<double>(total - warmup);
}

// ---------------------------------------------------------------------------
// batch losses (shared by the train loop and the model-level gradient check)
// ---------------------------------------------------------------------------

namespace detail {

template <typename T>
struct EncodedText {
    Encoding enc;
    ForwardCache<T> cache;
    std::vector<T> pooled;  // final-layer mean embedding
};

template <typename T>
EncodedText<T> run_encoder(const EncoderWeightsT<T>& w, const Vocab& vocab,
                           const std::string& text, std::size_t max_len, bool want_cache) {
    EncodedText<T> out;
    out.enc = encode_single(text, vocab, max_len);
    HiddenStatesT<T> states =
        forward_t(w, out.enc, /*capture=*/false, want_cache ? &out.cache : nullptr);
    out.pooled = pool_mean(states.layers.back(), out.enc, pooling_policy(w.config));
    return out;
}

}  // namespace detail

// MNRL loss over one batch of (query, positive, negatives...) examples; when
// `grads` is given, backpropagates into it. Embeddings are final-layer means.
template <typename T>
double de_batch_loss_and_grads(const EncoderWeightsT<T>& w, const Vocab& vocab,
                               const std::vector<const TrainExample*>& batch, T scale,
                               std::size_t max_len, EncoderWeightsT<T>* grads) {
    if (batch.empty()) throw std::invalid_argument("de_batch_loss: empty batch");
    const bool want_cache = grads != nullptr;
    const std::size_t B = batch.size();
    const std::size_t d = static_cast<std::size_t>(w.config.hidden);

    std::vector<detail::EncodedText<T>> queries, cands;
    queries.reserve(B);
    for (const TrainExample* ex : batch) {
        queries.push_back(detail::run_encoder(w, vocab, ex->query, max_len, want_cache));
    }
    for (const TrainExample* ex : batch) {
        cands.push_back(detail::run_encoder(w, vocab, ex->positive, max_len, want_cache));
    }
    for (const TrainExample* ex : batch) {
        for (const std::string& neg : ex->negatives) {
            cands.push_back(detail::run_encoder(w, vocab, neg, max_len, want_cache));
        }
    }

    Mat<T> q(B, d), c(cands.size(), d);
    for (std::size_t i = 0; i < B; ++i) {
        std::copy(queries[i].pooled.begin(), queries[i].pooled.end(), q.row(i));
    }
    for (std::size_t i = 0; i < cands.size(); ++i) {
        std::copy(cands[i].pooled.begin(), cands[i].pooled.end(), c.row(i));
    }

    MnrlResultT<T> res = mnrl_loss(q, c, scale);
    if (grads) {
        PoolingPolicy policy = pooling_policy(w.config);
        auto backprop = [&](detail::EncodedText<T>& t, const Mat<T>& d_embs, std::size_t row) {
            std::vector<T> dvec(d_embs.row(row), d_embs.row(row) + d);
            Mat<T> d_hidden = pool_mean_backward(dvec, t.enc, policy, t.cache.active_len);
            backward_t(w, t.cache, d_hidden, *grads);
        };
        for (std::size_t i = 0; i < B; ++i) backprop(queries[i], res.d_query, i);
        for (std::size_t i = 0; i < cands.size(); ++i) backprop(cands[i], res.d_cand, i);
    }
    return res.loss;
}

// A (query, doc, label) reference into training data for the binary CE path.
struct CePairRef {
    const std::string* query = nullptr;
    const std::string* doc = nullptr;
    int label = 0;
};

// Mean binary cross-entropy of cross-encoder logits over a batch of labeled
// pairs; backpropagates through the scoring head and encoder when asked.
template <typename T>
double ce_batch_loss_and_grads(const EncoderWeightsT<T>& w, const Vocab& vocab,
                               const std::vector<CePairRef>& batch, std::size_t max_len,
                               EncoderWeightsT<T>* grads) {
    if (batch.empty()) throw std::invalid_argument("ce_batch_loss: empty batch");
    if (!w.has_ce_head()) {
        throw std::invalid_argument("ce_batch_loss: model has no cross-encoder head");
    }
    const double invB = 1.0 / static_cast<double>(batch.size());
    double loss = 0.0;
    for (const CePairRef& pair : batch) {
        Encoding enc = encode_pair(*pair.query, *pair.doc, vocab, max_len);
        ForwardCache<T> cache;
        HiddenStatesT<T> states =
            forward_t(w, enc, /*capture=*/false, grads ? &cache : nullptr);
        CeHeadCache<T> head_cache;
        T logit = ce_head_forward(w, states.layers.back(), grads ? &head_cache : nullptr);
        CePairLoss pl = ce_pair_loss(static_cast<double>(logit), pair.label);
        loss += pl.loss * invB;
        if (grads) {
            Mat<T> d_final = ce_head_backward(w, head_cache, T(pl.dlogit * invB),
                                              cache.active_len, *grads);
            backward_t(w, cache, d_final, *grads);
        }
    }
    return loss;
}

// ---------------------------------------------------------------------------
// train loop
// ---------------------------------------------------------------------------

enum class TrainRole { DualEncoderMnrl, CrossEncoderBinary };

struct TrainConfig {
    int batch = 8;
    int epochs = 2;
    double lr = 3e-4;
    double warmup_frac = 0.1;
    double weight_decay = 0.01;
    double scale = 20.0;  // MNRL cosine-logit scale
    std::size_t max_len = 64;
    std::uint64_t seed = 42;

    void validate() const {
        if (batch < 1) throw std::invalid_argument("TrainConfig: batch must be >= 1");
        if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
        if (lr < 0.0) throw std::invalid_argument("TrainConfig: lr must be >= 0");
        if (warmup_frac < 0.0 || warmup_frac > 1.0) {
            throw std::invalid_argument("TrainConfig: warmup_frac must be in [0, 1]");
        }
        if (weight_decay < 0.0) throw std::invalid_argument("TrainConfig: weight_decay >= 0");
        if (scale <= 0.0) throw std::invalid_argument("TrainConfig: scale must be positive");
        if (max_len < 3) throw std::invalid_argument("TrainConfig: max_len must be >= 3");
    }
};

struct LossPoint {
    long step = 0;  // 1-based global step
    double loss = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<LossPoint> curve;
    long steps = 0;
};

// Deterministic given (weights, data order, config). MNRL batches need at
// least two examples, so a trailing partial batch of one is dropped for the
// dual-encoder role.
template <typename T>
TrainResult train_t(EncoderWeightsT<T>& w, TrainRole role, const std::vector<TrainExample>& data,
                    const TrainConfig& cfg, const Vocab& vocab) {
    cfg.validate();
    if (data.empty()) throw std::invalid_argument("train: empty dataset");
    if (role == TrainRole::CrossEncoderBinary && !w.has_ce_head()) {
        throw std::invalid_argument("train: cross-encoder training needs a scoring head");
    }
    if (role == TrainRole::DualEncoderMnrl && w.has_ce_head()) {
        throw std::invalid_argument("train: MNRL training expects a dual encoder");
    }

    // Unit of shuffling/batching: a TrainExample for MNRL, a labeled pair for
    // the binary CE objective.
    std::vector<CePairRef> pairs;
    if (role == TrainRole::CrossEncoderBinary) {
        for (const TrainExample& ex : data) {
            pairs.push_back({&ex.query, &ex.positive, 1});
            for (const std::string& neg : ex.negatives) pairs.push_back({&ex.query, &neg, 0});
        }
    }
    const std::size_t units = role == TrainRole::DualEncoderMnrl ? data.size() : pairs.size();
    const std::size_t batch = static_cast<std::size_t>(cfg.batch);
    const std::size_t min_batch = role == TrainRole::DualEncoderMnrl ? 2 : 1;
    if (units < min_batch) {
        throw std::invalid_argument("train: dataset smaller than the minimum batch");
    }
    if (batch > units) {
        throw std::invalid_argument("train: batch size " + std::to_string(batch) +
                                    " exceeds dataset size " + std::to_string(units));
    }

    std::vector<std::size_t> batch_starts;
    for (std::size_t s = 0; s + min_batch <= units; s += batch) batch_starts.push_back(s);
    const long steps_per_epoch = static_cast<long>(batch_starts.size());
    const long total_steps = steps_per_epoch * cfg.epochs;
    const long warmup_steps =
        static_cast<long>(std::lround(cfg.warmup_frac * static_cast<double>(total_steps)));

    AdamWParams adamw;
    adamw.weight_decay = cfg.weight_decay;
    OptimizerStateT<T> opt = make_optimizer_state(w);
    EncoderWeightsT<T> grads = make_grads(w);
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(units);
    std::iota(order.begin(), order.end(), std::size_t{0});

    TrainResult result;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t s : batch_starts) {
            std::size_t e = std::min(s + batch, units);
            zero_tensors(grads);
            double loss = 0.0;
            if (role == TrainRole::DualEncoderMnrl) {
                std::vector<const TrainExample*> b;
                for (std::size_t i = s; i < e; ++i) b.push_back(&data[order[i]]);
                loss = de_batch_loss_and_grads(w, vocab, b, T(cfg.scale), cfg.max_len, &grads);
            } else {
                std::vector<CePairRef> b;
                for (std::size_t i = s; i < e; ++i) b.push_back(pairs[order[i]]);
                loss = ce_batch_loss_and_grads(w, vocab, b, cfg.max_len, &grads);
            }
            if (!std::isfinite(loss)) {
                throw std::runtime_error("train: non-finite loss at step " +
                                         std::to_string(step + 1));
            }
            double lr = lr_at_step(step, total_steps, warmup_steps, cfg.lr);
            adamw_step(w, grads, opt, lr, adamw);
            ++step;
            result.curve.push_back({step, loss, lr});
        }
    }
    result.steps = step;
    return result;
}

inline TrainResult train(EncoderWeights& w, TrainRole role, const std::vector<TrainExample>& data,
                         const TrainConfig& cfg, const Vocab& vocab) {
    return train_t<float>(w, role, data, cfg, vocab);
}

// ---------------------------------------------------------------------------
// model-level gradient check
// ---------------------------------------------------------------------------

struct TensorGradErr {
    std::string name;
    double max_rel_err = 0.0;
};

struct ModelGradCheckReport {
    double max_rel_err = 0.0;
    std::vector<TensorGradErr> per_tensor;
};

struct ModelGradCheckOptions {
    double fd_step = 1e-4;
    // Check at most this many components per tensor (0 = all), strided evenly.
    std::size_t max_components_per_tensor = 0;
    // Fault injection for harness-sensitivity tests: negate the analytic
    // gradient of this tensor before comparing, which must trip the check.
    std::string negate_grad_tensor;
};

// Compares analytic gradients of the full training loss (MNRL or binary CE,
// including tokenization, encoder, pooling/head) against central finite
// differences on a tiny double-precision model.
inline ModelGradCheckReport model_grad_check(TrainRole role, std::uint64_t seed,
                                             const ModelGradCheckOptions& opts = {}) {
    Vocab vocab = make_vocab({"alpha", "beta", "gamma", "delta", "epsilon", "zeta"});
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden = 8;
    cfg.heads = 2;
    cfg.ff = 16;
    cfg.vocab_size = static_cast<int>(vocab.size());
    cfg.max_positions = 8;
    cfg.role = role == TrainRole::CrossEncoderBinary ? ModelRole::CrossEncoder
                                                     : ModelRole::DualEncoder;
    const std::size_t max_len = 8;
    const double scale = 20.0;

    EncoderWeightsT<double> w = init_random_t<double>(cfg, seed);
    std::vector<TrainExample> data = {
        {"alpha beta gamma", "beta gamma", {"delta epsilon"}},
        {"gamma delta", "delta zeta epsilon", {"epsilon alpha"}},
    };
    std::vector<const TrainExample*> de_batch = {&data[0], &data[1]};
    std::vector<CePairRef> ce_batch;
    for (const TrainExample& ex : data) {
        ce_batch.push_back({&ex.query, &ex.positive, 1});
        ce_batch.push_back({&ex.query, &ex.negatives[0], 0});
    }

    auto loss_fn = [&]() {
        return role == TrainRole::DualEncoderMnrl
                   ? de_batch_loss_and_grads<double>(w, vocab, de_batch, scale, max_len, nullptr)
                   : ce_batch_loss_and_grads<double>(w, vocab, ce_batch, max_len, nullptr);
    };

    EncoderWeightsT<double> grads = make_grads(w);
    zero_tensors(grads);
    if (role == TrainRole::DualEncoderMnrl) {
        de_batch_loss_and_grads<double>(w, vocab, de_batch, scale, max_len, &grads);
    } else {
        ce_batch_loss_and_grads<double>(w, vocab, ce_batch, max_len, &grads);
    }
    if (!opts.negate_grad_tensor.empty()) {
        bool found = false;
        for_each_tensor(grads, [&](const std::string& name, Mat<double>& g) {
            if (name == opts.negate_grad_tensor) {
                scale_inplace(g, -1.0);
                found = true;
            }
        });
        if (!found) {
            throw std::invalid_argument("model_grad_check: unknown tensor '" +
                                        opts.negate_grad_tensor + "'");
        }
    }

    std::vector<Mat<double>*> gtensors;
    std::vector<std::string> names;
    for_each_tensor(grads, [&](const std::string& name, Mat<double>& g) {
        gtensors.push_back(&g);
        names.push_back(name);
    });

    ModelGradCheckReport report;
    const double h = opts.fd_step;
    std::size_t idx = 0;
    for_each_tensor(w, [&](const std::string&, Mat<double>& t) {
        const Mat<double>& g = *gtensors[idx];
        double tensor_err = 0.0;
        std::size_t stride = 1;
        if (opts.max_components_per_tensor > 0 && t.size() > opts.max_components_per_tensor) {
            stride = t.size() / opts.max_components_per_tensor;
        }
        for (std::size_t i = 0; i < t.size(); i += stride) {
            double saved = t.data[i];
            t.data[i] = saved + h;
            double up = loss_fn();
            t.data[i] = saved - h;
            double down = loss_fn();
            t.data[i] = saved;
            double numeric = (up - down) / (2.0 * h);
            double analytic = g.data[i];
            double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
            tensor_err = std::max(tensor_err, std::abs(analytic - numeric) / denom);
        }
        report.per_tensor.push_back({names[idx], tensor_err});
        report.max_rel_err = std::max(report.max_rel_err, tensor_err);
        ++idx;
    });
    return report;
}

}  // namespace ceinfuse
