#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ceinfuse/matrix.hpp"

namespace ceinfuse {

inline constexpr double kAttentionMaskValue = -1e9;

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> matmul(const Mat<T>& a, const Mat<T>& b) {
    if (a.cols != b.rows) {
        throw std::invalid_argument("matmul: inner dimensions differ (" + std::to_string(a.cols) +
                                    " vs " + std::to_string(b.rows) + ")");
    }
    Mat<T> c(a.rows, b.cols);
    // i-k-j order keeps both inner accesses contiguous.
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* arow = a.row(i);
        T* crow = c.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            T aik = arow[k];
            if (aik == T(0)) continue;
            const T* brow = b.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) crow[j] += aik * brow[j];
        }
    }
    return c;
}

// dA += dC.B^T, dB += A^T.dC
template <typename T>
void matmul_backward(const Mat<T>& a, const Mat<T>& b, const Mat<T>& dc, Mat<T>& da, Mat<T>& db) {
    if (dc.rows != a.rows || dc.cols != b.cols) throw std::invalid_argument("matmul_backward: dC shape");
    if (!da.same_shape(a) || !db.same_shape(b)) throw std::invalid_argument("matmul_backward: grad shape");
    for (std::size_t i = 0; i < a.rows; ++i) {
        const T* dcrow = dc.row(i);
        T* darow = da.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            const T* brow = b.row(k);
            T acc = T(0);
            for (std::size_t j = 0; j < b.cols; ++j) acc += dcrow[j] * brow[j];
            darow[k] += acc;
        }
        const T* arow = a.row(i);
        for (std::size_t k = 0; k < a.cols; ++k) {
            T aik = arow[k];
            if (aik == T(0)) continue;
            T* dbrow = db.row(k);
            for (std::size_t j = 0; j < b.cols; ++j) dbrow[j] += aik * dcrow[j];
        }
    }
}

template <typename T>
Mat<T> transpose(const Mat<T>& a) {
    Mat<T> t(a.cols, a.rows);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t j = 0; j < a.cols; ++j) t(j, i) = a(i, j);
    return t;
}

// ---------------------------------------------------------------------------
// softmax over rows
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> softmax_rows(const Mat<T>& x) {
    Mat<T> y(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
        const T* xr = x.row(i);
        T* yr = y.row(i);
        T mx = xr[0];
        for (std::size_t j = 1; j < x.cols; ++j) mx = std::max(mx, xr[j]);
        T sum = T(0);
        for (std::size_t j = 0; j < x.cols; ++j) {
            yr[j] = std::exp(xr[j] - mx);
            sum += yr[j];
        }
        for (std::size_t j = 0; j < x.cols; ++j) yr[j] /= sum;
    }
    return y;
}

// dx given y = softmax_rows(x): dx_j = y_j * (dy_j - sum_k dy_k y_k)
template <typename T>
Mat<T> softmax_rows_backward(const Mat<T>& y, const Mat<T>& dy) {
    check_same_shape(y, dy, "softmax_rows_backward");
    Mat<T> dx(y.rows, y.cols);
    for (std::size_t i = 0; i < y.rows; ++i) {
        const T* yr = y.row(i);
        const T* dyr = dy.row(i);
        T dot = T(0);
        for (std::size_t j = 0; j < y.cols; ++j) dot += dyr[j] * yr[j];
        T* dxr = dx.row(i);
        for (std::size_t j = 0; j < y.cols; ++j) dxr[j] = yr[j] * (dyr[j] - dot);
    }
    return dx;
}

// ---------------------------------------------------------------------------
// layer norm (per-row mean/variance, then affine)
// ---------------------------------------------------------------------------

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gamma, const Mat<T>& beta, T eps) {
    if (gamma.size() != x.cols || beta.size() != x.cols) {
        throw std::invalid_argument("layer_norm: gamma/beta length must equal cols");
    }
    Mat<T> y(x.rows, x.cols);
    const T* g = gamma.data.data();
    const T* b = beta.data.data();
    for (std::size_t i = 0; i < x.rows; ++i) {
        const T* xr = x.row(i);
        T* yr = y.row(i);
        T mean = T(0);
        for (std::size_t j = 0; j < x.cols; ++j) mean += xr[j];
        mean /= T(x.cols);
        T var = T(0);
        for (std::size_t j = 0; j < x.cols; ++j) {
            T d = xr[j] - mean;
            var += d * d;
        }
        var /= T(x.cols);
        T inv = T(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < x.cols; ++j) yr[j] = g[j] * ((xr[j] - mean) * inv) + b[j];
    }
    return y;
}

template <typename T>
void layer_norm_backward(const Mat<T>& x, const Mat<T>& gamma, T eps, const Mat<T>& dy,
                         Mat<T>& dx, Mat<T>& dgamma, Mat<T>& dbeta) {
    check_same_shape(x, dy, "layer_norm_backward");
    const std::size_t n = x.cols;
    const T* g = gamma.data.data();
    for (std::size_t i = 0; i < x.rows; ++i) {
        const T* xr = x.row(i);
        const T* dyr = dy.row(i);
        T mean = T(0);
        for (std::size_t j = 0; j < n; ++j) mean += xr[j];
        mean /= T(n);
        T var = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            T d = xr[j] - mean;
            var += d * d;
        }
        var /= T(n);
        T inv = T(1) / std::sqrt(var + eps);

        // xhat_j = (x_j - mean) * inv; accumulate the two row sums the
        // backward formula needs.
        T sum_gdy = T(0), sum_gdy_xhat = T(0);
        for (std::size_t j = 0; j < n; ++j) {
            T xhat = (xr[j] - mean) * inv;
            T gdy = g[j] * dyr[j];
            sum_gdy += gdy;
            sum_gdy_xhat += gdy * xhat;
            dgamma.data[j] += dyr[j] * xhat;
            dbeta.data[j] += dyr[j];
        }
        T* dxr = dx.row(i);
        for (std::size_t j = 0; j < n; ++j) {
            T xhat = (xr[j] - mean) * inv;
            dxr[j] += inv * (g[j] * dyr[j] - sum_gdy / T(n) - xhat * sum_gdy_xhat / T(n));
        }
    }
}

// ---------------------------------------------------------------------------
// GELU, tanh approximation
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
inline constexpr double kGeluA = 0.044715;
}  // namespace detail

template <typename T>
Mat<T> gelu(const Mat<T>& x) {
    Mat<T> y(x.rows, x.cols);
    const T c = T(detail::kGeluC);
    const T a = T(detail::kGeluA);
    for (std::size_t i = 0; i < x.size(); ++i) {
        T v = x.data[i];
        T t = std::tanh(c * (v + a * v * v * v));
        y.data[i] = T(0.5) * v * (T(1) + t);
    }
    return y;
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
    check_same_shape(x, dy, "gelu_backward");
    Mat<T> dx(x.rows, x.cols);
    const T c = T(detail::kGeluC);
    const T a = T(detail::kGeluA);
    for (std::size_t i = 0; i < x.size(); ++i) {
        T v = x.data[i];
        T u = c * (v + a * v * v * v);
        T t = std::tanh(u);
        T dudv = c * (T(1) + T(3) * a * v * v);
        T grad = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * dudv;
        dx.data[i] = dy.data[i] * grad;
    }
    return dx;
}

// ---------------------------------------------------------------------------
// scaled dot-product attention (single head)
// ---------------------------------------------------------------------------

template <typename T>
struct AttentionCache {
    Mat<T> probs;  // softmax(q.k^T / sqrt(d) + mask)
};

// mask is an additive 1 x n_keys row vector (-1e9 at padded keys, 0 elsewhere),
// applied to every query row. Empty mask means no masking.
template <typename T>
Mat<T> attention_forward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const Mat<T>& mask,
                         AttentionCache<T>* cache = nullptr) {
    if (q.cols != k.cols) throw std::invalid_argument("attention: q/k width mismatch");
    if (k.rows != v.rows) throw std::invalid_argument("attention: k/v row mismatch");
    if (!mask.empty() && (mask.rows != 1 || mask.cols != k.rows)) {
        throw std::invalid_argument("attention: mask must be 1 x n_keys");
    }
    const T scale = T(1) / std::sqrt(T(q.cols));
    Mat<T> scores = matmul(q, transpose(k));
    scale_inplace(scores, scale);
    if (!mask.empty()) {
        for (std::size_t i = 0; i < scores.rows; ++i) {
            T* sr = scores.row(i);
            for (std::size_t j = 0; j < scores.cols; ++j) sr[j] += mask.data[j];
        }
    }
    Mat<T> probs = softmax_rows(scores);
    Mat<T> out = matmul(probs, v);
    if (cache) cache->probs = std::move(probs);
    return out;
}

template <typename T>
Mat<T> attention(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, const Mat<T>& mask = Mat<T>()) {
    return attention_forward(q, k, v, mask);
}

template <typename T>
void attention_backward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v,
                        const AttentionCache<T>& cache, const Mat<T>& dout,
                        Mat<T>& dq, Mat<T>& dk, Mat<T>& dv) {
    const T scale = T(1) / std::sqrt(T(q.cols));
    // dprobs = dout.v^T ; dv += probs^T.dout
    Mat<T> dprobs(cache.probs.rows, cache.probs.cols);
    matmul_backward(cache.probs, v, dout, dprobs, dv);
    Mat<T> dscores = softmax_rows_backward(cache.probs, dprobs);
    scale_inplace(dscores, scale);
    // scores' = q.k^T: dq += dscores.k ; dk += dscores^T.q
    for (std::size_t i = 0; i < q.rows; ++i) {
        const T* dsr = dscores.row(i);
        T* dqr = dq.row(i);
        for (std::size_t j = 0; j < k.rows; ++j) {
            const T* kr = k.row(j);
            T* dkr = dk.row(j);
            const T* qr = q.row(i);
            T ds = dsr[j];
            for (std::size_t c = 0; c < q.cols; ++c) {
                dqr[c] += ds * kr[c];
                dkr[c] += ds * qr[c];
            }
        }
    }
}

// ---------------------------------------------------------------------------
// gradient checking harness
// ---------------------------------------------------------------------------

struct GradCheckResult {
    std::string kernel;
    double max_rel_err = 0.0;
    bool skipped = false;
};

namespace detail {

inline double fd_rel_err(double analytic, double numeric) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1.0});
    return std::abs(analytic - numeric) / denom;
}

inline Mat<double> random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng, double lo = -1.0,
                              double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Mat<double> m(r, c);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

// Scalarizes a kernel as loss = sum(out * w) for a fixed random w, compares the
// analytic input gradient against central differences, step 1e-4.
template <typename Fwd, typename Bwd>
GradCheckResult run_fd_check(const std::string& name, std::vector<Mat<double>*> inputs, Fwd fwd,
                             Bwd bwd, std::mt19937_64& rng) {
    constexpr double h = 1e-4;
    Mat<double> out = fwd();
    Mat<double> w = random_mat(out.rows, out.cols, rng);
    std::vector<Mat<double>> grads;
    grads.reserve(inputs.size());
    for (auto* in : inputs) grads.emplace_back(in->rows, in->cols);
    bwd(w, grads);

    GradCheckResult res{name, 0.0, false};
    auto loss = [&]() {
        Mat<double> o = fwd();
        double s = 0.0;
        for (std::size_t i = 0; i < o.size(); ++i) s += o.data[i] * w.data[i];
        return s;
    };
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        Mat<double>& x = *inputs[t];
        for (std::size_t i = 0; i < x.size(); ++i) {
            double keep = x.data[i];
            x.data[i] = keep + h;
            double lp = loss();
            x.data[i] = keep - h;
            double lm = loss();
            x.data[i] = keep;
            double numeric = (lp - lm) / (2.0 * h);
            res.max_rel_err = std::max(res.max_rel_err, fd_rel_err(grads[t].data[i], numeric));
        }
    }
    return res;
}

}  // namespace detail

// Checks one registered kernel's analytic backward against central finite
// differences in double precision. Known ids: matmul, softmax, layer_norm,
// gelu, attention. An explicit layer_norm input with a constant row is
// reported as skipped rather than checked.
inline GradCheckResult grad_check(const std::string& kernel_id, std::size_t rows, std::size_t cols,
                                  std::uint64_t seed, const Mat<double>* input_override = nullptr) {
    std::mt19937_64 rng(seed);
    using detail::random_mat;

    if (kernel_id == "matmul") {
        Mat<double> a = random_mat(rows, cols, rng);
        Mat<double> b = random_mat(cols, rows, rng);
        auto fwd = [&]() { return matmul(a, b); };
        auto bwd = [&](const Mat<double>& w, std::vector<Mat<double>>& g) {
            matmul_backward(a, b, w, g[0], g[1]);
        };
        return detail::run_fd_check(kernel_id, {&a, &b}, fwd, bwd, rng);
    }
    if (kernel_id == "softmax") {
        Mat<double> x = input_override ? *input_override : random_mat(rows, cols, rng);
        auto fwd = [&]() { return softmax_rows(x); };
        auto bwd = [&](const Mat<double>& w, std::vector<Mat<double>>& g) {
            Mat<double> y = softmax_rows(x);
            g[0] = softmax_rows_backward(y, w);
        };
        return detail::run_fd_check(kernel_id, {&x}, fwd, bwd, rng);
    }
    if (kernel_id == "layer_norm") {
        Mat<double> x = input_override ? *input_override : random_mat(rows, cols, rng);
        // Constant rows make layer norm non-differentiable; report skipped.
        for (std::size_t i = 0; i < x.rows; ++i) {
            const double* xr = x.row(i);
            double mn = xr[0], mx = xr[0];
            for (std::size_t j = 1; j < x.cols; ++j) {
                mn = std::min(mn, xr[j]);
                mx = std::max(mx, xr[j]);
            }
            if (mx - mn < 1e-12) return {kernel_id, 0.0, true};
        }
        Mat<double> gamma = random_mat(1, cols, rng, 0.5, 1.5);
        Mat<double> beta = random_mat(1, cols, rng);
        const double eps = 1e-12;
        auto fwd = [&]() { return layer_norm(x, gamma, beta, eps); };
        auto bwd = [&](const Mat<double>& w, std::vector<Mat<double>>& g) {
            layer_norm_backward(x, gamma, eps, w, g[0], g[1], g[2]);
        };
        return detail::run_fd_check(kernel_id, {&x, &gamma, &beta}, fwd, bwd, rng);
    }
    if (kernel_id == "gelu") {
        Mat<double> x = input_override ? *input_override : random_mat(rows, cols, rng, -2.0, 2.0);
        auto fwd = [&]() { return gelu(x); };
        auto bwd = [&](const Mat<double>& w, std::vector<Mat<double>>& g) {
            g[0] = gelu_backward(x, w);
        };
        return detail::run_fd_check(kernel_id, {&x}, fwd, bwd, rng);
    }
    if (kernel_id == "attention") {
        Mat<double> q = random_mat(rows, cols, rng);
        Mat<double> k = random_mat(rows, cols, rng);
        Mat<double> v = random_mat(rows, cols, rng);
        auto fwd = [&]() { return attention_forward(q, k, v, Mat<double>()); };
        auto bwd = [&](const Mat<double>& w, std::vector<Mat<double>>& g) {
            AttentionCache<double> cache;
            attention_forward(q, k, v, Mat<double>(), &cache);
            attention_backward(q, k, v, cache, w, g[0], g[1], g[2]);
        };
        return detail::run_fd_check(kernel_id, {&q, &k, &v}, fwd, bwd, rng);
    }
    throw std::invalid_argument("grad_check: unknown kernel id '" + kernel_id + "'");
}

}  // namespace ceinfuse
