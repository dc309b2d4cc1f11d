#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace ceinfuse {

// Dense row-major matrix. Instantiated with float for the production path
// and double for the verification (finite-difference) path.
template <typename T>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }

    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

    std::size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }
    bool same_shape(const Mat& other) const { return rows == other.rows && cols == other.cols; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

using Matrix = Mat<float>;

// Value tensor paired with a gradient accumulator of identical shape.
// The gradient starts zeroed and is accumulated into by backward passes.
template <typename T>
struct GradPair {
    Mat<T> value;
    Mat<T> grad;

    GradPair() = default;
    explicit GradPair(Mat<T> v) : value(std::move(v)), grad(value.rows, value.cols) {}

    void zero_grad() { grad.fill(T(0)); }
};

template <typename T>
inline void check_same_shape(const Mat<T>& a, const Mat<T>& b, const char* what) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                    std::to_string(a.rows) + "x" + std::to_string(a.cols) + " vs " +
                                    std::to_string(b.rows) + "x" + std::to_string(b.cols) + ")");
    }
}

template <typename T>
inline bool all_finite(const Mat<T>& m) {
    for (T v : m.data) {
        if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
}

// dst += src, shapes must match.
template <typename T>
inline void add_into(Mat<T>& dst, const Mat<T>& src) {
    check_same_shape(dst, src, "add_into");
    for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

template <typename T>
inline void scale_inplace(Mat<T>& m, T s) {
    for (T& v : m.data) v *= s;
}

template <typename T>
inline double max_abs_diff(const Mat<T>& a, const Mat<T>& b) {
    check_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]));
        if (d > m) m = d;
    }
    return m;
}

template <typename To, typename From>
inline Mat<To> cast_mat(const Mat<From>& m) {
    Mat<To> out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = static_cast<To>(m.data[i]);
    return out;
}

}  // namespace ceinfuse
