#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ceinfuse/kernels.hpp"

using namespace ceinfuse;

namespace {

Mat<double> random_mat(std::size_t r, std::size_t c, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Mat<double> m(r, c);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

// Independent central-difference gradient of loss = sum(w * f(inputs)).
template <typename LossFn>
double fd_grad(Mat<double>& x, std::size_t i, LossFn loss, double h = 1e-5) {
    double keep = x.data[i];
    x.data[i] = keep + h;
    double up = loss();
    x.data[i] = keep - h;
    double down = loss();
    x.data[i] = keep;
    return (up - down) / (2.0 * h);
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1.0});
}

}  // namespace

TEST(Kernels, MatmulHandComputed) {
    Mat<double> a(2, 2);
    a.data = {1, 2, 3, 4};
    Mat<double> b(2, 2);
    b.data = {5, 6, 7, 8};
    Mat<double> c = matmul(a, b);
    EXPECT_DOUBLE_EQ(c(0, 0), 19.0);
    EXPECT_DOUBLE_EQ(c(0, 1), 22.0);
    EXPECT_DOUBLE_EQ(c(1, 0), 43.0);
    EXPECT_DOUBLE_EQ(c(1, 1), 50.0);
}

TEST(Kernels, MatmulShapeMismatchThrows) {
    Mat<double> a(2, 3), b(2, 3);
    EXPECT_THROW(matmul(a, b), std::invalid_argument);
}

TEST(Kernels, TransposeInvolution) {
    std::mt19937_64 rng(1);
    Mat<double> a = random_mat(3, 5, rng);
    Mat<double> t = transpose(transpose(a));
    ASSERT_TRUE(t.same_shape(a));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_DOUBLE_EQ(t.data[i], a.data[i]);
}

TEST(Kernels, SoftmaxRowsSumToOne) {
    std::mt19937_64 rng(2);
    Mat<double> x = random_mat(4, 7, rng);
    Mat<double> y = softmax_rows(x);
    for (std::size_t i = 0; i < y.rows; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < y.cols; ++j) {
            EXPECT_GT(y(i, j), 0.0);
            sum += y(i, j);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(Kernels, SoftmaxShiftInvariant) {
    std::mt19937_64 rng(3);
    Mat<double> x = random_mat(3, 5, rng);
    Mat<double> shifted = x;
    for (std::size_t i = 0; i < shifted.rows; ++i) {
        for (std::size_t j = 0; j < shifted.cols; ++j) shifted(i, j) += 123.456;
    }
    Mat<double> a = softmax_rows(x);
    Mat<double> b = softmax_rows(shifted);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
}

TEST(Kernels, SoftmaxUniformInput) {
    Mat<double> x(2, 4, 0.7);
    Mat<double> y = softmax_rows(x);
    for (double v : y.data) EXPECT_NEAR(v, 0.25, 1e-15);
}

TEST(Kernels, SoftmaxBackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(4);
    Mat<double> x = random_mat(3, 6, rng);
    Mat<double> w = random_mat(3, 6, rng);
    auto loss = [&]() {
        Mat<double> y = softmax_rows(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += w.data[i] * y.data[i];
        return s;
    };
    Mat<double> y = softmax_rows(x);
    Mat<double> dx = softmax_rows_backward(y, w);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LT(rel_err(dx.data[i], fd_grad(x, i, loss)), 1e-7) << "component " << i;
    }
}

TEST(Kernels, LayerNormRowStatistics) {
    std::mt19937_64 rng(5);
    Mat<double> x = random_mat(4, 16, rng);
    Mat<double> gamma(1, 16, 1.0), beta(1, 16, 0.0);
    Mat<double> y = layer_norm(x, gamma, beta, 1e-12);
    for (std::size_t i = 0; i < y.rows; ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < y.cols; ++j) mean += y(i, j);
        mean /= static_cast<double>(y.cols);
        for (std::size_t j = 0; j < y.cols; ++j) var += (y(i, j) - mean) * (y(i, j) - mean);
        var /= static_cast<double>(y.cols);
        EXPECT_NEAR(mean, 0.0, 1e-12);
        EXPECT_NEAR(var, 1.0, 1e-9);
    }
}

TEST(Kernels, LayerNormAffineParameters) {
    std::mt19937_64 rng(6);
    Mat<double> x = random_mat(2, 8, rng);
    Mat<double> g1(1, 8, 1.0), b0(1, 8, 0.0);
    Mat<double> g2(1, 8, 2.0), b3(1, 8, 3.0);
    Mat<double> base = layer_norm(x, g1, b0, 1e-12);
    Mat<double> scaled = layer_norm(x, g2, b3, 1e-12);
    for (std::size_t i = 0; i < base.size(); ++i) {
        EXPECT_NEAR(scaled.data[i], 2.0 * base.data[i] + 3.0, 1e-12);
    }
}

TEST(Kernels, LayerNormBackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(7);
    Mat<double> x = random_mat(3, 8, rng);
    Mat<double> gamma = random_mat(1, 8, rng);
    Mat<double> beta = random_mat(1, 8, rng);
    Mat<double> w = random_mat(3, 8, rng);
    const double eps = 1e-12;
    auto loss = [&]() {
        Mat<double> y = layer_norm(x, gamma, beta, eps);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += w.data[i] * y.data[i];
        return s;
    };
    Mat<double> dx(3, 8), dgamma(1, 8), dbeta(1, 8);
    layer_norm_backward(x, gamma, eps, w, dx, dgamma, dbeta);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LT(rel_err(dx.data[i], fd_grad(x, i, loss)), 1e-6) << "x component " << i;
    }
    for (std::size_t i = 0; i < gamma.size(); ++i) {
        EXPECT_LT(rel_err(dgamma.data[i], fd_grad(gamma, i, loss)), 1e-6) << "gamma " << i;
        EXPECT_LT(rel_err(dbeta.data[i], fd_grad(beta, i, loss)), 1e-6) << "beta " << i;
    }
}

TEST(Kernels, GeluAnchorsAgainstErfForm) {
    // The tanh approximation must stay close to the exact erf definition.
    Mat<double> x(1, 9);
    x.data = {-5.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0};
    Mat<double> y = gelu(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        double v = x.data[i];
        double exact = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        EXPECT_NEAR(y.data[i], exact, 2e-3) << "x = " << v;
    }
    EXPECT_DOUBLE_EQ(y.data[4], 0.0);  // gelu(0) = 0 exactly
}

TEST(Kernels, GeluBackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(8);
    Mat<double> x = random_mat(2, 10, rng);
    Mat<double> w = random_mat(2, 10, rng);
    auto loss = [&]() {
        Mat<double> y = gelu(x);
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += w.data[i] * y.data[i];
        return s;
    };
    Mat<double> dx = gelu_backward(x, w);
    for (std::size_t i = 0; i < x.size(); ++i) {
        EXPECT_LT(rel_err(dx.data[i], fd_grad(x, i, loss)), 1e-7) << "component " << i;
    }
}

TEST(Kernels, AttentionMatchesBruteForceReference) {
    std::mt19937_64 rng(9);
    const std::size_t n = 4, d = 6;
    Mat<double> q = random_mat(n, d, rng);
    Mat<double> k = random_mat(n, d, rng);
    Mat<double> v = random_mat(n, d, rng);

    // Reference recomputed with explicit loops.
    double scale = 1.0 / std::sqrt(static_cast<double>(d));
    Mat<double> expected(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> scores(n);
        double mx = -1e300;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += q(i, c) * k(j, c);
            scores[j] = s * scale;
            mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) z += std::exp(scores[j] - mx);
        for (std::size_t j = 0; j < n; ++j) {
            double p = std::exp(scores[j] - mx) / z;
            for (std::size_t c = 0; c < d; ++c) expected(i, c) += p * v(j, c);
        }
    }

    Mat<double> out = attention(q, k, v);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out.data[i], expected.data[i], 1e-12);
}

TEST(Kernels, AttentionSingleKeyReturnsValueRow) {
    std::mt19937_64 rng(10);
    Mat<double> q = random_mat(3, 4, rng);
    Mat<double> k = random_mat(1, 4, rng);
    Mat<double> v = random_mat(1, 4, rng);
    Mat<double> out = attention(q, k, v);
    for (std::size_t i = 0; i < out.rows; ++i) {
        for (std::size_t j = 0; j < out.cols; ++j) EXPECT_NEAR(out(i, j), v(0, j), 1e-12);
    }
}

TEST(Kernels, AttentionMaskSuppressesPositions) {
    std::mt19937_64 rng(11);
    Mat<double> q = random_mat(2, 4, rng);
    Mat<double> k = random_mat(3, 4, rng);
    Mat<double> v = random_mat(3, 4, rng);
    Mat<double> mask(1, 3, 0.0);
    mask(0, 2) = kAttentionMaskValue;  // hide the last key

    Mat<double> masked = attention(q, k, v, mask);

    Mat<double> k2(2, 4), v2(2, 4);
    for (std::size_t j = 0; j < 2; ++j) {
        for (std::size_t c = 0; c < 4; ++c) {
            k2(j, c) = k(j, c);
            v2(j, c) = v(j, c);
        }
    }
    Mat<double> trimmed = attention(q, k2, v2);
    for (std::size_t i = 0; i < masked.size(); ++i) {
        EXPECT_NEAR(masked.data[i], trimmed.data[i], 1e-9);
    }
}

TEST(Kernels, GradCheckRegistryAllKernelsPass) {
    for (const char* id : {"matmul", "softmax", "layer_norm", "gelu", "attention"}) {
        GradCheckResult res = grad_check(id, 4, 6, 123);
        EXPECT_FALSE(res.skipped) << id;
        EXPECT_LT(res.max_rel_err, 1e-5) << id;
    }
}

TEST(Kernels, GradCheckConstantRowLayerNormSkipped) {
    Mat<double> constant(3, 5, 0.25);
    GradCheckResult res = grad_check("layer_norm", 3, 5, 1, &constant);
    EXPECT_TRUE(res.skipped);
}

TEST(Kernels, GradCheckUnknownKernelThrows) {
    EXPECT_THROW(grad_check("conv2d", 2, 2, 1), std::invalid_argument);
}
