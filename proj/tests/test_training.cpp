#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "ceinfuse/training.hpp"

using namespace ceinfuse;

namespace {

Mat<double> constant_rows(std::size_t rows, std::size_t cols, const std::vector<double>& row) {
    Mat<double> m(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = row[j];
    }
    return m;
}

Mat<double> random_rows(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Mat<double> m(rows, cols);
    for (auto& v : m.data) v = dist(rng);
    return m;
}

Vocab tiny_vocab() {
    return make_vocab({"alpha", "beta", "gamma", "delta", "epsilon", "zeta"});
}

EncoderWeights tiny_model(ModelRole role, std::uint64_t seed) {
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.ff = 32;
    cfg.vocab_size = static_cast<int>(tiny_vocab().size());
    cfg.max_positions = 16;
    cfg.role = role;
    return init_random(cfg, seed);
}

std::vector<TrainExample> tiny_examples() {
    return {
        {"alpha beta", "alpha alpha beta", {"gamma delta", "epsilon zeta"}},
        {"gamma delta", "delta gamma", {"alpha beta", "zeta epsilon"}},
        {"epsilon zeta", "zeta epsilon epsilon", {"beta alpha", "delta gamma"}},
        {"beta gamma", "gamma beta", {"epsilon alpha", "zeta delta"}},
    };
}

}  // namespace

TEST(Training, MnrlUniformScoresHitLogOfCandidateCount) {
    // Identical embeddings give a uniform softmax: loss = ln(B * (1 + n)).
    const std::vector<double> v = {0.3, -0.7, 0.2, 0.9};
    struct Case {
        std::size_t B, n;
    };
    for (Case c : {Case{2, 0}, Case{4, 0}, Case{4, 2}}) {
        std::size_t M = c.B * (1 + c.n);
        Mat<double> q = constant_rows(c.B, v.size(), v);
        Mat<double> cand = constant_rows(M, v.size(), v);
        MnrlResultT<double> res = mnrl_loss(q, cand, 20.0);
        EXPECT_NEAR(res.loss, std::log(static_cast<double>(M)), 1e-6)
            << "B=" << c.B << " n=" << c.n;
    }
}

TEST(Training, MnrlPerfectSeparationDrivesLossToZero) {
    // Each query identical to its own positive and orthogonal to the rest.
    Mat<double> q(2, 2);
    q(0, 0) = 1.0;
    q(1, 1) = 1.0;
    Mat<double> cand = q;
    MnrlResultT<double> res = mnrl_loss(q, cand, 100.0);
    EXPECT_LT(res.loss, 1e-6);
}

TEST(Training, MnrlGradientMatchesFiniteDifferences) {
    const double scale = 20.0;
    Mat<double> q = random_rows(2, 4, 1);
    Mat<double> cand = random_rows(5, 4, 2);
    MnrlResultT<double> res = mnrl_loss(q, cand, scale);

    const double h = 1e-6;
    auto check = [&](Mat<double>& x, const Mat<double>& grad, const char* side) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            double keep = x.data[i];
            x.data[i] = keep + h;
            double up = mnrl_loss(q, cand, scale).loss;
            x.data[i] = keep - h;
            double down = mnrl_loss(q, cand, scale).loss;
            x.data[i] = keep;
            double numeric = (up - down) / (2.0 * h);
            double denom = std::max({std::abs(numeric), std::abs(grad.data[i]), 1.0});
            EXPECT_LT(std::abs(numeric - grad.data[i]) / denom, 1e-6) << side << " " << i;
        }
    };
    check(q, res.d_query, "query");
    check(cand, res.d_cand, "cand");
}

TEST(Training, MnrlValidation) {
    Mat<double> q = random_rows(2, 4, 3);
    Mat<double> cand = random_rows(4, 4, 4);
    EXPECT_THROW(mnrl_loss(Mat<double>(), cand, 20.0), std::invalid_argument);
    EXPECT_THROW(mnrl_loss(cand, q, 20.0), std::invalid_argument);  // M < B
    EXPECT_THROW(mnrl_loss(q, random_rows(4, 3, 5), 20.0), std::invalid_argument);
    EXPECT_THROW(mnrl_loss(q, cand, 0.0), std::invalid_argument);
    Mat<double> zero_row = cand;
    for (std::size_t j = 0; j < zero_row.cols; ++j) zero_row(1, j) = 0.0;
    EXPECT_THROW(mnrl_loss(q, zero_row, 20.0), std::runtime_error);
}

TEST(Training, CePairLossMatchesNaiveCrossEntropy) {
    for (double logit : {-3.0, -0.5, 0.0, 0.7, 2.5}) {
        for (int label : {0, 1}) {
            double sigma = 1.0 / (1.0 + std::exp(-logit));
            double naive = label == 1 ? -std::log(sigma) : -std::log(1.0 - sigma);
            CePairLoss res = ce_pair_loss(logit, label);
            EXPECT_NEAR(res.loss, naive, 1e-12) << logit << "/" << label;
            EXPECT_NEAR(res.dlogit, sigma - label, 1e-12);
        }
    }
}

TEST(Training, CePairLossIsStableAtExtremeLogits) {
    CePairLoss wrong = ce_pair_loss(500.0, 0);
    EXPECT_TRUE(std::isfinite(wrong.loss));
    EXPECT_NEAR(wrong.loss, 500.0, 1e-9);  // -log(1-sigma) ~ logit
    CePairLoss right = ce_pair_loss(500.0, 1);
    EXPECT_NEAR(right.loss, 0.0, 1e-12);
    CePairLoss neg = ce_pair_loss(-500.0, 1);
    EXPECT_NEAR(neg.loss, 500.0, 1e-9);
    EXPECT_THROW(ce_pair_loss(0.0, 2), std::invalid_argument);
}

TEST(Training, CePairLossGradientIsDerivative) {
    const double h = 1e-6;
    for (double logit : {-2.0, 0.3, 1.7}) {
        for (int label : {0, 1}) {
            double numeric =
                (ce_pair_loss(logit + h, label).loss - ce_pair_loss(logit - h, label).loss) /
                (2.0 * h);
            EXPECT_NEAR(ce_pair_loss(logit, label).dlogit, numeric, 1e-8);
        }
    }
}

TEST(Training, AdamWFollowsReferenceUpdate) {
    EncoderWeights w = tiny_model(ModelRole::DualEncoder, 21);
    EncoderWeights grads = make_grads(w);
    zero_tensors(grads);
    const double g = 0.25, lr = 1e-2;
    AdamWParams params;
    params.weight_decay = 0.1;

    float w0_weight = w.word_emb.data[0];
    float w0_gamma = w.emb_gamma.data[0];
    for_each_tensor(grads, [&](const std::string&, Matrix& t) {
        for (auto& v : t.data) v = static_cast<float>(g);
    });

    OptimizerStateT<float> st = make_optimizer_state(w);
    adamw_step(w, grads, st, lr, params);
    adamw_step(w, grads, st, lr, params);

    // Hand-rolled two-step AdamW on one scalar with the same constants.
    auto reference = [&](double x, bool decay) {
        double m = 0.0, v = 0.0;
        for (int step = 1; step <= 2; ++step) {
            m = params.beta1 * m + (1.0 - params.beta1) * g;
            v = params.beta2 * v + (1.0 - params.beta2) * g * g;
            double mhat = m / (1.0 - std::pow(params.beta1, step));
            double vhat = v / (1.0 - std::pow(params.beta2, step));
            double update = mhat / (std::sqrt(vhat) + params.eps);
            if (decay) update += params.weight_decay * x;
            x -= lr * update;
        }
        return x;
    };
    EXPECT_NEAR(w.word_emb.data[0], reference(w0_weight, true), 1e-6);
    EXPECT_NEAR(w.emb_gamma.data[0], reference(w0_gamma, false), 1e-6);

    // Decay-free means the layer-norm gain moved by the pure Adam update only.
    double no_decay = reference(w0_gamma, false);
    double with_decay = reference(w0_gamma, true);
    EXPECT_NE(no_decay, with_decay);
    EXPECT_NEAR(w.emb_gamma.data[0], no_decay, 1e-7);
}

TEST(Training, AdamWNonFiniteGradientThrows) {
    EncoderWeights w = tiny_model(ModelRole::DualEncoder, 22);
    EncoderWeights grads = make_grads(w);
    zero_tensors(grads);
    grads.word_emb.data[3] = std::numeric_limits<float>::quiet_NaN();
    OptimizerStateT<float> st = make_optimizer_state(w);
    try {
        adamw_step(w, grads, st, 1e-3);
        FAIL() << "expected runtime_error";
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("emb.word"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
    }
}

TEST(Training, LrScheduleAnchors) {
    EXPECT_DOUBLE_EQ(lr_at_step(0, 100, 10, 1.0), 0.1);
    EXPECT_DOUBLE_EQ(lr_at_step(4, 100, 10, 1.0), 0.5);
    EXPECT_DOUBLE_EQ(lr_at_step(9, 100, 10, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(lr_at_step(10, 100, 10, 1.0), 1.0);
    EXPECT_DOUBLE_EQ(lr_at_step(99, 100, 10, 1.0), 1.0 / 90.0);
    EXPECT_DOUBLE_EQ(lr_at_step(0, 10, 0, 0.5), 0.5);  // no warmup starts at peak
    EXPECT_THROW(lr_at_step(0, 0, 0, 1.0), std::invalid_argument);
    EXPECT_THROW(lr_at_step(0, 10, 11, 1.0), std::invalid_argument);
}

TEST(Training, TrainIsSeedDeterministic) {
    Vocab vocab = tiny_vocab();
    TrainConfig cfg;
    cfg.batch = 2;
    cfg.epochs = 2;
    cfg.lr = 1e-3;
    cfg.max_len = 12;
    cfg.seed = 5;

    EncoderWeights w1 = tiny_model(ModelRole::DualEncoder, 33);
    EncoderWeights w2 = tiny_model(ModelRole::DualEncoder, 33);
    TrainResult r1 = train(w1, TrainRole::DualEncoderMnrl, tiny_examples(), cfg, vocab);
    TrainResult r2 = train(w2, TrainRole::DualEncoderMnrl, tiny_examples(), cfg, vocab);
    ASSERT_EQ(r1.curve.size(), r2.curve.size());
    for (std::size_t i = 0; i < r1.curve.size(); ++i) {
        EXPECT_EQ(r1.curve[i].loss, r2.curve[i].loss) << "step " << i;
        EXPECT_EQ(r1.curve[i].lr, r2.curve[i].lr);
    }
    bool weights_equal = true;
    for (std::size_t i = 0; i < w1.word_emb.size(); ++i) {
        weights_equal &= w1.word_emb.data[i] == w2.word_emb.data[i];
    }
    EXPECT_TRUE(weights_equal);
}

TEST(Training, TrainCurveShapeAndFiniteness) {
    Vocab vocab = tiny_vocab();
    TrainConfig cfg;
    cfg.batch = 2;
    cfg.epochs = 3;
    cfg.lr = 1e-3;
    cfg.max_len = 12;

    EncoderWeights w = tiny_model(ModelRole::DualEncoder, 44);
    TrainResult r = train(w, TrainRole::DualEncoderMnrl, tiny_examples(), cfg, vocab);
    // 4 examples, batch 2 -> 2 steps per epoch, 3 epochs.
    EXPECT_EQ(r.steps, 6);
    ASSERT_EQ(r.curve.size(), 6u);
    long expect_step = 1;
    for (const LossPoint& p : r.curve) {
        EXPECT_EQ(p.step, expect_step++);
        EXPECT_TRUE(std::isfinite(p.loss));
        EXPECT_GT(p.lr, 0.0);
    }
}

TEST(Training, TrainRoleModelMismatchThrows) {
    Vocab vocab = tiny_vocab();
    TrainConfig cfg;
    cfg.batch = 2;
    cfg.epochs = 1;
    cfg.max_len = 12;
    EncoderWeights ce = tiny_model(ModelRole::CrossEncoder, 1);
    EncoderWeights de = tiny_model(ModelRole::DualEncoder, 1);
    auto data = tiny_examples();
    EXPECT_THROW(train(ce, TrainRole::DualEncoderMnrl, data, cfg, vocab), std::invalid_argument);
    EXPECT_THROW(train(de, TrainRole::CrossEncoderBinary, data, cfg, vocab), std::invalid_argument);
}

TEST(Training, TrainConfigValidation) {
    Vocab vocab = tiny_vocab();
    EncoderWeights w = tiny_model(ModelRole::DualEncoder, 2);
    auto data = tiny_examples();
    TrainConfig bad;
    bad.batch = 0;
    EXPECT_THROW(train(w, TrainRole::DualEncoderMnrl, data, bad, vocab), std::invalid_argument);
    bad = TrainConfig{};
    bad.lr = -1.0;
    EXPECT_THROW(train(w, TrainRole::DualEncoderMnrl, data, bad, vocab), std::invalid_argument);
    EXPECT_THROW(train(w, TrainRole::DualEncoderMnrl, {}, TrainConfig{}, vocab),
                 std::invalid_argument);
}

TEST(Training, RaggedNegativeCountsAreAccepted) {
    Vocab vocab = tiny_vocab();
    std::vector<TrainExample> data = {
        {"alpha beta", "alpha alpha", {"gamma delta", "epsilon zeta", "zeta beta"}},
        {"gamma delta", "delta gamma", {"alpha epsilon"}},
    };
    TrainConfig cfg;
    cfg.batch = 2;
    cfg.epochs = 1;
    cfg.lr = 1e-3;
    cfg.max_len = 12;
    EncoderWeights w = tiny_model(ModelRole::DualEncoder, 3);
    TrainResult r = train(w, TrainRole::DualEncoderMnrl, data, cfg, vocab);
    EXPECT_EQ(r.steps, 1);
    EXPECT_TRUE(std::isfinite(r.curve[0].loss));
}

TEST(Training, CrossEncoderTrainingRunsAndDescends) {
    Vocab vocab = tiny_vocab();
    TrainConfig cfg;
    cfg.batch = 4;
    cfg.epochs = 40;
    cfg.lr = 1e-2;
    cfg.max_len = 16;
    cfg.seed = 9;
    EncoderWeights w = tiny_model(ModelRole::CrossEncoder, 55);
    TrainResult r = train(w, TrainRole::CrossEncoderBinary, tiny_examples(), cfg, vocab);
    ASSERT_GE(r.curve.size(), 12u);
    // Individual batches are noisy; compare epoch-scale averages instead.
    auto mean_of = [&](std::size_t lo, std::size_t hi) {
        double s = 0.0;
        for (std::size_t i = lo; i < hi; ++i) s += r.curve[i].loss;
        return s / static_cast<double>(hi - lo);
    };
    double first_window = mean_of(0, 6);
    double last_window = mean_of(r.curve.size() - 6, r.curve.size());
    EXPECT_LT(last_window, first_window - 0.1);
}

TEST(Training, ModelGradCheckPassesBothRoles) {
    for (TrainRole role : {TrainRole::DualEncoderMnrl, TrainRole::CrossEncoderBinary}) {
        ModelGradCheckReport rep = model_grad_check(role, 123);
        EXPECT_LT(rep.max_rel_err, 1e-4)
            << (role == TrainRole::DualEncoderMnrl ? "mnrl" : "binary");
        EXPECT_FALSE(rep.per_tensor.empty());
        for (const TensorGradErr& t : rep.per_tensor) {
            EXPECT_LT(t.max_rel_err, 1e-4) << t.name;
        }
    }
}

TEST(Training, ModelGradCheckCatchesPlantedFault) {
    ModelGradCheckReport clean = model_grad_check(TrainRole::DualEncoderMnrl, 123);
    ModelGradCheckOptions opts;
    opts.negate_grad_tensor = "layer.0.attn.wv";
    ModelGradCheckReport faulty = model_grad_check(TrainRole::DualEncoderMnrl, 123, opts);
    EXPECT_GT(faulty.max_rel_err, 1e-4);  // a sign flip must trip the tolerance
    EXPECT_GT(faulty.max_rel_err, 100.0 * clean.max_rel_err);

    opts.negate_grad_tensor = "layer.9.nope";
    EXPECT_THROW(model_grad_check(TrainRole::DualEncoderMnrl, 123, opts), std::invalid_argument);
}
