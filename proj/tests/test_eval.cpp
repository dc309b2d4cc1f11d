#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "ceinfuse/eval.hpp"
#include "test_util.hpp"

using namespace ceinfuse;

namespace {

Qrels make_qrels(const std::map<std::string, std::set<std::string>>& rel) {
    Qrels q;
    q.relevant = rel;
    return q;
}

// Student t density with nu degrees of freedom.
double t_density(double x, double nu) {
    double log_c = std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0) -
                   0.5 * std::log(nu * M_PI);
    return std::exp(log_c - (nu + 1.0) / 2.0 * std::log1p(x * x / nu));
}

// Two-tailed p via Simpson integration of the t density over the upper tail.
double numeric_two_tailed_p(double t, double nu) {
    double lo = std::abs(t), hi = 2000.0;
    const int n = 400000;  // even
    double h = (hi - lo) / n;
    double sum = t_density(lo, nu) + t_density(hi, nu);
    for (int i = 1; i < n; ++i) {
        sum += t_density(lo + i * h, nu) * (i % 2 == 0 ? 2.0 : 4.0);
    }
    return 2.0 * sum * h / 3.0;
}

// Beta density integral as an independent reg_inc_beta reference. The
// substitution t = sin^2(theta) keeps the integrand bounded at the endpoints
// for every a, b >= 1/2, so plain Simpson converges.
double numeric_reg_inc_beta(double a, double b, double x) {
    double norm = std::exp(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b));
    const int n = 200000;
    double upper = std::asin(std::sqrt(x));
    double h = upper / n;
    auto f = [&](double th) {
        return 2.0 * std::pow(std::sin(th), 2.0 * a - 1.0) *
               std::pow(std::cos(th), 2.0 * b - 1.0) / norm;
    };
    double sum = f(0.0) + f(upper);
    for (int i = 1; i < n; ++i) sum += f(i * h) * (i % 2 == 0 ? 2.0 : 4.0);
    return sum * h / 3.0;
}

}  // namespace

TEST(Eval, HitsAndMrrHandComputed) {
    RunResults run;
    run["q1"] = {"d3", "d1", "d9"};  // relevant d1 at rank 2
    run["q2"] = {"d7", "d8"};        // no relevant in list
    run["q3"] = {"d5"};              // relevant d5 at rank 1
    Qrels qrels = make_qrels({{"q1", {"d1"}}, {"q2", {"d2"}}, {"q3", {"d5"}}});

    EXPECT_DOUBLE_EQ(hits_at_k(run, qrels, 10), 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(hits_at_k(run, qrels, 1), 1.0 / 3.0);
    EXPECT_DOUBLE_EQ(mrr_at_k(run, qrels, 10), (0.5 + 0.0 + 1.0) / 3.0);
    EXPECT_DOUBLE_EQ(mrr_at_k(run, qrels, 1), 1.0 / 3.0);
}

TEST(Eval, RankCutoffIsRespected) {
    RunResults run;
    run["q1"] = {"d2", "d3", "d1"};  // relevant d1 at rank 3
    Qrels qrels = make_qrels({{"q1", {"d1"}}});
    EXPECT_DOUBLE_EQ(hits_at_k(run, qrels, 2), 0.0);
    EXPECT_DOUBLE_EQ(hits_at_k(run, qrels, 3), 1.0);
    EXPECT_DOUBLE_EQ(mrr_at_k(run, qrels, 2), 0.0);
    EXPECT_DOUBLE_EQ(mrr_at_k(run, qrels, 3), 1.0 / 3.0);
}

TEST(Eval, UnjudgedQueriesAreDropped) {
    RunResults run;
    run["q1"] = {"d1"};
    run["unjudged"] = {"d9"};
    Qrels qrels = make_qrels({{"q1", {"d1"}}});
    EXPECT_DOUBLE_EQ(hits_at_k(run, qrels, 5), 1.0);  // mean over judged only

    RunResults all_unjudged;
    all_unjudged["nope"] = {"d1"};
    EXPECT_THROW(hits_at_k(all_unjudged, qrels, 5), std::invalid_argument);
}

TEST(Eval, MetricsMatchIndependentRederivation) {
    std::mt19937_64 rng(77);
    std::uniform_int_distribution<int> ndocs(1, 30), pick(0, 49);
    const std::size_t k = 10;
    for (int inst = 0; inst < 100; ++inst) {
        // One query per instance with a random ranking and random judgments.
        std::vector<std::string> ranked;
        std::set<int> used;
        int len = ndocs(rng);
        for (int i = 0; i < len; ++i) {
            int d = pick(rng);
            if (used.insert(d).second) ranked.push_back("d" + std::to_string(d));
        }
        std::set<std::string> rel;
        for (int i = 0; i < 5; ++i) rel.insert("d" + std::to_string(pick(rng)));

        RunResults run;
        run["q"] = ranked;
        Qrels qrels = make_qrels({{"q", rel}});

        double expect_hit = 0.0, expect_rr = 0.0;
        for (std::size_t r = 0; r < std::min(k, ranked.size()); ++r) {
            if (rel.count(ranked[r])) {
                expect_hit = 1.0;
                expect_rr = 1.0 / static_cast<double>(r + 1);
                break;
            }
        }
        EXPECT_EQ(hits_at_k(run, qrels, k), expect_hit) << "instance " << inst;
        EXPECT_EQ(mrr_at_k(run, qrels, k), expect_rr) << "instance " << inst;
    }
}

TEST(Eval, LayerSweepCoversEveryLayer) {
    Vocab vocab = make_vocab({"red", "green", "blue", "stone", "river", "cloud"});
    ModelConfig cfg;
    cfg.num_layers = 2;
    cfg.hidden = 16;
    cfg.heads = 2;
    cfg.ff = 32;
    cfg.vocab_size = static_cast<int>(vocab.size());
    cfg.max_positions = 16;
    cfg.role = ModelRole::DualEncoder;
    EncoderWeights w = init_random(cfg, 5);

    std::vector<Doc> corpus = {{"d1", "red stone river"}, {"d2", "green cloud"},
                               {"d3", "blue river cloud"}};
    std::vector<Doc> queries = {{"q1", "red stone"}, {"q2", "blue cloud"}};
    Qrels qrels = make_qrels({{"q1", {"d1"}}, {"q2", {"d3"}}});

    auto rows = layer_sweep(w, ModelRole::DualEncoder, corpus, queries, qrels, 2, vocab, 16);
    ASSERT_EQ(rows.size(), 3u);  // layers 0, 1, 2
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].layer, static_cast<int>(i));
        EXPECT_GE(rows[i].hits_at_k, 0.0);
        EXPECT_LE(rows[i].hits_at_k, 1.0);
        EXPECT_GE(rows[i].mrr_at_k, 0.0);
        EXPECT_LE(rows[i].mrr_at_k, rows[i].hits_at_k + 1e-12);  // rr <= hit per query
    }
    EXPECT_THROW(layer_sweep(w, ModelRole::DualEncoder, {}, queries, qrels, 2, vocab, 16),
                 std::invalid_argument);
}

TEST(Eval, RegIncBetaAnchorsAndSymmetry) {
    EXPECT_DOUBLE_EQ(reg_inc_beta(2.0, 3.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(reg_inc_beta(2.0, 3.0, 1.0), 1.0);
    for (double x : {0.1, 0.4, 0.9}) {
        EXPECT_NEAR(reg_inc_beta(1.0, 1.0, x), x, 1e-12);  // uniform CDF
    }
    for (auto [a, b, x] : {std::tuple{1.5, 2.0, 0.3}, std::tuple{3.0, 0.5, 0.7},
                           std::tuple{0.5, 0.5, 0.2}}) {
        EXPECT_NEAR(reg_inc_beta(a, b, x), numeric_reg_inc_beta(a, b, x), 1e-5)
            << a << "," << b << "," << x;
        EXPECT_NEAR(reg_inc_beta(a, b, x), 1.0 - reg_inc_beta(b, a, 1.0 - x), 1e-12);
    }
    EXPECT_THROW(reg_inc_beta(0.0, 1.0, 0.5), std::invalid_argument);
    EXPECT_THROW(reg_inc_beta(1.0, 1.0, 1.5), std::invalid_argument);
}

TEST(Eval, PairedTTestKnownExample) {
    std::vector<double> a = {1.0, 2.0, 3.0, 4.0};
    std::vector<double> b = {0.0, 0.0, 0.0, 0.0};
    TTestResult res = paired_t_test(a, b);
    // mean 2.5, sd sqrt(5/3): t = 2.5 / (sd / 2) = sqrt(15) = 3.8730.
    EXPECT_NEAR(res.t, std::sqrt(15.0), 1e-12);
    EXPECT_NEAR(res.t, 3.8730, 1e-3);
    EXPECT_EQ(res.n, 4u);
    EXPECT_EQ(res.df, 3u);
    EXPECT_DOUBLE_EQ(res.mean_diff, 2.5);
    EXPECT_NEAR(res.p, 0.0305, 1e-3);
    EXPECT_NEAR(res.p, numeric_two_tailed_p(res.t, 3.0), 1e-6);
}

TEST(Eval, PairedTTestMatchesNumericIntegration) {
    std::vector<std::pair<std::vector<double>, std::vector<double>>> cases = {
        {{0.2, 0.5, 0.9, 0.4, 0.7}, {0.1, 0.6, 0.5, 0.2, 0.6}},
        {{1.0, 1.1, 0.9, 1.2, 1.3, 0.8}, {1.05, 1.0, 1.0, 1.0, 1.1, 1.0}},
    };
    for (const auto& [a, b] : cases) {
        TTestResult res = paired_t_test(a, b);
        EXPECT_NEAR(res.p, numeric_two_tailed_p(res.t, static_cast<double>(res.df)), 1e-6);
    }
}

TEST(Eval, PairedTTestSwapNegatesT) {
    std::vector<double> a = {0.3, 0.8, 0.6, 0.9};
    std::vector<double> b = {0.2, 0.5, 0.7, 0.4};
    TTestResult ab = paired_t_test(a, b);
    TTestResult ba = paired_t_test(b, a);
    EXPECT_NEAR(ab.t, -ba.t, 1e-12);
    EXPECT_NEAR(ab.p, ba.p, 1e-12);
}

TEST(Eval, PairedTTestValidation) {
    std::vector<double> a = {1.0, 2.0};
    EXPECT_THROW(paired_t_test(a, {1.0}), std::invalid_argument);
    EXPECT_THROW(paired_t_test({1.0}, {2.0}), std::invalid_argument);
    EXPECT_THROW(paired_t_test(a, a), std::invalid_argument);  // zero variance
}

TEST(Eval, NearTieFlags) {
    NearTieFlag close = near_tie("ds", "hits@10", "m1", 0.505, "m2", 0.500);
    EXPECT_TRUE(close.within_abs);
    EXPECT_TRUE(close.within_rel);

    NearTieFlag abs_only = near_tie("ds", "hits@10", "m1", 0.019, "m2", 0.010);
    EXPECT_TRUE(abs_only.within_abs);    // gap 0.009 <= 0.01
    EXPECT_FALSE(abs_only.within_rel);   // gap > 1% of 0.019

    NearTieFlag rel_only = near_tie("ds", "mrr@10", "m1", 101.0, "m2", 100.5);
    EXPECT_FALSE(rel_only.within_abs);
    EXPECT_TRUE(rel_only.within_rel);

    NearTieFlag far = near_tie("ds", "mrr@10", "m1", 0.9, "m2", 0.4);
    EXPECT_FALSE(far.within_abs);
    EXPECT_FALSE(far.within_rel);
}

TEST(Eval, ReportRoundTripThroughCsv) {
    std::string dir = testutil::temp_dir("eval_report");
    EvalReport report;
    report.k = 10;
    report.rows.push_back({"synth", "de2-ce", "retrieve", 2, 0.123456789, 0.0987654321, 0.0, false});
    report.rows.push_back({"synth", "de2-ce", "retrieve+rerank", 2, 0.75, 0.5, 3.25, true});
    report.significance.push_back({"de2-ce vs de2-rand", 2.5, 0.04, 50});
    report.sweeps["ce"] = {{0, 0.3, 0.2}, {1, 0.5, 0.4}};
    report.flags.push_back(near_tie("synth", "hits@10", "a", 0.5, "b", 0.5));

    std::string path = dir + "/report.csv";
    write_report(report, path, "seed=42 config=feedface00000000");

    std::string bytes = testutil::read_file_bytes(path);
    EXPECT_EQ(bytes.rfind("# seed=42", 0), 0u);  // comment on the first line
    EXPECT_NE(bytes.find("hits@10"), std::string::npos);

    EvalReport loaded = read_report(path);
    EXPECT_EQ(loaded.k, 10u);
    ASSERT_EQ(loaded.rows.size(), 2u);
    EXPECT_EQ(loaded.rows[0].model, "de2-ce");
    EXPECT_EQ(loaded.rows[0].stage, "retrieve");
    EXPECT_EQ(loaded.rows[0].layer, 2);
    EXPECT_DOUBLE_EQ(loaded.rows[0].hits_at_k, 0.123456789);
    EXPECT_DOUBLE_EQ(loaded.rows[0].mrr_at_k, 0.0987654321);
    EXPECT_FALSE(loaded.rows[0].has_speedup);
    EXPECT_TRUE(loaded.rows[1].has_speedup);
    EXPECT_DOUBLE_EQ(loaded.rows[1].speedup, 3.25);
}

TEST(Eval, ReportRejectsCommasInFields) {
    std::string dir = testutil::temp_dir("eval_badfield");
    EvalReport report;
    report.rows.push_back({"data,set", "m", "retrieve", 0, 0.0, 0.0, 0.0, false});
    EXPECT_THROW(write_report(report, dir + "/r.csv"), std::invalid_argument);
}
