#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ceinfuse/model.hpp"
#include "ceinfuse/retrieval.hpp"
#include "ceinfuse/types.hpp"

namespace ceinfuse {

// ---------------------------------------------------------------------------
// rank metrics
// ---------------------------------------------------------------------------

namespace detail {

// Keeps only judged queries; warns to stderr once per call about the rest.
inline RunResults judged_subset(const RunResults& run, const Qrels& qrels, const char* metric) {
    RunResults kept;
    std::size_t dropped = 0;
    for (const auto& [qid, ranked] : run) {
        if (qrels.has_query(qid)) {
            kept.emplace(qid, ranked);
        } else {
            ++dropped;
        }
    }
    if (dropped > 0) {
        std::fprintf(stderr, "warning: %s: dropped %zu quer%s without relevance judgments\n",
                     metric, dropped, dropped == 1 ? "y" : "ies");
    }
    if (kept.empty()) {
        throw std::invalid_argument(std::string(metric) + ": no judged queries to evaluate");
    }
    return kept;
}

}  // namespace detail

// 1 if any of the top-k docs is relevant, else 0, for one query.
inline double query_hit_at_k(const std::vector<std::string>& ranked, const std::string& qid,
                             const Qrels& qrels, std::size_t k) {
    std::size_t depth = std::min(k, ranked.size());
    for (std::size_t i = 0; i < depth; ++i) {
        if (qrels.is_relevant(qid, ranked[i])) return 1.0;
    }
    return 0.0;
}

// 1/rank of the first relevant doc in the top k, else 0, for one query.
inline double query_rr_at_k(const std::vector<std::string>& ranked, const std::string& qid,
                            const Qrels& qrels, std::size_t k) {
    std::size_t depth = std::min(k, ranked.size());
    for (std::size_t i = 0; i < depth; ++i) {
        if (qrels.is_relevant(qid, ranked[i])) return 1.0 / static_cast<double>(i + 1);
    }
    return 0.0;
}

// Per-query metric vectors (key order = map order), for paired significance
// tests. Unjudged queries are dropped with a warning.
inline std::map<std::string, double> per_query_hits(const RunResults& run, const Qrels& qrels,
                                                    std::size_t k) {
    if (k == 0) throw std::invalid_argument("hits@k: k must be >= 1");
    std::map<std::string, double> out;
    for (const auto& [qid, ranked] : detail::judged_subset(run, qrels, "hits@k")) {
        out.emplace(qid, query_hit_at_k(ranked, qid, qrels, k));
    }
    return out;
}

inline std::map<std::string, double> per_query_rr(const RunResults& run, const Qrels& qrels,
                                                  std::size_t k) {
    if (k == 0) throw std::invalid_argument("mrr@k: k must be >= 1");
    std::map<std::string, double> out;
    for (const auto& [qid, ranked] : detail::judged_subset(run, qrels, "mrr@k")) {
        out.emplace(qid, query_rr_at_k(ranked, qid, qrels, k));
    }
    return out;
}

inline double hits_at_k(const RunResults& run, const Qrels& qrels, std::size_t k) {
    auto per_query = per_query_hits(run, qrels, k);
    double sum = 0.0;
    for (const auto& [qid, v] : per_query) sum += v;
    return sum / static_cast<double>(per_query.size());
}

inline double mrr_at_k(const RunResults& run, const Qrels& qrels, std::size_t k) {
    auto per_query = per_query_rr(run, qrels, k);
    double sum = 0.0;
    for (const auto& [qid, v] : per_query) sum += v;
    return sum / static_cast<double>(per_query.size());
}

// ---------------------------------------------------------------------------
// layer-wise sweep
// ---------------------------------------------------------------------------

struct LayerMetrics {
    int layer = 0;
    double hits_at_k = 0.0;
    double mrr_at_k = 0.0;
};

// Retrieval quality of the embeddings pooled at every layer 0..L of one
// model. One capture pass per document and per query covers all layers.
inline std::vector<LayerMetrics> layer_sweep(const EncoderWeights& w, ModelRole mode,
                                             const std::vector<Doc>& corpus,
                                             const std::vector<Doc>& queries, const Qrels& qrels,
                                             std::size_t k, const Vocab& vocab,
                                             std::size_t max_len) {
    if (corpus.empty()) throw std::invalid_argument("layer_sweep: empty corpus");
    if (k == 0) throw std::invalid_argument("layer_sweep: k must be >= 1");
    const std::size_t num_indexes = static_cast<std::size_t>(w.config.num_layers) + 1;
    const std::size_t d = static_cast<std::size_t>(w.config.hidden);

    std::vector<EmbeddingIndex> indexes(num_indexes);
    for (std::size_t li = 0; li < num_indexes; ++li) {
        indexes[li].layer = static_cast<int>(li);
        indexes[li].embeddings = Matrix(corpus.size(), d);
        indexes[li].doc_ids.reserve(corpus.size());
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        auto per_layer = embed_all_layers<float>(w, vocab, corpus[i].text, mode, max_len);
        for (std::size_t li = 0; li < num_indexes; ++li) {
            std::copy(per_layer[li].begin(), per_layer[li].end(), indexes[li].embeddings.row(i));
            detail::normalize_unit(indexes[li].embeddings.row(i), d,
                                   "doc '" + corpus[i].id + "'");
        }
    }
    for (std::size_t li = 0; li < num_indexes; ++li) {
        for (const Doc& doc : corpus) indexes[li].doc_ids.push_back(doc.id);
    }

    std::vector<RunResults> runs(num_indexes);
    for (const Doc& query : queries) {
        auto per_layer = embed_all_layers<float>(w, vocab, query.text, mode, max_len);
        for (std::size_t li = 0; li < num_indexes; ++li) {
            SearchResult res = search(indexes[li], per_layer[li], k);
            std::vector<std::string>& ranked = runs[li][query.id];
            for (const ScoredDoc& hit : res.hits) ranked.push_back(hit.doc_id);
        }
    }

    std::vector<LayerMetrics> out;
    out.reserve(num_indexes);
    for (std::size_t li = 0; li < num_indexes; ++li) {
        LayerMetrics m;
        m.layer = static_cast<int>(li);
        m.hits_at_k = hits_at_k(runs[li], qrels, k);
        m.mrr_at_k = mrr_at_k(runs[li], qrels, k);
        out.push_back(m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// paired t-test
// ---------------------------------------------------------------------------

namespace detail {

// Continued-fraction evaluation for the regularized incomplete beta function
// (modified Lentz).
inline double betacf(double a, double b, double x) {
    const int kMaxIter = 300;
    const double kEps = 3e-16, kFpMin = 1e-300;
    double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw std::runtime_error("reg_inc_beta: continued fraction did not converge");
}

}  // namespace detail

inline double reg_inc_beta(double a, double b, double x) {
    if (a <= 0.0 || b <= 0.0) throw std::invalid_argument("reg_inc_beta: a, b must be positive");
    if (x < 0.0 || x > 1.0) throw std::invalid_argument("reg_inc_beta: x must be in [0, 1]");
    if (x == 0.0 || x == 1.0) return x;
    double ln_bt = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                   b * std::log(1.0 - x);
    double bt = std::exp(ln_bt);
    if (x < (a + 1.0) / (a + b + 2.0)) return bt * detail::betacf(a, b, x) / a;
    return 1.0 - bt * detail::betacf(b, a, 1.0 - x) / b;
}

struct TTestResult {
    double t = 0.0;
    double p = 0.0;  // two-tailed
    std::size_t n = 0;
    std::size_t df = 0;
    double mean_diff = 0.0;
};

// Two-tailed paired t-test on matched samples a, b. The p-value comes from
// the Student t CDF via the regularized incomplete beta function.
inline TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw std::invalid_argument("paired_t_test: need at least 2 pairs");
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
    mean /= static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        double d = a[i] - b[i] - mean;
        ss += d * d;
    }
    double sd = std::sqrt(ss / static_cast<double>(n - 1));
    if (sd == 0.0) {
        throw std::invalid_argument("paired_t_test: zero variance (all differences identical)");
    }
    TTestResult r;
    r.n = n;
    r.df = n - 1;
    r.mean_diff = mean;
    r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
    double df = static_cast<double>(r.df);
    r.p = reg_inc_beta(df / 2.0, 0.5, df / (df + r.t * r.t));
    return r;
}

// ---------------------------------------------------------------------------
// evaluation report
// ---------------------------------------------------------------------------

struct ReportRow {
    std::string dataset;
    std::string model;
    std::string stage;  // "retrieve" or "retrieve+rerank"
    int layer = 0;
    double hits_at_k = 0.0;
    double mrr_at_k = 0.0;
    double speedup = 0.0;
    bool has_speedup = false;
};

struct SignificanceRow {
    std::string comparison;
    double t = 0.0;
    double p = 0.0;
    std::size_t n = 0;
};

// Two near-tie thresholds, flagged separately: absolute gap <= 0.01 and
// relative gap <= 1% of the stronger value.
struct NearTieFlag {
    std::string dataset;
    std::string metric;
    std::string model_a, model_b;
    double value_a = 0.0, value_b = 0.0;
    bool within_abs = false;  // |a - b| <= 0.01
    bool within_rel = false;  // |a - b| <= 0.01 * max(a, b)
};

inline NearTieFlag near_tie(const std::string& dataset, const std::string& metric,
                            const std::string& model_a, double value_a,
                            const std::string& model_b, double value_b) {
    NearTieFlag f{dataset, metric, model_a, model_b, value_a, value_b, false, false};
    double gap = std::abs(value_a - value_b);
    f.within_abs = gap <= 0.01;
    f.within_rel = gap <= 0.01 * std::max(std::abs(value_a), std::abs(value_b));
    return f;
}

struct EvalReport {
    std::size_t k = 10;
    std::vector<ReportRow> rows;
    std::vector<SignificanceRow> significance;
    std::map<std::string, std::vector<LayerMetrics>> sweeps;  // model id -> per-layer rows
    std::vector<NearTieFlag> flags;
};

namespace detail {

inline std::string csv_num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline void check_csv_field(const std::string& s) {
    if (s.find(',') != std::string::npos || s.find('\n') != std::string::npos) {
        throw std::invalid_argument("report field contains a comma or newline: '" + s + "'");
    }
}

inline std::string report_stem(const std::string& path) {
    if (path.size() > 4 && path.substr(path.size() - 4) == ".csv") {
        return path.substr(0, path.size() - 4);
    }
    return path;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

}  // namespace detail

// Writes the metric table to `path` and its companions next to it:
// <stem>_sweep_<model>.csv, <stem>_significance.csv, <stem>_flags.csv.
// Numbers use exact round-trip formatting so read_report reproduces the rows.
// A non-empty header_comment (e.g. the seed line) leads every file.
inline void write_report(const EvalReport& report, const std::string& path,
                         const std::string& header_comment = "") {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("write_report: cannot open " + path);
    if (!header_comment.empty()) out << "# " << header_comment << '\n';
    std::string kstr = std::to_string(report.k);
    out << "dataset,model,stage,layer,hits@" << kstr << ",mrr@" << kstr << ",speedup\n";
    for (const ReportRow& row : report.rows) {
        detail::check_csv_field(row.dataset);
        detail::check_csv_field(row.model);
        detail::check_csv_field(row.stage);
        out << row.dataset << ',' << row.model << ',' << row.stage << ',' << row.layer << ','
            << detail::csv_num(row.hits_at_k) << ',' << detail::csv_num(row.mrr_at_k) << ',';
        if (row.has_speedup) out << detail::csv_num(row.speedup);
        out << '\n';
    }
    out.close();
    if (!out) throw std::runtime_error("write_report: write failed for " + path);

    const std::string stem = detail::report_stem(path);
    for (const auto& [model, rows] : report.sweeps) {
        detail::check_csv_field(model);
        std::ofstream sw(stem + "_sweep_" + model + ".csv", std::ios::trunc);
        if (!header_comment.empty()) sw << "# " << header_comment << '\n';
        sw << "layer,hits@" << kstr << ",mrr@" << kstr << "\n";
        for (const LayerMetrics& m : rows) {
            sw << m.layer << ',' << detail::csv_num(m.hits_at_k) << ','
               << detail::csv_num(m.mrr_at_k) << '\n';
        }
    }
    if (!report.significance.empty()) {
        std::ofstream sig(stem + "_significance.csv", std::ios::trunc);
        if (!header_comment.empty()) sig << "# " << header_comment << '\n';
        sig << "comparison,t,p,n\n";
        for (const SignificanceRow& s : report.significance) {
            detail::check_csv_field(s.comparison);
            sig << s.comparison << ',' << detail::csv_num(s.t) << ',' << detail::csv_num(s.p)
                << ',' << s.n << '\n';
        }
    }
    if (!report.flags.empty()) {
        std::ofstream fl(stem + "_flags.csv", std::ios::trunc);
        if (!header_comment.empty()) fl << "# " << header_comment << '\n';
        fl << "dataset,metric,model_a,model_b,value_a,value_b,within_abs_0.01,within_rel_1pct\n";
        for (const NearTieFlag& f : report.flags) {
            fl << f.dataset << ',' << f.metric << ',' << f.model_a << ',' << f.model_b << ','
               << detail::csv_num(f.value_a) << ',' << detail::csv_num(f.value_b) << ','
               << (f.within_abs ? 1 : 0) << ',' << (f.within_rel ? 1 : 0) << '\n';
        }
    }
}

// Parses the main metric table written by write_report (not the companions).
inline EvalReport read_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_report: cannot open " + path);
    EvalReport report;
    std::string line;
    do {
        if (!std::getline(in, line)) throw std::runtime_error("read_report: empty file " + path);
    } while (line.empty() || line[0] == '#');
    auto header = detail::split_csv_line(line);
    if (header.size() != 7 || header[0] != "dataset") {
        throw std::runtime_error("read_report: unexpected header in " + path);
    }
    const std::string& hits_col = header[4];  // "hits@<k>"
    auto at = hits_col.find('@');
    if (at == std::string::npos) throw std::runtime_error("read_report: bad hits column");
    report.k = static_cast<std::size_t>(std::stoull(hits_col.substr(at + 1)));
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        auto f = detail::split_csv_line(line);
        if (f.size() != 7) {
            throw std::runtime_error("read_report: malformed row '" + line + "'");
        }
        ReportRow row;
        row.dataset = f[0];
        row.model = f[1];
        row.stage = f[2];
        row.layer = std::stoi(f[3]);
        row.hits_at_k = std::strtod(f[4].c_str(), nullptr);
        row.mrr_at_k = std::strtod(f[5].c_str(), nullptr);
        row.has_speedup = !f[6].empty();
        if (row.has_speedup) row.speedup = std::strtod(f[6].c_str(), nullptr);
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace ceinfuse
