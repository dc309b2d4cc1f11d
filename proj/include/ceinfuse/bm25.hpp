#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "ceinfuse/tokenizer.hpp"
#include "ceinfuse/types.hpp"

// Okapi BM25 over an inverted index, with the non-negative idf variant
// idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5)).  Tokenization is the same
// whitespace/punctuation/lowercase pass the wordpiece tokenizer starts from,
// so lexical retrieval and the neural models agree on what a word is.

namespace ceinfuse {

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct Bm25Index {
    Bm25Params params;
    // term -> (doc id, term frequency), doc ids ascending
    std::unordered_map<std::string, std::vector<std::pair<int, int>>> postings;
    std::vector<int> doc_len;
    double avgdl = 0.0;
    int num_docs = 0;
};

inline Bm25Index bm25_build(const std::vector<std::string>& corpus, Bm25Params params = {}) {
    if (corpus.empty()) throw std::invalid_argument("bm25_build: empty corpus");
    if (params.k1 < 0.0 || params.b < 0.0 || params.b > 1.0)
        throw std::invalid_argument("bm25_build: need k1 >= 0 and 0 <= b <= 1");

    Bm25Index index;
    index.params = params;
    index.num_docs = static_cast<int>(corpus.size());
    index.doc_len.reserve(corpus.size());
    long long total_len = 0;
    for (int doc = 0; doc < index.num_docs; ++doc) {
        std::vector<std::string> words = basic_tokenize(corpus[static_cast<std::size_t>(doc)]);
        index.doc_len.push_back(static_cast<int>(words.size()));
        total_len += static_cast<long long>(words.size());
        std::map<std::string, int> tf;
        for (const auto& w : words) ++tf[w];
        for (const auto& [term, count] : tf) index.postings[term].emplace_back(doc, count);
    }
    index.avgdl = index.num_docs > 0 ? static_cast<double>(total_len) / index.num_docs : 0.0;
    return index;
}

namespace detail {

inline double bm25_idf(const Bm25Index& index, std::size_t df) {
    double n = static_cast<double>(index.num_docs);
    double d = static_cast<double>(df);
    return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

inline int bm25_tf(const std::vector<std::pair<int, int>>& plist, int doc) {
    auto it = std::lower_bound(plist.begin(), plist.end(), doc,
                               [](const std::pair<int, int>& e, int d) { return e.first < d; });
    return (it != plist.end() && it->first == doc) ? it->second : 0;
}

inline std::vector<std::string> bm25_query_terms(const std::string& query) {
    std::vector<std::string> terms = basic_tokenize(query);
    std::sort(terms.begin(), terms.end());
    terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
    return terms;
}

inline double bm25_term_weight(const Bm25Index& index, double idf, int tf, int dl) {
    if (tf == 0) return 0.0;
    const double k1 = index.params.k1, b = index.params.b;
    double norm = index.avgdl > 0.0 ? static_cast<double>(dl) / index.avgdl : 0.0;
    return idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * norm));
}

}  // namespace detail

// Score one document for a query. Duplicate query terms count once.
inline double bm25_score(const Bm25Index& index, const std::string& query, int doc) {
    if (doc < 0 || doc >= index.num_docs)
        throw std::invalid_argument("bm25_score: doc id " + std::to_string(doc) +
                                    " out of range [0, " + std::to_string(index.num_docs) + ")");
    double score = 0.0;
    for (const std::string& term : detail::bm25_query_terms(query)) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        int tf = detail::bm25_tf(it->second, doc);
        score += detail::bm25_term_weight(index, detail::bm25_idf(index, it->second.size()), tf,
                                          index.doc_len[static_cast<std::size_t>(doc)]);
    }
    return score;
}

// Top k documents by (score desc, doc id asc). Returns fewer when the corpus
// is smaller than k; documents scoring 0 are still eligible so the result has
// exactly min(k, N) entries.
inline std::vector<std::pair<int, double>> bm25_top_k(const Bm25Index& index,
                                                      const std::string& query, std::size_t k) {
    if (k == 0) throw std::invalid_argument("bm25_top_k: k must be >= 1");
    std::vector<double> scores(static_cast<std::size_t>(index.num_docs), 0.0);
    for (const std::string& term : detail::bm25_query_terms(query)) {
        auto it = index.postings.find(term);
        if (it == index.postings.end()) continue;
        double idf = detail::bm25_idf(index, it->second.size());
        for (const auto& [doc, tf] : it->second) {
            scores[static_cast<std::size_t>(doc)] += detail::bm25_term_weight(
                index, idf, tf, index.doc_len[static_cast<std::size_t>(doc)]);
        }
    }
    std::vector<std::pair<int, double>> ranked(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        ranked[i] = {static_cast<int>(i), scores[i]};
    std::size_t keep = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                      ranked.end(), [](const auto& a, const auto& b) {
                          if (a.second != b.second) return a.second > b.second;
                          return a.first < b.first;
                      });
    ranked.resize(keep);
    return ranked;
}

// A query with its judged-positive corpus positions, input to negative mining.
struct MiningPair {
    std::string query;
    std::vector<int> positive_ids;
};

// BM25 hard-negative mining: each query's top `window` lexical hits, minus its
// positives, sampled down to n_neg negatives. Warns (stderr) and keeps what it
// has when a query yields fewer candidates than requested.
inline std::vector<TrainExample> mine_hard_negatives(const Bm25Index& index,
                                                     const std::vector<std::string>& corpus,
                                                     const std::vector<MiningPair>& pairs,
                                                     std::size_t n_neg, std::size_t window,
                                                     std::uint64_t seed) {
    if (static_cast<int>(corpus.size()) != index.num_docs)
        throw std::invalid_argument("mine_hard_negatives: corpus size does not match index");
    if (n_neg == 0) throw std::invalid_argument("mine_hard_negatives: n_neg must be >= 1");
    if (window < n_neg)
        throw std::invalid_argument("mine_hard_negatives: window must be >= n_neg");

    std::mt19937_64 rng(seed);
    std::vector<TrainExample> out;
    out.reserve(pairs.size());
    for (const MiningPair& pair : pairs) {
        if (pair.positive_ids.empty())
            throw std::invalid_argument("mine_hard_negatives: query '" + pair.query +
                                        "' has no positives");
        for (int p : pair.positive_ids)
            if (p < 0 || p >= index.num_docs)
                throw std::invalid_argument("mine_hard_negatives: positive id out of range");

        std::set<int> positives(pair.positive_ids.begin(), pair.positive_ids.end());
        std::vector<int> candidates;
        for (const auto& [doc, score] : bm25_top_k(index, pair.query, window)) {
            (void)score;
            if (!positives.count(doc)) candidates.push_back(doc);
        }
        if (candidates.size() < n_neg) {
            std::fprintf(stderr,
                         "warning: query '%s' has %zu hard-negative candidates (wanted %zu)\n",
                         pair.query.c_str(), candidates.size(), n_neg);
        } else {
            std::shuffle(candidates.begin(), candidates.end(), rng);
            candidates.resize(n_neg);
        }

        TrainExample ex;
        ex.query = pair.query;
        ex.positive = corpus[static_cast<std::size_t>(pair.positive_ids.front())];
        for (int doc : candidates) ex.negatives.push_back(corpus[static_cast<std::size_t>(doc)]);
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace ceinfuse
