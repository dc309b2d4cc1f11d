#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "ceinfuse/dataio.hpp"
#include "ceinfuse/types.hpp"

// Synthetic topical retrieval data. Each topic owns a disjoint pool of
// pseudo-words; a query samples content words from one topic, its relevant
// docs reuse those exact words, distractors draw from the same or other
// topics, and a separate shared pool supplies off-topic noise words. With
// noise 0 a query shares keywords only with same-topic docs.

namespace ceinfuse {

struct SynthSpec {
    int topics = 10;
    int keywords_per_topic = 20;
    int noise_vocab = 50;
    int query_len_min = 4, query_len_max = 8;
    int doc_len_min = 8, doc_len_max = 16;
    double noise_ratio = 0.2;
    int corpus_size = 500;
    int num_queries = 50;
    int relevant_per_query = 2;
    std::uint64_t seed = 42;

    void validate() const {
        if (topics < 2) throw std::invalid_argument("SynthSpec: need at least 2 topics");
        if (keywords_per_topic < 1 || noise_vocab < 1) {
            throw std::invalid_argument("SynthSpec: keyword and noise pools must be non-empty");
        }
        if (query_len_min < 1 || query_len_min > query_len_max ||
            doc_len_min < 1 || doc_len_min > doc_len_max) {
            throw std::invalid_argument("SynthSpec: bad length ranges");
        }
        if (noise_ratio < 0.0 || noise_ratio >= 1.0) {
            throw std::invalid_argument("SynthSpec: noise_ratio must be in [0, 1)");
        }
        if (keywords_per_topic < query_len_max || keywords_per_topic < doc_len_max) {
            throw std::invalid_argument(
                "SynthSpec: infeasible, keywords_per_topic must cover the longest query and doc");
        }
        if (num_queries < 1) throw std::invalid_argument("SynthSpec: need at least 1 query");
        if (corpus_size < num_queries * relevant_per_query) {
            throw std::invalid_argument(
                "SynthSpec: corpus_size too small for num_queries * relevant_per_query");
        }
        if (relevant_per_query < 1) {
            throw std::invalid_argument("SynthSpec: relevant_per_query must be >= 1");
        }
        if (corpus_size > 99999 || num_queries > 9999) {
            throw std::invalid_argument("SynthSpec: id scheme caps corpus at 99999, queries 9999");
        }
    }
};

struct SynthData {
    std::vector<Doc> corpus;
    std::vector<Doc> queries;
    Qrels qrels;
    std::vector<std::pair<std::string, std::string>> pairs;  // query text, positive text
};

inline std::string canonical_spec_string(const SynthSpec& s) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "topics=%d keywords=%d noise_vocab=%d qlen=%d..%d dlen=%d..%d noise=%.6f "
                  "corpus=%d queries=%d rel=%d seed=%llu",
                  s.topics, s.keywords_per_topic, s.noise_vocab, s.query_len_min, s.query_len_max,
                  s.doc_len_min, s.doc_len_max, s.noise_ratio, s.corpus_size, s.num_queries,
                  s.relevant_per_query, static_cast<unsigned long long>(s.seed));
    return buf;
}

namespace detail {

// Distinct pronounceable pseudo-words: 2-3 consonant+vowel syllables.
inline std::vector<std::string> synth_word_pool(std::size_t count, std::mt19937_64& rng) {
    static const char* kCons = "bcdfghjklmnprstvwz";
    static const char* kVow = "aeiou";
    std::uniform_int_distribution<int> cons(0, 17), vow(0, 4), syllables(2, 3);
    std::unordered_set<std::string> seen;
    std::vector<std::string> words;
    while (words.size() < count) {
        std::string w;
        int n = syllables(rng);
        for (int s = 0; s < n; ++s) {
            w.push_back(kCons[cons(rng)]);
            w.push_back(kVow[vow(rng)]);
        }
        if (seen.insert(w).second) words.push_back(std::move(w));
    }
    return words;
}

// k distinct elements of pool, order randomized.
inline std::vector<std::string> sample_without_replacement(const std::vector<std::string>& pool,
                                                           std::size_t k, std::mt19937_64& rng) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::string> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k && i < idx.size(); ++i) out.push_back(pool[idx[i]]);
    return out;
}

inline std::string join_words(std::vector<std::string> words, std::mt19937_64& rng) {
    std::shuffle(words.begin(), words.end(), rng);
    std::string text;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) text.push_back(' ');
        text += words[i];
    }
    return text;
}

}  // namespace detail

inline SynthData synth_data(const SynthSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);

    const std::size_t topic_words =
        static_cast<std::size_t>(spec.topics) * static_cast<std::size_t>(spec.keywords_per_topic);
    std::vector<std::string> pool =
        detail::synth_word_pool(topic_words + static_cast<std::size_t>(spec.noise_vocab), rng);
    std::vector<std::vector<std::string>> topic(static_cast<std::size_t>(spec.topics));
    for (int t = 0; t < spec.topics; ++t) {
        auto begin = pool.begin() + static_cast<std::ptrdiff_t>(t) * spec.keywords_per_topic;
        topic[static_cast<std::size_t>(t)].assign(begin, begin + spec.keywords_per_topic);
    }
    std::vector<std::string> noise(pool.begin() + static_cast<std::ptrdiff_t>(topic_words),
                                   pool.end());

    std::uniform_int_distribution<int> pick_topic(0, spec.topics - 1);
    std::uniform_int_distribution<int> query_len(spec.query_len_min, spec.query_len_max);
    std::uniform_int_distribution<int> doc_len(spec.doc_len_min, spec.doc_len_max);
    auto split_len = [&](int len) {
        int n_noise = static_cast<int>(std::lround(len * spec.noise_ratio));
        if (n_noise >= len) n_noise = len - 1;
        return std::pair<int, int>{len - n_noise, n_noise};
    };
    auto noise_words = [&](int n) {
        return detail::sample_without_replacement(noise, static_cast<std::size_t>(n), rng);
    };

    struct PendingDoc {
        std::string text;
        int relevant_for = -1;  // query index, or -1 for a distractor
    };
    std::vector<PendingDoc> docs;
    docs.reserve(static_cast<std::size_t>(spec.corpus_size));

    SynthData data;
    std::vector<int> first_positive(static_cast<std::size_t>(spec.num_queries), -1);
    for (int q = 0; q < spec.num_queries; ++q) {
        int t = pick_topic(rng);
        auto [q_content, q_noise] = split_len(query_len(rng));
        std::vector<std::string> content = detail::sample_without_replacement(
            topic[static_cast<std::size_t>(t)], static_cast<std::size_t>(q_content), rng);

        std::vector<std::string> query_words = content;
        for (auto& w : noise_words(q_noise)) query_words.push_back(std::move(w));
        char qid[16];
        std::snprintf(qid, sizeof(qid), "q%04d", q);
        data.queries.push_back({qid, detail::join_words(std::move(query_words), rng)});

        for (int r = 0; r < spec.relevant_per_query; ++r) {
            auto [d_content, d_noise] = split_len(doc_len(rng));
            // Reuse the query's content words, topped up with other words
            // from the same topic.
            std::vector<std::string> doc_words(
                content.begin(),
                content.begin() + std::min<std::size_t>(content.size(),
                                                        static_cast<std::size_t>(d_content)));
            if (static_cast<int>(doc_words.size()) < d_content) {
                std::set<std::string> used(content.begin(), content.end());
                std::vector<std::string> rest;
                for (const auto& w : topic[static_cast<std::size_t>(t)]) {
                    if (!used.count(w)) rest.push_back(w);
                }
                for (auto& w : detail::sample_without_replacement(
                         rest, static_cast<std::size_t>(d_content) - doc_words.size(), rng)) {
                    doc_words.push_back(std::move(w));
                }
            }
            for (auto& w : noise_words(d_noise)) doc_words.push_back(std::move(w));
            PendingDoc doc;
            doc.text = detail::join_words(std::move(doc_words), rng);
            doc.relevant_for = q;
            if (first_positive[static_cast<std::size_t>(q)] < 0) {
                first_positive[static_cast<std::size_t>(q)] = static_cast<int>(docs.size());
            }
            docs.push_back(std::move(doc));
        }
    }

    while (docs.size() < static_cast<std::size_t>(spec.corpus_size)) {
        int t = pick_topic(rng);
        auto [d_content, d_noise] = split_len(doc_len(rng));
        std::vector<std::string> doc_words = detail::sample_without_replacement(
            topic[static_cast<std::size_t>(t)], static_cast<std::size_t>(d_content), rng);
        for (auto& w : noise_words(d_noise)) doc_words.push_back(std::move(w));
        docs.push_back({detail::join_words(std::move(doc_words), rng), -1});
    }

    // Shuffle the corpus so doc ids are uninformative, then assign ids and
    // derive qrels/pairs from the surviving positions.
    std::vector<std::size_t> order(docs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::string> id_of(docs.size());
    data.corpus.reserve(docs.size());
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const PendingDoc& doc = docs[order[pos]];
        char did[16];
        std::snprintf(did, sizeof(did), "d%05d", static_cast<int>(pos));
        id_of[order[pos]] = did;
        data.corpus.push_back({did, doc.text});
        if (doc.relevant_for >= 0) {
            data.qrels.relevant[data.queries[static_cast<std::size_t>(doc.relevant_for)].id]
                .insert(did);
        }
    }
    for (int q = 0; q < spec.num_queries; ++q) {
        const PendingDoc& positive = docs[static_cast<std::size_t>(first_positive[q])];
        data.pairs.emplace_back(data.queries[static_cast<std::size_t>(q)].text, positive.text);
    }
    return data;
}

// Writes corpus.jsonl, queries.jsonl, qrels.tsv and pairs.tsv under dir, each
// stamped with the seed and spec hash.
inline void write_synth_data(const SynthData& data, const SynthSpec& spec,
                             const std::string& dir) {
    ensure_dir(dir);
    std::string header = seed_header(spec.seed, config_hash_hex(canonical_spec_string(spec)));
    write_docs_jsonl(dir + "/corpus.jsonl", data.corpus, header);
    write_docs_jsonl(dir + "/queries.jsonl", data.queries, header);
    write_qrels_tsv(dir + "/qrels.tsv", data.qrels, header);
    write_pairs_tsv(dir + "/pairs.tsv", data.pairs, header);
}

}  // namespace ceinfuse
