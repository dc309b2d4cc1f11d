#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ceinfuse/model.hpp"
#include "ceinfuse/types.hpp"

// Dense retrieval: an exact (brute-force) cosine index over unit-normalized
// sentence embeddings, plus cross-encoder re-ranking of the head of a
// candidate list.

namespace ceinfuse {

struct EmbeddingIndex {
    std::vector<std::string> doc_ids;
    Matrix embeddings;     // N x d, rows unit length
    std::string model_id;  // provenance only
    int layer = -1;
    std::string pooling = "mean";
};

struct ScoredDoc {
    std::string doc_id;
    float score = 0.0f;
};

enum class SearchStage { Retrieved, Reranked };

inline const char* stage_name(SearchStage s) {
    return s == SearchStage::Retrieved ? "retrieve" : "retrieve+rerank";
}

struct SearchResult {
    std::vector<ScoredDoc> hits;  // rank order
    SearchStage stage = SearchStage::Retrieved;
};

namespace detail {

inline void normalize_unit(float* v, std::size_t d, const std::string& what) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += static_cast<double>(v[j]) * v[j];
    double n = std::sqrt(sq);
    if (!(n > 0.0)) throw std::runtime_error("zero-norm embedding for " + what);
    float inv = static_cast<float>(1.0 / n);
    for (std::size_t j = 0; j < d; ++j) v[j] *= inv;
}

}  // namespace detail

// Builds an index by calling `embed(text)` for every document. The embedder
// decides model, layer and pooling; `layer`/`model_id` are recorded verbatim.
template <typename EmbedFn>
EmbeddingIndex build_index(const std::vector<Doc>& corpus, EmbedFn&& embed, int layer,
                           const std::string& model_id) {
    if (corpus.empty()) throw std::invalid_argument("build_index: empty corpus");
    EmbeddingIndex index;
    index.layer = layer;
    index.model_id = model_id;
    index.doc_ids.reserve(corpus.size());

    std::vector<float> first = embed(corpus.front().text);
    if (first.empty()) throw std::invalid_argument("build_index: embedder returned width 0");
    index.embeddings = Matrix(corpus.size(), first.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Doc& doc = corpus[i];
        std::vector<float> emb = i == 0 ? std::move(first) : embed(doc.text);
        if (emb.size() != index.embeddings.cols) {
            throw std::runtime_error("build_index: inconsistent embedding width for doc '" +
                                     doc.id + "'");
        }
        std::copy(emb.begin(), emb.end(), index.embeddings.row(i));
        detail::normalize_unit(index.embeddings.row(i), index.embeddings.cols,
                               "doc '" + doc.id + "'");
        index.doc_ids.push_back(doc.id);
    }
    return index;
}

// Convenience wrapper: dual-encoder embeddings pooled at `layer`.
inline EmbeddingIndex build_index_de(const EncoderWeights& w, const Vocab& vocab,
                                     const std::vector<Doc>& corpus, int layer,
                                     std::size_t max_len, const std::string& model_id) {
    check_layer_index(w, layer);
    return build_index(
        corpus,
        [&](const std::string& text) { return embed_sentence_de(w, vocab, text, layer, max_len); },
        layer, model_id);
}

// Convenience wrapper: self-paired cross-encoder embeddings pooled at `layer`.
inline EmbeddingIndex build_index_ce(const EncoderWeights& w, const Vocab& vocab,
                                     const std::vector<Doc>& corpus, int layer,
                                     std::size_t max_len, const std::string& model_id) {
    check_layer_index(w, layer);
    return build_index(
        corpus,
        [&](const std::string& text) { return embed_sentence_ce(w, vocab, text, layer, max_len); },
        layer, model_id);
}

// Exact top-k by cosine; ties broken by doc id ascending so results are
// deterministic. Returns fewer than k hits when the corpus is smaller.
inline SearchResult search(const EmbeddingIndex& index, std::vector<float> query_emb,
                           std::size_t k) {
    if (k == 0) throw std::invalid_argument("search: k must be >= 1");
    if (query_emb.size() != index.embeddings.cols) {
        throw std::invalid_argument("search: query width " + std::to_string(query_emb.size()) +
                                    " does not match index width " +
                                    std::to_string(index.embeddings.cols));
    }
    detail::normalize_unit(query_emb.data(), query_emb.size(), "query");

    const std::size_t n = index.embeddings.rows;
    std::vector<std::size_t> ranked(n);
    std::vector<float> scores(n);
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = index.embeddings.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < query_emb.size(); ++j) {
            dot += static_cast<double>(row[j]) * query_emb[j];
        }
        scores[i] = static_cast<float>(dot);
        ranked[i] = i;
    }
    std::size_t keep = std::min(k, n);
    auto better = [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return index.doc_ids[a] < index.doc_ids[b];
    };
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                      ranked.end(), better);

    SearchResult result;
    result.stage = SearchStage::Retrieved;
    result.hits.reserve(keep);
    for (std::size_t i = 0; i < keep; ++i) {
        result.hits.push_back({index.doc_ids[ranked[i]], scores[ranked[i]]});
    }
    return result;
}

// Re-scores the top `depth` hits with the cross encoder and re-sorts them by
// that score (stable, so CE ties keep retrieval order); the tail below depth
// is appended unchanged. `depth` is clamped to the candidate count.
inline SearchResult rerank(const std::string& query_text, const SearchResult& retrieved,
                           const EncoderWeights& ce, const Vocab& vocab,
                           const std::unordered_map<std::string, std::string>& doc_texts,
                           std::size_t depth, std::size_t max_len) {
    if (!ce.has_ce_head()) throw std::invalid_argument("rerank: model has no cross-encoder head");
    if (depth == 0) throw std::invalid_argument("rerank: depth must be >= 1");
    depth = std::min(depth, retrieved.hits.size());

    SearchResult result;
    result.stage = SearchStage::Reranked;
    result.hits = retrieved.hits;
    std::vector<std::size_t> order(depth);
    std::vector<float> ce_scores(depth);
    for (std::size_t i = 0; i < depth; ++i) {
        const std::string& id = retrieved.hits[i].doc_id;
        auto it = doc_texts.find(id);
        if (it == doc_texts.end()) {
            throw std::invalid_argument("rerank: no text for doc id '" + id + "'");
        }
        ce_scores[i] = ce_score(ce, vocab, query_text, it->second, max_len);
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return ce_scores[a] > ce_scores[b]; });
    for (std::size_t i = 0; i < depth; ++i) {
        result.hits[i] = {retrieved.hits[order[i]].doc_id, ce_scores[order[i]]};
    }
    return result;
}

// On-disk index format "NDX1": u32 LE header length, then a text header
// (doc ids one per line after the key=value block), then f32 LE rows.
inline void save_index(const EmbeddingIndex& index, const std::string& path) {
    std::ostringstream header;
    header << "model_id=" << index.model_id << "\n";
    header << "layer=" << index.layer << "\n";
    header << "pooling=" << index.pooling << "\n";
    header << "docs=" << index.embeddings.rows << "\n";
    header << "dim=" << index.embeddings.cols << "\n";
    for (const auto& id : index.doc_ids) {
        if (id.find('\n') != std::string::npos) {
            throw std::invalid_argument("save_index: doc id contains a newline");
        }
        header << id << "\n";
    }
    std::string htext = header.str();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_index: cannot open " + path);
    out.write("NDX1", 4);
    std::uint32_t hlen = static_cast<std::uint32_t>(htext.size());
    unsigned char lenb[4] = {static_cast<unsigned char>(hlen & 0xff),
                             static_cast<unsigned char>((hlen >> 8) & 0xff),
                             static_cast<unsigned char>((hlen >> 16) & 0xff),
                             static_cast<unsigned char>((hlen >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(lenb), 4);
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    if constexpr (std::endian::native == std::endian::little) {
        out.write(reinterpret_cast<const char*>(index.embeddings.data.data()),
                  static_cast<std::streamsize>(index.embeddings.size() * sizeof(float)));
    } else {
        for (float v : index.embeddings.data) {
            std::uint32_t bits;
            std::memcpy(&bits, &v, 4);
            unsigned char b[4] = {static_cast<unsigned char>(bits & 0xff),
                                  static_cast<unsigned char>((bits >> 8) & 0xff),
                                  static_cast<unsigned char>((bits >> 16) & 0xff),
                                  static_cast<unsigned char>((bits >> 24) & 0xff)};
            out.write(reinterpret_cast<const char*>(b), 4);
        }
    }
    if (!out) throw std::runtime_error("save_index: write failed for " + path);
}

inline EmbeddingIndex load_index(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_index: cannot open " + path);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (raw.size() < 8 || raw.compare(0, 4, "NDX1") != 0) {
        throw std::runtime_error("load_index: " + path + " is not an NDX1 index");
    }
    const auto* b = reinterpret_cast<const unsigned char*>(raw.data());
    std::size_t hlen = static_cast<std::size_t>(b[4]) | (static_cast<std::size_t>(b[5]) << 8) |
                       (static_cast<std::size_t>(b[6]) << 16) |
                       (static_cast<std::size_t>(b[7]) << 24);
    if (8 + hlen > raw.size()) throw std::runtime_error("load_index: truncated header");

    EmbeddingIndex index;
    std::istringstream hs(raw.substr(8, hlen));
    std::string line;
    std::size_t docs = 0, dim = 0;
    int kv_lines = 0;
    while (kv_lines < 5 && std::getline(hs, line)) {
        auto eq = line.find('=');
        if (eq == std::string::npos) throw std::runtime_error("load_index: malformed header");
        std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        if (key == "model_id") index.model_id = val;
        else if (key == "layer") index.layer = std::stoi(val);
        else if (key == "pooling") index.pooling = val;
        else if (key == "docs") docs = std::stoull(val);
        else if (key == "dim") dim = std::stoull(val);
        else throw std::runtime_error("load_index: unexpected header key '" + key + "'");
        ++kv_lines;
    }
    while (std::getline(hs, line)) index.doc_ids.push_back(line);
    if (index.doc_ids.size() != docs) {
        throw std::runtime_error("load_index: doc id count does not match header");
    }
    std::size_t nbytes = docs * dim * sizeof(float);
    if (8 + hlen + nbytes != raw.size()) {
        throw std::runtime_error("load_index: embedding blob size mismatch");
    }
    index.embeddings = Matrix(docs, dim);
    if constexpr (std::endian::native == std::endian::little) {
        std::memcpy(index.embeddings.data.data(), raw.data() + 8 + hlen, nbytes);
    } else {
        const unsigned char* src = b + 8 + hlen;
        for (std::size_t i = 0; i < docs * dim; ++i) {
            std::uint32_t bits = static_cast<std::uint32_t>(src[4 * i]) |
                                 (static_cast<std::uint32_t>(src[4 * i + 1]) << 8) |
                                 (static_cast<std::uint32_t>(src[4 * i + 2]) << 16) |
                                 (static_cast<std::uint32_t>(src[4 * i + 3]) << 24);
            std::memcpy(&index.embeddings.data[i], &bits, 4);
        }
    }
    return index;
}

inline std::unordered_map<std::string, std::string> corpus_text_map(
    const std::vector<Doc>& corpus) {
    std::unordered_map<std::string, std::string> map;
    map.reserve(corpus.size());
    for (const Doc& doc : corpus) {
        if (!map.emplace(doc.id, doc.text).second) {
            throw std::invalid_argument("duplicate doc id '" + doc.id + "'");
        }
    }
    return map;
}

// Retrieve k_retrieve candidates, re-rank that head with the cross encoder,
// and return the top k_final.
inline SearchResult retrieve_and_rerank(const std::string& query_text,
                                        const std::vector<float>& query_emb,
                                        const EmbeddingIndex& index, const EncoderWeights& ce,
                                        const Vocab& vocab,
                                        const std::unordered_map<std::string, std::string>& docs,
                                        std::size_t k_retrieve, std::size_t k_final,
                                        std::size_t max_len) {
    if (k_final > k_retrieve) {
        throw std::invalid_argument("retrieve_and_rerank: k_final must be <= k_retrieve");
    }
    SearchResult retrieved = search(index, query_emb, k_retrieve);
    SearchResult result = rerank(query_text, retrieved, ce, vocab, docs,
                                 std::max<std::size_t>(retrieved.hits.size(), 1), max_len);
    if (result.hits.size() > k_final) result.hits.resize(k_final);
    return result;
}

}  // namespace ceinfuse
