#pragma once

#include <algorithm>
#include <chrono>
#include <stdexcept>
#include <string>
#include <vector>

#include "ceinfuse/model.hpp"

// Wall-clock embedding throughput. Timings are inherently non-deterministic,
// so bench results are kept out of the deterministic report files.

namespace ceinfuse {

struct BenchResult {
    std::string model_id;
    std::size_t corpus_size = 0;
    std::size_t batch = 0;
    int runs = 0;
    std::vector<double> run_seconds;
    double median_seconds = 0.0;
    double sentences_per_sec = 0.0;
    double checksum = 0.0;  // anchors the computed embeddings against dead-code elimination
};

inline double median_of(std::vector<double> v) {
    if (v.empty()) throw std::invalid_argument("median_of: empty sample");
    std::sort(v.begin(), v.end());
    std::size_t mid = v.size() / 2;
    if (v.size() % 2 == 1) return v[mid];
    return 0.5 * (v[mid - 1] + v[mid]);
}

// Times `runs` full passes (after one untimed warmup pass) of embedding every
// text at the model's final layer, processing `batch` sentences per chunk.
inline BenchResult time_embedding(const EncoderWeights& w, const Vocab& vocab,
                                  const std::vector<std::string>& texts, std::size_t batch,
                                  int runs, std::size_t max_len, const std::string& model_id) {
    if (texts.empty()) throw std::invalid_argument("time_embedding: empty corpus");
    if (batch == 0) throw std::invalid_argument("time_embedding: batch must be >= 1");
    if (runs < 5) throw std::invalid_argument("time_embedding: need at least 5 timed runs");

    const int final_layer = w.config.num_layers;
    const bool self_pair = w.config.role == ModelRole::CrossEncoder;
    BenchResult result;
    result.model_id = model_id;
    result.corpus_size = texts.size();
    result.batch = batch;
    result.runs = runs;

    auto one_pass = [&]() {
        double sum = 0.0;
        for (std::size_t start = 0; start < texts.size(); start += batch) {
            std::size_t end = std::min(start + batch, texts.size());
            for (std::size_t i = start; i < end; ++i) {
                std::vector<float> emb =
                    self_pair ? embed_sentence_ce(w, vocab, texts[i], final_layer, max_len)
                              : embed_sentence_de(w, vocab, texts[i], final_layer, max_len);
                sum += static_cast<double>(emb[0]);
            }
        }
        return sum;
    };

    result.checksum = one_pass();  // warmup
    for (int r = 0; r < runs; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        result.checksum += one_pass();
        auto t1 = std::chrono::steady_clock::now();
        result.run_seconds.push_back(std::chrono::duration<double>(t1 - t0).count());
    }
    result.median_seconds = median_of(result.run_seconds);
    result.sentences_per_sec =
        result.median_seconds > 0.0
            ? static_cast<double>(texts.size()) / result.median_seconds
            : 0.0;
    return result;
}

// Median-over-median throughput ratio slow/fast. Comparing different corpora
// or batch sizes is a usage error.
inline double speedup(const BenchResult& baseline, const BenchResult& fast) {
    if (baseline.corpus_size != fast.corpus_size || baseline.batch != fast.batch) {
        throw std::invalid_argument(
            "speedup: benchmarks ran on different corpora or batch sizes");
    }
    if (fast.median_seconds <= 0.0 || baseline.median_seconds <= 0.0) {
        throw std::invalid_argument("speedup: non-positive median timing");
    }
    return baseline.median_seconds / fast.median_seconds;
}

}  // namespace ceinfuse
