#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "ceinfuse/bench.hpp"
#include "ceinfuse/bm25.hpp"
#include "ceinfuse/checkpoint.hpp"
#include "ceinfuse/dataio.hpp"
#include "ceinfuse/eval.hpp"
#include "ceinfuse/retrieval.hpp"
#include "ceinfuse/synth.hpp"
#include "ceinfuse/training.hpp"
#include "ceinfuse/types.hpp"

// End-to-end run: data -> vocab -> BM25 mining -> cross-encoder training ->
// layer sweeps -> infusion -> dual-encoder training -> retrieval + re-ranking
// -> metrics/significance -> benchmark -> report. Every stage leaves its
// artifacts under the run directory and can be skipped on resume when they
// already exist. Timings go to bench.csv only, so the report files are
// bit-identical across runs with the same seed and config.

namespace ceinfuse {

struct PipelineConfig {
    std::string out_dir;

    // Data: generated when use_synth, otherwise ingested from these paths.
    bool use_synth = true;
    SynthSpec synth;
    std::string corpus_path, queries_path, qrels_path;

    std::size_t vocab_size = 1000;

    // Architecture (widths shared by every model).
    int hidden = 64;
    int heads = 4;
    int ff = 256;
    int ce_layers = 4;
    int de_baseline_layers = 4;
    int de_small_layers = 2;
    int k_copy = 1;
    std::size_t max_len = 32;

    TrainConfig ce_train;
    TrainConfig de_train;

    std::size_t n_neg = 4;
    std::size_t mine_window = 50;
    std::size_t eval_k = 10;
    std::size_t rerank_depth = 50;
    std::size_t sweep_queries = 0;  // 0 = sweep every query

    bool run_bench = true;
    int bench_runs = 5;
    std::size_t bench_batch = 32;
    std::size_t bench_corpus = 200;

    bool resume = false;
    std::uint64_t seed = 42;

    std::map<std::string, std::string> canonical() const {
        std::map<std::string, std::string> kv;
        kv["use_synth"] = use_synth ? "1" : "0";
        if (use_synth) {
            kv["synth"] = canonical_spec_string(synth);
        } else {
            kv["corpus"] = corpus_path;
            kv["queries"] = queries_path;
            kv["qrels"] = qrels_path;
        }
        kv["vocab_size"] = std::to_string(vocab_size);
        kv["hidden"] = std::to_string(hidden);
        kv["heads"] = std::to_string(heads);
        kv["ff"] = std::to_string(ff);
        kv["ce_layers"] = std::to_string(ce_layers);
        kv["de_baseline_layers"] = std::to_string(de_baseline_layers);
        kv["de_small_layers"] = std::to_string(de_small_layers);
        kv["k_copy"] = std::to_string(k_copy);
        kv["max_len"] = std::to_string(max_len);
        auto train_kv = [&](const char* prefix, const TrainConfig& t) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "batch=%d epochs=%d lr=%.10g warmup=%.10g dec=%.10g "
                                            "scale=%.10g",
                          t.batch, t.epochs, t.lr, t.warmup_frac, t.weight_decay, t.scale);
            kv[prefix] = buf;
        };
        train_kv("ce_train", ce_train);
        train_kv("de_train", de_train);
        kv["n_neg"] = std::to_string(n_neg);
        kv["mine_window"] = std::to_string(mine_window);
        kv["eval_k"] = std::to_string(eval_k);
        kv["rerank_depth"] = std::to_string(rerank_depth);
        kv["sweep_queries"] = std::to_string(sweep_queries);
        kv["seed"] = std::to_string(seed);
        return kv;
    }
};

struct PipelineResult {
    std::string out_dir;
    EvalReport report;
    std::map<std::string, std::string> checkpoints;  // model id -> path
    double bench_speedup = 0.0;
    bool ran_bench = false;
};

namespace detail {

inline bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

inline void stage_log(const char* stage, const std::string& msg) {
    std::fprintf(stdout, "[%s] %s\n", stage, msg.c_str());
    std::fflush(stdout);
}

template <typename Fn>
void run_stage(const char* name, const std::string& out_dir, Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        throw std::runtime_error("stage '" + std::string(name) + "' failed: " + e.what() +
                                 " (partial artifacts kept in " + out_dir + ")");
    }
}

}  // namespace detail

inline PipelineResult run_pipeline(const PipelineConfig& cfg) {
    if (cfg.out_dir.empty()) throw std::invalid_argument("run_pipeline: out_dir is required");
    if (cfg.eval_k == 0 || cfg.rerank_depth < cfg.eval_k) {
        throw std::invalid_argument("run_pipeline: need eval_k >= 1 and rerank_depth >= eval_k");
    }
    if (cfg.k_copy > cfg.de_small_layers || cfg.k_copy > cfg.ce_layers) {
        throw std::invalid_argument("run_pipeline: k_copy exceeds a model depth");
    }
    ensure_dir(cfg.out_dir);
    ensure_dir(cfg.out_dir + "/data");
    ensure_dir(cfg.out_dir + "/models");
    ensure_dir(cfg.out_dir + "/results");

    const std::string config_hash = config_hash_hex(canonical_config_string(cfg.canonical()));
    const std::string header = seed_header(cfg.seed, config_hash);
    const std::string config_path = cfg.out_dir + "/pipeline_config.txt";
    if (cfg.resume && detail::file_exists(config_path)) {
        auto stored = read_config_file(config_path);
        auto it = stored.find("config_hash");
        if (it != stored.end() && it->second != config_hash) {
            throw std::runtime_error(
                "run_pipeline: resume config mismatch in " + cfg.out_dir +
                " (stored hash " + it->second + ", current " + config_hash +
                "); use a fresh run directory");
        }
    }
    {
        auto kv = cfg.canonical();
        kv["config_hash"] = config_hash;
        write_config_file(config_path, kv, header);
    }
    auto keep = [&](const std::string& path) { return cfg.resume && detail::file_exists(path); };

    PipelineResult result;
    result.out_dir = cfg.out_dir;

    // -- data ---------------------------------------------------------------
    const std::string data_dir = cfg.out_dir + "/data";
    std::vector<Doc> corpus, queries;
    Qrels qrels;
    detail::run_stage("data", cfg.out_dir, [&]() {
        const std::string corpus_file = data_dir + "/corpus.jsonl";
        if (keep(corpus_file)) {
            detail::stage_log("data", "reusing " + data_dir);
        } else if (cfg.use_synth) {
            SynthSpec spec = cfg.synth;
            spec.seed = cfg.seed;
            SynthData synth = synth_data(spec);
            write_synth_data(synth, spec, data_dir);
            detail::stage_log("data", "generated " + std::to_string(synth.corpus.size()) +
                                          " docs, " + std::to_string(synth.queries.size()) +
                                          " queries");
        } else {
            std::vector<Doc> c = read_docs_jsonl(cfg.corpus_path);
            std::vector<Doc> q = read_docs_jsonl(cfg.queries_path);
            Qrels qr = read_qrels_tsv(cfg.qrels_path);
            std::vector<std::pair<std::string, std::string>> pairs;
            auto ids = corpus_text_map(c);
            for (const Doc& query : q) {
                auto it = qr.relevant.find(query.id);
                if (it == qr.relevant.end() || it->second.empty()) continue;
                const std::string& pos_id = *it->second.begin();
                auto doc = ids.find(pos_id);
                if (doc == ids.end()) {
                    throw std::runtime_error("qrels references unknown doc id '" + pos_id + "'");
                }
                pairs.emplace_back(query.text, doc->second);
            }
            write_docs_jsonl(corpus_file, c, header);
            write_docs_jsonl(data_dir + "/queries.jsonl", q, header);
            write_qrels_tsv(data_dir + "/qrels.tsv", qr, header);
            write_pairs_tsv(data_dir + "/pairs.tsv", pairs, header);
            detail::stage_log("data", "ingested " + std::to_string(c.size()) + " docs, " +
                                          std::to_string(q.size()) + " queries");
        }
        corpus = read_docs_jsonl(corpus_file);
        queries = read_docs_jsonl(data_dir + "/queries.jsonl");
        qrels = read_qrels_tsv(data_dir + "/qrels.tsv");
        if (corpus.empty() || queries.empty()) {
            throw std::runtime_error("empty corpus or query set");
        }
    });

    // -- vocab --------------------------------------------------------------
    const std::string vocab_path = cfg.out_dir + "/vocab.txt";
    Vocab vocab;
    detail::run_stage("vocab", cfg.out_dir, [&]() {
        if (!keep(vocab_path)) {
            std::vector<std::string> texts;
            texts.reserve(corpus.size());
            for (const Doc& doc : corpus) texts.push_back(doc.text);
            save_vocab(vocab_path, build_vocab_tokens(texts, cfg.vocab_size));
        }
        vocab = load_vocab(vocab_path);
        detail::stage_log("vocab", std::to_string(vocab.size()) + " tokens");
    });

    // -- hard-negative mining ----------------------------------------------
    const std::string mined_path = cfg.out_dir + "/mined.tsv";
    std::vector<TrainExample> examples;
    detail::run_stage("mine", cfg.out_dir, [&]() {
        if (keep(mined_path)) {
            examples = read_examples_tsv(mined_path);
            detail::stage_log("mine", "reusing " + std::to_string(examples.size()) + " examples");
            return;
        }
        std::vector<std::string> texts;
        texts.reserve(corpus.size());
        std::unordered_map<std::string, int> pos_of;
        for (const Doc& doc : corpus) {
            pos_of.emplace(doc.id, static_cast<int>(texts.size()));
            texts.push_back(doc.text);
        }
        Bm25Index index = bm25_build(texts);
        std::vector<MiningPair> pairs;
        for (const Doc& query : queries) {
            auto it = qrels.relevant.find(query.id);
            if (it == qrels.relevant.end() || it->second.empty()) continue;
            MiningPair mp;
            mp.query = query.text;
            for (const std::string& did : it->second) {
                auto pos = pos_of.find(did);
                if (pos == pos_of.end()) {
                    throw std::runtime_error("qrels references unknown doc id '" + did + "'");
                }
                mp.positive_ids.push_back(pos->second);
            }
            pairs.push_back(std::move(mp));
        }
        if (pairs.empty()) throw std::runtime_error("no judged queries to mine negatives for");
        examples = mine_hard_negatives(index, texts, pairs, cfg.n_neg, cfg.mine_window,
                                       cfg.seed + 31);
        write_examples_tsv(mined_path, examples, header);
        detail::stage_log("mine", std::to_string(examples.size()) + " examples, " +
                                      std::to_string(cfg.n_neg) + " negatives each");
    });

    // -- models -------------------------------------------------------------
    ModelConfig base;
    base.hidden = cfg.hidden;
    base.heads = cfg.heads;
    base.ff = cfg.ff;
    base.vocab_size = static_cast<int>(vocab.size());
    base.max_positions = static_cast<int>(cfg.max_len);

    auto model_path = [&](const std::string& id) {
        return cfg.out_dir + "/models/" + id + ".ntc";
    };
    auto loss_path = [&](const std::string& id) {
        return cfg.out_dir + "/models/" + id + "_loss.csv";
    };
    auto save_model = [&](const std::string& id, const EncoderWeights& w,
                          const std::map<std::string, std::string>& extra) {
        CheckpointMeta meta;
        meta.vocab_path = vocab_path;
        meta.extra = extra;
        meta.extra["seed"] = std::to_string(cfg.seed);
        meta.extra["config"] = config_hash;
        save_checkpoint(w, model_path(id), meta);
        result.checkpoints[id] = model_path(id);
    };

    TrainConfig ce_train = cfg.ce_train;
    ce_train.max_len = cfg.max_len;
    TrainConfig de_train = cfg.de_train;
    de_train.max_len = cfg.max_len;

    EncoderWeights ce;
    detail::run_stage("train-ce", cfg.out_dir, [&]() {
        if (keep(model_path("ce"))) {
            ce = load_checkpoint(model_path("ce"));
            detail::stage_log("train-ce", "reusing " + model_path("ce"));
            return;
        }
        ModelConfig cecfg = base;
        cecfg.num_layers = cfg.ce_layers;
        cecfg.role = ModelRole::CrossEncoder;
        ce = init_random(cecfg, cfg.seed + 11);
        TrainConfig t = ce_train;
        t.seed = cfg.seed + 21;
        TrainResult tr = train(ce, TrainRole::CrossEncoderBinary, examples, t, vocab);
        write_loss_curve_csv(loss_path("ce"), tr.curve, header);
        save_model("ce", ce, {{"objective", "binary"}});
        detail::stage_log("train-ce", std::to_string(tr.steps) + " steps, final loss " +
                                          std::to_string(tr.curve.back().loss));
    });

    EncoderWeights de_baseline;
    detail::run_stage("train-de-baseline", cfg.out_dir, [&]() {
        const std::string id = "de-baseline";
        if (keep(model_path(id))) {
            de_baseline = load_checkpoint(model_path(id));
            detail::stage_log("train-de-baseline", "reusing " + model_path(id));
            return;
        }
        ModelConfig dcfg = base;
        dcfg.num_layers = cfg.de_baseline_layers;
        dcfg.role = ModelRole::DualEncoder;
        de_baseline = init_random(dcfg, cfg.seed + 12);
        TrainConfig t = de_train;
        t.seed = cfg.seed + 22;
        TrainResult tr = train(de_baseline, TrainRole::DualEncoderMnrl, examples, t, vocab);
        write_loss_curve_csv(loss_path(id), tr.curve, header);
        save_model(id, de_baseline, {{"objective", "mnrl"}});
        detail::stage_log("train-de-baseline", std::to_string(tr.steps) + " steps, final loss " +
                                                   std::to_string(tr.curve.back().loss));
    });

    // -- layer sweeps --------------------------------------------------------
    std::vector<Doc> sweep_queries = queries;
    if (cfg.sweep_queries > 0 && sweep_queries.size() > cfg.sweep_queries) {
        sweep_queries.resize(cfg.sweep_queries);
    }
    EvalReport report;
    report.k = cfg.eval_k;
    detail::run_stage("sweep", cfg.out_dir, [&]() {
        report.sweeps["ce"] = layer_sweep(ce, ModelRole::CrossEncoder, corpus, sweep_queries,
                                          qrels, cfg.eval_k, vocab, cfg.max_len);
        report.sweeps["de-baseline"] =
            layer_sweep(de_baseline, ModelRole::DualEncoder, corpus, sweep_queries, qrels,
                        cfg.eval_k, vocab, cfg.max_len);
        for (const auto& [model, rows] : report.sweeps) {
            std::string best = "layer 0";
            double best_h = -1.0;
            for (const LayerMetrics& m : rows) {
                if (m.hits_at_k > best_h) {
                    best_h = m.hits_at_k;
                    best = "layer " + std::to_string(m.layer);
                }
            }
            detail::stage_log("sweep", model + ": best " + best + " hits@" +
                                           std::to_string(cfg.eval_k) + " = " +
                                           std::to_string(best_h));
        }
    });

    // -- infusion and small dual encoders ------------------------------------
    EncoderWeights de2_ce, de2_rand;
    detail::run_stage("infuse", cfg.out_dir, [&]() {
        if (keep(model_path("de2-ce"))) {
            de2_ce = load_checkpoint(model_path("de2-ce"));
            detail::stage_log("infuse", "reusing " + model_path("de2-ce"));
            return;
        }
        EncoderWeights infused =
            infuse(ce, static_cast<std::size_t>(cfg.de_small_layers),
                   static_cast<std::size_t>(cfg.k_copy), cfg.seed + 13);
        std::vector<std::string> probes;
        for (std::size_t i = 0; i < corpus.size() && probes.size() < 8; ++i) {
            probes.push_back(corpus[i].text);
        }
        InfusionReport verify = verify_infusion(ce, infused,
                                                static_cast<std::size_t>(cfg.k_copy), probes,
                                                vocab, cfg.max_len);
        if (!verify.pass) {
            throw std::runtime_error("infusion verification failed: max deviation " +
                                     std::to_string(verify.max_dev) + " at hidden index " +
                                     std::to_string(verify.first_bad_index));
        }
        detail::stage_log("infuse", "copied embeddings + " + std::to_string(cfg.k_copy) +
                                        " layer(s), max deviation " +
                                        std::to_string(verify.max_dev));
        TrainConfig t = de_train;
        t.seed = cfg.seed + 23;
        TrainResult tr = train(infused, TrainRole::DualEncoderMnrl, examples, t, vocab);
        write_loss_curve_csv(loss_path("de2-ce"), tr.curve, header);
        de2_ce = infused;
        save_model("de2-ce", de2_ce,
                   {{"objective", "mnrl"}, {"infused_from", "ce"},
                    {"k_copy", std::to_string(cfg.k_copy)}});
        detail::stage_log("infuse", "trained de2-ce, final loss " +
                                        std::to_string(tr.curve.back().loss));
    });
    detail::run_stage("train-de2-rand", cfg.out_dir, [&]() {
        const std::string id = "de2-rand";
        if (keep(model_path(id))) {
            de2_rand = load_checkpoint(model_path(id));
            detail::stage_log("train-de2-rand", "reusing " + model_path(id));
            return;
        }
        ModelConfig dcfg = base;
        dcfg.num_layers = cfg.de_small_layers;
        dcfg.role = ModelRole::DualEncoder;
        de2_rand = init_random(dcfg, cfg.seed + 14);
        TrainConfig t = de_train;
        t.seed = cfg.seed + 24;
        TrainResult tr = train(de2_rand, TrainRole::DualEncoderMnrl, examples, t, vocab);
        write_loss_curve_csv(loss_path(id), tr.curve, header);
        save_model(id, de2_rand, {{"objective", "mnrl"}});
        detail::stage_log("train-de2-rand", std::to_string(tr.steps) + " steps, final loss " +
                                                std::to_string(tr.curve.back().loss));
    });

    // -- retrieval + re-ranking ----------------------------------------------
    const std::string dataset =
        cfg.use_synth ? "synth" : std::filesystem::path(cfg.corpus_path).stem().string();
    std::map<std::string, RunResults> retrieve_runs, rerank_runs;
    detail::run_stage("retrieve", cfg.out_dir, [&]() {
        auto doc_texts = corpus_text_map(corpus);
        const std::size_t k_retrieve = std::max(cfg.eval_k, cfg.rerank_depth);
        std::vector<std::pair<std::string, const EncoderWeights*>> models = {
            {"de-baseline", &de_baseline}, {"de2-rand", &de2_rand}, {"de2-ce", &de2_ce}};
        for (const auto& [id, weights] : models) {
            const int final_layer = weights->config.num_layers;
            EmbeddingIndex index =
                build_index_de(*weights, vocab, corpus, final_layer, cfg.max_len, id);
            std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>>
                retrieved_rows, reranked_rows;
            for (const Doc& query : queries) {
                std::vector<float> emb =
                    embed_sentence_de(*weights, vocab, query.text, final_layer, cfg.max_len);
                SearchResult retrieved = search(index, emb, k_retrieve);
                SearchResult reranked = rerank(query.text, retrieved, ce, vocab, doc_texts,
                                               cfg.rerank_depth, cfg.max_len);
                if (reranked.hits.size() > cfg.eval_k) reranked.hits.resize(cfg.eval_k);

                auto& run_r = retrieve_runs[id][query.id];
                std::vector<std::pair<std::string, double>> row_r, row_x;
                for (const ScoredDoc& hit : retrieved.hits) {
                    run_r.push_back(hit.doc_id);
                    row_r.emplace_back(hit.doc_id, hit.score);
                }
                auto& run_x = rerank_runs[id][query.id];
                for (const ScoredDoc& hit : reranked.hits) {
                    run_x.push_back(hit.doc_id);
                    row_x.emplace_back(hit.doc_id, hit.score);
                }
                retrieved_rows.emplace_back(query.id, std::move(row_r));
                reranked_rows.emplace_back(query.id, std::move(row_x));
            }
            write_results_tsv(cfg.out_dir + "/results/" + id + "_retrieve.tsv", retrieved_rows,
                              "retrieve", header);
            write_results_tsv(cfg.out_dir + "/results/" + id + "_rerank.tsv", reranked_rows,
                              "retrieve+rerank", header);
            detail::stage_log("retrieve", id + ": " + std::to_string(queries.size()) +
                                              " queries, k=" + std::to_string(k_retrieve));
        }
    });

    // -- metrics, significance, near-tie flags -------------------------------
    detail::run_stage("metrics", cfg.out_dir, [&]() {
        for (const auto& [id, run] : retrieve_runs) {
            const EncoderWeights& w = id == "de-baseline" ? de_baseline
                                      : id == "de2-rand"  ? de2_rand
                                                          : de2_ce;
            ReportRow row;
            row.dataset = dataset;
            row.model = id;
            row.stage = "retrieve";
            row.layer = w.config.num_layers;
            row.hits_at_k = hits_at_k(run, qrels, cfg.eval_k);
            row.mrr_at_k = mrr_at_k(run, qrels, cfg.eval_k);
            report.rows.push_back(row);
            row.stage = "retrieve+rerank";
            row.hits_at_k = hits_at_k(rerank_runs[id], qrels, cfg.eval_k);
            row.mrr_at_k = mrr_at_k(rerank_runs[id], qrels, cfg.eval_k);
            report.rows.push_back(row);
        }
        // The cross encoder's own (self-paired, final-layer) retrieval row
        // comes straight from its sweep.
        const auto& ce_sweep = report.sweeps["ce"];
        ReportRow ce_row;
        ce_row.dataset = dataset;
        ce_row.model = "ce";
        ce_row.stage = "retrieve";
        ce_row.layer = ce_sweep.back().layer;
        ce_row.hits_at_k = ce_sweep.back().hits_at_k;
        ce_row.mrr_at_k = ce_sweep.back().mrr_at_k;
        report.rows.push_back(ce_row);

        auto rr_vectors = [&](const RunResults& a, const RunResults& b) {
            auto pa = per_query_rr(a, qrels, cfg.eval_k);
            auto pb = per_query_rr(b, qrels, cfg.eval_k);
            std::vector<double> va, vb;
            for (const auto& [qid, v] : pa) {
                auto it = pb.find(qid);
                if (it != pb.end()) {
                    va.push_back(v);
                    vb.push_back(it->second);
                }
            }
            return std::pair(va, vb);
        };
        auto add_significance = [&](const std::string& name, const RunResults& a,
                                    const RunResults& b) {
            auto [va, vb] = rr_vectors(a, b);
            try {
                TTestResult t = paired_t_test(va, vb);
                report.significance.push_back({name, t.t, t.p, t.n});
            } catch (const std::invalid_argument& e) {
                std::fprintf(stderr, "warning: significance '%s' skipped: %s\n", name.c_str(),
                             e.what());
            }
        };
        add_significance("rr@k de2-ce vs de2-rand (retrieve)", retrieve_runs["de2-ce"],
                         retrieve_runs["de2-rand"]);
        add_significance("rr@k de2-ce vs de-baseline (retrieve)", retrieve_runs["de2-ce"],
                         retrieve_runs["de-baseline"]);
        add_significance("rr@k de2-ce vs de-baseline (rerank)", rerank_runs["de2-ce"],
                         rerank_runs["de-baseline"]);

        auto row_metric = [&](const std::string& model, const std::string& stage, bool mrr) {
            for (const ReportRow& row : report.rows) {
                if (row.model == model && row.stage == stage) {
                    return mrr ? row.mrr_at_k : row.hits_at_k;
                }
            }
            throw std::runtime_error("missing report row for " + model + "/" + stage);
        };
        for (const char* stage : {"retrieve", "retrieve+rerank"}) {
            report.flags.push_back(near_tie(dataset, "hits@" + std::to_string(cfg.eval_k) +
                                                         " (" + stage + ")",
                                            "de2-ce", row_metric("de2-ce", stage, false),
                                            "de-baseline",
                                            row_metric("de-baseline", stage, false)));
            report.flags.push_back(near_tie(dataset, "mrr@" + std::to_string(cfg.eval_k) + " (" +
                                                         stage + ")",
                                            "de2-ce", row_metric("de2-ce", stage, true),
                                            "de-baseline",
                                            row_metric("de-baseline", stage, true)));
        }
        detail::stage_log("metrics", std::to_string(report.rows.size()) + " rows, " +
                                         std::to_string(report.significance.size()) +
                                         " significance tests");
    });

    // -- benchmark (timings stay out of the deterministic report) ------------
    detail::run_stage("bench", cfg.out_dir, [&]() {
        if (!cfg.run_bench) {
            detail::stage_log("bench", "skipped (run_bench=0)");
            return;
        }
        std::vector<std::string> texts;
        for (std::size_t i = 0; i < corpus.size() && i < cfg.bench_corpus; ++i) {
            texts.push_back(corpus[i].text);
        }
        BenchResult slow = time_embedding(de_baseline, vocab, texts, cfg.bench_batch,
                                          cfg.bench_runs, cfg.max_len, "de-baseline");
        BenchResult fast = time_embedding(de2_ce, vocab, texts, cfg.bench_batch, cfg.bench_runs,
                                          cfg.max_len, "de2-ce");
        result.bench_speedup = speedup(slow, fast);
        result.ran_bench = true;
        std::ofstream out(cfg.out_dir + "/bench.csv", std::ios::trunc);
        out << "# " << header << '\n';
        out << "model,corpus,batch,runs,median_seconds,sentences_per_sec,speedup_vs_baseline\n";
        char line[256];
        std::snprintf(line, sizeof(line), "%s,%zu,%zu,%d,%.6g,%.6g,1\n", slow.model_id.c_str(),
                      slow.corpus_size, slow.batch, slow.runs, slow.median_seconds,
                      slow.sentences_per_sec);
        out << line;
        std::snprintf(line, sizeof(line), "%s,%zu,%zu,%d,%.6g,%.6g,%.6g\n", fast.model_id.c_str(),
                      fast.corpus_size, fast.batch, fast.runs, fast.median_seconds,
                      fast.sentences_per_sec, result.bench_speedup);
        out << line;
        detail::stage_log("bench", "speedup de2-ce vs de-baseline: " +
                                       std::to_string(result.bench_speedup) + "x");
    });

    // -- report ---------------------------------------------------------------
    detail::run_stage("report", cfg.out_dir, [&]() {
        write_report(report, cfg.out_dir + "/report.csv", header);
        detail::stage_log("report", cfg.out_dir + "/report.csv");
    });
    result.report = report;
    return result;
}

}  // namespace ceinfuse
