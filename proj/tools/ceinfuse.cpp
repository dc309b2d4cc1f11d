// ceinfuse command-line driver. Exit codes: 0 success, 2 usage or validation
// error, 3 runtime failure (I/O, training divergence, failed verification).

#include <cstdio>
#include <ctime>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ceinfuse/ceinfuse.hpp"

namespace {

using namespace ceinfuse;

// Sequences are truncated to what the position table supports.
std::size_t clamp_len(std::size_t max_len, const EncoderWeights& w) {
    return std::min(max_len, static_cast<std::size_t>(w.config.max_positions));
}

std::vector<float> embed_for(const EncoderWeights& w, const Vocab& vocab, const std::string& text,
                             int layer, std::size_t max_len) {
    return w.config.role == ModelRole::CrossEncoder
               ? embed_sentence_ce(w, vocab, text, layer, max_len)
               : embed_sentence_de(w, vocab, text, layer, max_len);
}

std::vector<std::string> doc_texts_of(const std::vector<Doc>& docs) {
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (const Doc& doc : docs) texts.push_back(doc.text);
    return texts;
}

// Either load pre-mined examples or mine them from corpus/queries/qrels.
std::vector<TrainExample> load_or_mine(const std::string& examples_path,
                                       const std::string& corpus_path,
                                       const std::string& queries_path,
                                       const std::string& qrels_path, std::size_t n_neg,
                                       std::size_t window, std::uint64_t seed) {
    if (!examples_path.empty()) return read_examples_tsv(examples_path);
    if (corpus_path.empty() || queries_path.empty() || qrels_path.empty()) {
        throw std::invalid_argument(
            "provide --examples, or --corpus + --queries + --qrels for mining");
    }
    std::vector<Doc> corpus = read_docs_jsonl(corpus_path);
    std::vector<Doc> queries = read_docs_jsonl(queries_path);
    Qrels qrels = read_qrels_tsv(qrels_path);
    std::vector<std::string> texts = doc_texts_of(corpus);
    std::unordered_map<std::string, int> pos_of;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        pos_of.emplace(corpus[i].id, static_cast<int>(i));
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
    return mine_hard_negatives(index, texts, pairs, n_neg, window, seed);
}

std::string results_stage_of(const std::string& path) {
    auto in = std::ifstream(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    bool saw_header = false;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!saw_header) {
            saw_header = true;
            continue;
        }
        auto tab = line.rfind('\t');
        if (tab != std::string::npos) return line.substr(tab + 1);
    }
    return "retrieve";
}

std::string default_run_dir(std::uint64_t seed) {
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
    return "runs/" + std::string(stamp) + "-seed" + std::to_string(seed);
}

long to_long(const std::string& key, const std::string& val) {
    try {
        std::size_t used = 0;
        long v = std::stol(val, &used);
        if (used != val.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': not an integer: '" + val + "'");
    }
}

double to_double(const std::string& key, const std::string& val) {
    try {
        std::size_t used = 0;
        double v = std::stod(val, &used);
        if (used != val.size()) throw std::invalid_argument("trailing junk");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("config key '" + key + "': not a number: '" + val + "'");
    }
}

// Applies a key=value config file onto the defaults; unknown keys are errors.
void apply_pipeline_config(PipelineConfig& cfg, const std::map<std::string, std::string>& kv) {
    for (const auto& [key, val] : kv) {
        if (key == "seed") cfg.seed = static_cast<std::uint64_t>(to_long(key, val));
        else if (key == "vocab_size") cfg.vocab_size = static_cast<std::size_t>(to_long(key, val));
        else if (key == "hidden") cfg.hidden = static_cast<int>(to_long(key, val));
        else if (key == "heads") cfg.heads = static_cast<int>(to_long(key, val));
        else if (key == "ff") cfg.ff = static_cast<int>(to_long(key, val));
        else if (key == "ce_layers") cfg.ce_layers = static_cast<int>(to_long(key, val));
        else if (key == "de_baseline_layers")
            cfg.de_baseline_layers = static_cast<int>(to_long(key, val));
        else if (key == "de_small_layers")
            cfg.de_small_layers = static_cast<int>(to_long(key, val));
        else if (key == "k_copy") cfg.k_copy = static_cast<int>(to_long(key, val));
        else if (key == "max_len") cfg.max_len = static_cast<std::size_t>(to_long(key, val));
        else if (key == "n_neg") cfg.n_neg = static_cast<std::size_t>(to_long(key, val));
        else if (key == "mine_window")
            cfg.mine_window = static_cast<std::size_t>(to_long(key, val));
        else if (key == "eval_k") cfg.eval_k = static_cast<std::size_t>(to_long(key, val));
        else if (key == "rerank_depth")
            cfg.rerank_depth = static_cast<std::size_t>(to_long(key, val));
        else if (key == "sweep_queries")
            cfg.sweep_queries = static_cast<std::size_t>(to_long(key, val));
        else if (key == "run_bench") cfg.run_bench = to_long(key, val) != 0;
        else if (key == "bench_runs") cfg.bench_runs = static_cast<int>(to_long(key, val));
        else if (key == "bench_batch")
            cfg.bench_batch = static_cast<std::size_t>(to_long(key, val));
        else if (key == "bench_corpus")
            cfg.bench_corpus = static_cast<std::size_t>(to_long(key, val));
        else if (key == "corpus") { cfg.corpus_path = val; cfg.use_synth = false; }
        else if (key == "queries") { cfg.queries_path = val; cfg.use_synth = false; }
        else if (key == "qrels") { cfg.qrels_path = val; cfg.use_synth = false; }
        else if (key == "ce_batch") cfg.ce_train.batch = static_cast<int>(to_long(key, val));
        else if (key == "ce_epochs") cfg.ce_train.epochs = static_cast<int>(to_long(key, val));
        else if (key == "ce_lr") cfg.ce_train.lr = to_double(key, val);
        else if (key == "ce_warmup") cfg.ce_train.warmup_frac = to_double(key, val);
        else if (key == "ce_decay") cfg.ce_train.weight_decay = to_double(key, val);
        else if (key == "de_batch") cfg.de_train.batch = static_cast<int>(to_long(key, val));
        else if (key == "de_epochs") cfg.de_train.epochs = static_cast<int>(to_long(key, val));
        else if (key == "de_lr") cfg.de_train.lr = to_double(key, val);
        else if (key == "de_warmup") cfg.de_train.warmup_frac = to_double(key, val);
        else if (key == "de_decay") cfg.de_train.weight_decay = to_double(key, val);
        else if (key == "de_scale") cfg.de_train.scale = to_double(key, val);
        else if (key == "synth_topics") cfg.synth.topics = static_cast<int>(to_long(key, val));
        else if (key == "synth_keywords")
            cfg.synth.keywords_per_topic = static_cast<int>(to_long(key, val));
        else if (key == "synth_noise_vocab")
            cfg.synth.noise_vocab = static_cast<int>(to_long(key, val));
        else if (key == "synth_query_len_min")
            cfg.synth.query_len_min = static_cast<int>(to_long(key, val));
        else if (key == "synth_query_len_max")
            cfg.synth.query_len_max = static_cast<int>(to_long(key, val));
        else if (key == "synth_doc_len_min")
            cfg.synth.doc_len_min = static_cast<int>(to_long(key, val));
        else if (key == "synth_doc_len_max")
            cfg.synth.doc_len_max = static_cast<int>(to_long(key, val));
        else if (key == "synth_noise") cfg.synth.noise_ratio = to_double(key, val);
        else if (key == "synth_corpus_size")
            cfg.synth.corpus_size = static_cast<int>(to_long(key, val));
        else if (key == "synth_queries")
            cfg.synth.num_queries = static_cast<int>(to_long(key, val));
        else if (key == "synth_relevant")
            cfg.synth.relevant_per_query = static_cast<int>(to_long(key, val));
        else throw std::invalid_argument("unknown config key '" + key + "'");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ceinfuse: cross-encoder -> dual-encoder knowledge infusion toolkit"};
    app.require_subcommand(1);
    std::function<int()> action;

    // ----- synth-data -------------------------------------------------------
    struct {
        std::string out;
        SynthSpec spec;
    } synth;
    {
        auto* sc = app.add_subcommand("synth-data", "Generate a synthetic topical dataset");
        sc->add_option("--out", synth.out, "Output directory")->required();
        sc->add_option("--topics", synth.spec.topics, "Number of topics");
        sc->add_option("--keywords", synth.spec.keywords_per_topic, "Keywords per topic");
        sc->add_option("--noise-vocab", synth.spec.noise_vocab, "Shared noise word pool size");
        sc->add_option("--query-len-min", synth.spec.query_len_min, "Min words per query");
        sc->add_option("--query-len-max", synth.spec.query_len_max, "Max words per query");
        sc->add_option("--doc-len-min", synth.spec.doc_len_min, "Min words per doc");
        sc->add_option("--doc-len-max", synth.spec.doc_len_max, "Max words per doc");
        sc->add_option("--noise", synth.spec.noise_ratio, "Fraction of noise words");
        sc->add_option("--corpus-size", synth.spec.corpus_size, "Total docs");
        sc->add_option("--queries", synth.spec.num_queries, "Number of queries");
        sc->add_option("--relevant", synth.spec.relevant_per_query, "Relevant docs per query");
        sc->add_option("--seed", synth.spec.seed, "RNG seed");
        sc->callback([&]() {
            action = [&]() {
                SynthData data = synth_data(synth.spec);
                write_synth_data(data, synth.spec, synth.out);
                std::printf("wrote %zu docs, %zu queries to %s\n", data.corpus.size(),
                            data.queries.size(), synth.out.c_str());
                return 0;
            };
        });
    }

    // ----- build-vocab ------------------------------------------------------
    struct {
        std::string corpus, out;
        std::size_t size = 1000;
    } bv;
    {
        auto* sc = app.add_subcommand("build-vocab", "Build a wordpiece vocab from a corpus");
        sc->add_option("--corpus", bv.corpus, "corpus.jsonl")->required();
        sc->add_option("--out", bv.out, "Output vocab file")->required();
        sc->add_option("--size", bv.size, "Vocab size cap");
        sc->callback([&]() {
            action = [&]() {
                auto tokens = build_vocab_tokens(doc_texts_of(read_docs_jsonl(bv.corpus)), bv.size);
                save_vocab(bv.out, tokens);
                std::printf("wrote %zu tokens to %s\n", tokens.size(), bv.out.c_str());
                return 0;
            };
        });
    }

    // ----- shared train options ---------------------------------------------
    struct TrainCli {
        std::string examples, corpus, queries, qrels, vocab, out, init, loss_curve;
        std::size_t n_neg = 4, window = 50;
        int layers = 4, hidden = 64, heads = 4, ff = 256;
        TrainConfig train;
        std::uint64_t init_seed = 7;
    };
    auto add_train_options = [](CLI::App* sc, TrainCli& t, bool is_ce) {
        sc->add_option("--examples", t.examples, "Pre-mined examples TSV");
        sc->add_option("--corpus", t.corpus, "corpus.jsonl (for mining)");
        sc->add_option("--queries", t.queries, "queries.jsonl (for mining)");
        sc->add_option("--qrels", t.qrels, "qrels.tsv (for mining)");
        sc->add_option("--n-neg", t.n_neg, "Hard negatives per query");
        sc->add_option("--window", t.window, "BM25 mining window");
        sc->add_option("--vocab", t.vocab, "Vocab file")->required();
        sc->add_option("--out", t.out, "Output checkpoint")->required();
        sc->add_option("--layers", t.layers, "Encoder layers (fresh init)");
        sc->add_option("--hidden", t.hidden, "Hidden width");
        sc->add_option("--heads", t.heads, "Attention heads");
        sc->add_option("--ff", t.ff, "Feed-forward width");
        sc->add_option("--max-len", t.train.max_len, "Max sequence length");
        sc->add_option("--batch", t.train.batch, "Batch size");
        sc->add_option("--epochs", t.train.epochs, "Epochs");
        sc->add_option("--lr", t.train.lr, "Peak learning rate");
        sc->add_option("--warmup", t.train.warmup_frac, "Warmup fraction");
        sc->add_option("--decay", t.train.weight_decay, "Weight decay");
        sc->add_option("--seed", t.train.seed, "Training seed");
        sc->add_option("--init-seed", t.init_seed, "Weight init seed");
        sc->add_option("--loss-curve", t.loss_curve, "Write the loss curve CSV here");
        if (!is_ce) {
            sc->add_option("--scale", t.train.scale, "MNRL cosine-logit scale");
            sc->add_option("--init", t.init, "Start from this checkpoint (e.g. infused)");
        }
    };
    auto run_train = [](TrainCli& t, bool is_ce) {
        Vocab vocab = load_vocab(t.vocab);
        std::vector<TrainExample> examples = load_or_mine(
            t.examples, t.corpus, t.queries, t.qrels, t.n_neg, t.window, t.train.seed + 31);

        EncoderWeights w;
        if (!t.init.empty()) {
            w = load_checkpoint(t.init);
            t.train.max_len = clamp_len(t.train.max_len, w);
        } else {
            ModelConfig cfg;
            cfg.num_layers = t.layers;
            cfg.hidden = t.hidden;
            cfg.heads = t.heads;
            cfg.ff = t.ff;
            cfg.vocab_size = static_cast<int>(vocab.size());
            cfg.max_positions = static_cast<int>(t.train.max_len);
            cfg.role = is_ce ? ModelRole::CrossEncoder : ModelRole::DualEncoder;
            w = init_random(cfg, t.init_seed);
        }
        TrainRole role = is_ce ? TrainRole::CrossEncoderBinary : TrainRole::DualEncoderMnrl;
        TrainResult tr = train(w, role, examples, t.train, vocab);

        CheckpointMeta meta;
        meta.vocab_path = t.vocab;
        meta.extra["objective"] = is_ce ? "binary" : "mnrl";
        meta.extra["seed"] = std::to_string(t.train.seed);
        save_checkpoint(w, t.out, meta);
        if (!t.loss_curve.empty()) {
            write_loss_curve_csv(t.loss_curve, tr.curve,
                                 seed_header(t.train.seed, config_hash_hex(t.out)));
        }
        std::printf("trained %s for %ld steps, final loss %.6f -> %s\n",
                    is_ce ? "cross encoder" : "dual encoder", tr.steps, tr.curve.back().loss,
                    t.out.c_str());
        return 0;
    };

    TrainCli tce, tde;
    {
        auto* sc = app.add_subcommand("train-ce",
                                      "Train a cross encoder with the binary relevance loss");
        add_train_options(sc, tce, true);
        sc->callback([&]() { action = [&]() { return run_train(tce, true); }; });
    }
    {
        auto* sc = app.add_subcommand("train-de", "Train a dual encoder with MNRL");
        add_train_options(sc, tde, false);
        sc->callback([&]() { action = [&]() { return run_train(tde, false); }; });
    }

    // ----- sweep-layers -----------------------------------------------------
    struct {
        std::string model, mode, corpus, queries, qrels, vocab, out;
        std::size_t k = 10, max_len = 32, limit = 0;
    } sweep;
    {
        auto* sc = app.add_subcommand("sweep-layers",
                                      "Retrieval quality of every layer's embeddings");
        sc->add_option("--model", sweep.model, "Checkpoint")->required();
        sc->add_option("--mode", sweep.mode, "ce (self-pair) or de; default from checkpoint");
        sc->add_option("--corpus", sweep.corpus, "corpus.jsonl")->required();
        sc->add_option("--queries", sweep.queries, "queries.jsonl")->required();
        sc->add_option("--qrels", sweep.qrels, "qrels.tsv")->required();
        sc->add_option("--vocab", sweep.vocab, "Vocab file")->required();
        sc->add_option("--k", sweep.k, "Metric depth");
        sc->add_option("--max-len", sweep.max_len, "Max sequence length");
        sc->add_option("--limit", sweep.limit, "Sweep only the first N queries (0 = all)");
        sc->add_option("--out", sweep.out, "Output CSV")->required();
        sc->callback([&]() {
            action = [&]() {
                EncoderWeights w = load_checkpoint(sweep.model);
                ModelRole mode =
                    sweep.mode.empty() ? w.config.role : role_from_name(sweep.mode);
                std::vector<Doc> queries = read_docs_jsonl(sweep.queries);
                if (sweep.limit > 0 && queries.size() > sweep.limit) queries.resize(sweep.limit);
                auto rows = layer_sweep(w, mode, read_docs_jsonl(sweep.corpus), queries,
                                        read_qrels_tsv(sweep.qrels), sweep.k,
                                        load_vocab(sweep.vocab), clamp_len(sweep.max_len, w));
                std::ofstream out(sweep.out, std::ios::trunc);
                if (!out) throw std::runtime_error("cannot open " + sweep.out);
                out << "# config=" << config_hash_hex(sweep.model + "|" + sweep.corpus) << "\n";
                out << "layer,hits@" << sweep.k << ",mrr@" << sweep.k << "\n";
                for (const LayerMetrics& m : rows) {
                    char line[96];
                    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f\n", m.layer, m.hits_at_k,
                                  m.mrr_at_k);
                    out << line;
                    std::printf("layer %2d  hits@%zu %.4f  mrr@%zu %.4f\n", m.layer, sweep.k,
                                m.hits_at_k, sweep.k, m.mrr_at_k);
                }
                return 0;
            };
        });
    }

    // ----- infuse -----------------------------------------------------------
    struct {
        std::string ce, out, verify_corpus, vocab;
        std::size_t de_layers = 2, k_copy = 1, probes = 8;
        std::uint64_t seed = 7;
        double tolerance = 1e-6;
    } inf;
    {
        auto* sc = app.add_subcommand(
            "infuse", "Copy embeddings + early layers from a cross encoder into a fresh "
                      "truncated dual encoder");
        sc->add_option("--ce", inf.ce, "Source checkpoint")->required();
        sc->add_option("--out", inf.out, "Output checkpoint")->required();
        sc->add_option("--de-layers", inf.de_layers, "Target depth");
        sc->add_option("--k-copy", inf.k_copy, "Encoder layers to copy");
        sc->add_option("--seed", inf.seed, "Init seed for the non-copied layers");
        sc->add_option("--verify-corpus", inf.verify_corpus,
                       "Verify hidden states match on probes from this corpus.jsonl");
        sc->add_option("--vocab", inf.vocab, "Vocab file (needed for verification)");
        sc->add_option("--probes", inf.probes, "Number of probe sentences");
        sc->add_option("--tolerance", inf.tolerance, "Max allowed deviation");
        sc->callback([&]() {
            action = [&]() {
                CheckpointMeta src_meta;
                EncoderWeights ce = load_checkpoint(inf.ce, &src_meta);
                EncoderWeights de = infuse(ce, inf.de_layers, inf.k_copy, inf.seed);
                CheckpointMeta meta;
                meta.vocab_path = src_meta.vocab_path;
                meta.extra["infused_from"] = inf.ce;
                meta.extra["k_copy"] = std::to_string(inf.k_copy);
                meta.extra["seed"] = std::to_string(inf.seed);
                save_checkpoint(de, inf.out, meta);
                std::printf("infused %zu layer(s) + embeddings into %zu-layer dual encoder -> "
                            "%s\n",
                            inf.k_copy, inf.de_layers, inf.out.c_str());
                if (!inf.verify_corpus.empty()) {
                    std::string vocab_path =
                        inf.vocab.empty() ? src_meta.vocab_path : inf.vocab;
                    if (vocab_path.empty()) {
                        throw std::invalid_argument(
                            "verification needs --vocab (checkpoint has no vocab_path)");
                    }
                    Vocab vocab = load_vocab(vocab_path);
                    std::vector<Doc> docs = read_docs_jsonl(inf.verify_corpus);
                    std::vector<std::string> probes;
                    for (std::size_t i = 0; i < docs.size() && probes.size() < inf.probes; ++i) {
                        probes.push_back(docs[i].text);
                    }
                    InfusionReport rep =
                        verify_infusion(ce, de, inf.k_copy, probes, vocab,
                                        static_cast<std::size_t>(ce.config.max_positions),
                                        inf.tolerance);
                    for (std::size_t li = 0; li < rep.max_dev_per_index.size(); ++li) {
                        std::printf("hidden index %zu: max deviation %.3g\n", li,
                                    rep.max_dev_per_index[li]);
                    }
                    if (!rep.pass) {
                        throw std::runtime_error(
                            "infusion verification failed at hidden index " +
                            std::to_string(rep.first_bad_index) + " (max deviation " +
                            std::to_string(rep.max_dev) + ")");
                    }
                    std::printf("verification passed (tolerance %.1g)\n", rep.tolerance);
                }
                return 0;
            };
        });
    }

    // ----- index ------------------------------------------------------------
    struct {
        std::string model, corpus, vocab, out;
        int layer = -1;
        std::size_t max_len = 32;
    } idx;
    {
        auto* sc = app.add_subcommand("index", "Embed a corpus and save the cosine index");
        sc->add_option("--model", idx.model, "Checkpoint")->required();
        sc->add_option("--corpus", idx.corpus, "corpus.jsonl")->required();
        sc->add_option("--vocab", idx.vocab, "Vocab file")->required();
        sc->add_option("--layer", idx.layer, "Pooling layer (-1 = final)");
        sc->add_option("--max-len", idx.max_len, "Max sequence length");
        sc->add_option("--out", idx.out, "Output index file")->required();
        sc->callback([&]() {
            action = [&]() {
                EncoderWeights w = load_checkpoint(idx.model);
                Vocab vocab = load_vocab(idx.vocab);
                int layer = idx.layer < 0 ? w.config.num_layers : idx.layer;
                std::size_t max_len = clamp_len(idx.max_len, w);
                std::vector<Doc> corpus = read_docs_jsonl(idx.corpus);
                EmbeddingIndex index =
                    w.config.role == ModelRole::CrossEncoder
                        ? build_index_ce(w, vocab, corpus, layer, max_len, idx.model)
                        : build_index_de(w, vocab, corpus, layer, max_len, idx.model);
                save_index(index, idx.out);
                std::printf("indexed %zu docs at layer %d -> %s\n", index.doc_ids.size(), layer,
                            idx.out.c_str());
                return 0;
            };
        });
    }

    // ----- search -----------------------------------------------------------
    struct {
        std::string index, model, vocab, queries, out;
        std::size_t k = 10, max_len = 32;
    } srch;
    {
        auto* sc = app.add_subcommand("search", "Run queries against a saved index");
        sc->add_option("--index", srch.index, "Index file")->required();
        sc->add_option("--model", srch.model, "Checkpoint (embeds the queries)")->required();
        sc->add_option("--vocab", srch.vocab, "Vocab file")->required();
        sc->add_option("--queries", srch.queries, "queries.jsonl")->required();
        sc->add_option("--k", srch.k, "Hits per query");
        sc->add_option("--max-len", srch.max_len, "Max sequence length");
        sc->add_option("--out", srch.out, "Output results TSV")->required();
        sc->callback([&]() {
            action = [&]() {
                EmbeddingIndex index = load_index(srch.index);
                EncoderWeights w = load_checkpoint(srch.model);
                Vocab vocab = load_vocab(srch.vocab);
                std::vector<std::pair<std::string,
                                      std::vector<std::pair<std::string, double>>>> rows;
                for (const Doc& query : read_docs_jsonl(srch.queries)) {
                    std::vector<float> emb =
                        embed_for(w, vocab, query.text, index.layer, clamp_len(srch.max_len, w));
                    SearchResult res = search(index, emb, srch.k);
                    std::vector<std::pair<std::string, double>> hits;
                    for (const ScoredDoc& hit : res.hits) hits.emplace_back(hit.doc_id, hit.score);
                    rows.emplace_back(query.id, std::move(hits));
                }
                write_results_tsv(srch.out, rows, "retrieve");
                std::printf("searched %zu queries, k=%zu -> %s\n", rows.size(), srch.k,
                            srch.out.c_str());
                return 0;
            };
        });
    }

    // ----- rerank -----------------------------------------------------------
    struct {
        std::string results, ce, vocab, corpus, queries, out;
        std::size_t depth = 50, k = 10, max_len = 32;
    } rr;
    {
        auto* sc = app.add_subcommand("rerank",
                                      "Re-score the head of retrieved lists with a cross encoder");
        sc->add_option("--results", rr.results, "Results TSV from search")->required();
        sc->add_option("--ce", rr.ce, "Cross-encoder checkpoint")->required();
        sc->add_option("--vocab", rr.vocab, "Vocab file")->required();
        sc->add_option("--corpus", rr.corpus, "corpus.jsonl (doc texts)")->required();
        sc->add_option("--queries", rr.queries, "queries.jsonl (query texts)")->required();
        sc->add_option("--depth", rr.depth, "Re-rank the top this many");
        sc->add_option("--k", rr.k, "Keep the top this many");
        sc->add_option("--max-len", rr.max_len, "Max sequence length");
        sc->add_option("--out", rr.out, "Output results TSV")->required();
        sc->callback([&]() {
            action = [&]() {
                RunResults run = read_results_tsv(rr.results);
                EncoderWeights ce = load_checkpoint(rr.ce);
                Vocab vocab = load_vocab(rr.vocab);
                auto doc_texts = corpus_text_map(read_docs_jsonl(rr.corpus));
                std::unordered_map<std::string, std::string> query_texts;
                for (const Doc& q : read_docs_jsonl(rr.queries)) {
                    query_texts.emplace(q.id, q.text);
                }
                std::vector<std::pair<std::string,
                                      std::vector<std::pair<std::string, double>>>> rows;
                for (const auto& [qid, ranked] : run) {
                    auto qt = query_texts.find(qid);
                    if (qt == query_texts.end()) {
                        throw std::runtime_error("no text for query id '" + qid + "'");
                    }
                    SearchResult retrieved;
                    for (const std::string& did : ranked) retrieved.hits.push_back({did, 0.0f});
                    SearchResult reranked = rerank(qt->second, retrieved, ce, vocab, doc_texts,
                                                   rr.depth, clamp_len(rr.max_len, ce));
                    if (reranked.hits.size() > rr.k) reranked.hits.resize(rr.k);
                    std::vector<std::pair<std::string, double>> hits;
                    for (const ScoredDoc& hit : reranked.hits) {
                        hits.emplace_back(hit.doc_id, hit.score);
                    }
                    rows.emplace_back(qid, std::move(hits));
                }
                write_results_tsv(rr.out, rows, "retrieve+rerank");
                std::printf("reranked %zu queries, depth=%zu, k=%zu -> %s\n", rows.size(),
                            rr.depth, rr.k, rr.out.c_str());
                return 0;
            };
        });
    }

    // ----- eval -------------------------------------------------------------
    struct {
        std::vector<std::string> runs, labels;
        std::string qrels, out, dataset = "dataset";
        std::size_t k = 10;
    } ev;
    {
        auto* sc = app.add_subcommand("eval", "Hits@k / MRR@k for result files, with paired "
                                              "t-tests between runs");
        sc->add_option("--run", ev.runs, "Results TSV (repeatable)")->required();
        sc->add_option("--label", ev.labels, "Label per run (defaults to the file name)");
        sc->add_option("--qrels", ev.qrels, "qrels.tsv")->required();
        sc->add_option("--k", ev.k, "Metric depth");
        sc->add_option("--dataset", ev.dataset, "Dataset name for the report");
        sc->add_option("--out", ev.out, "Report CSV")->required();
        sc->callback([&]() {
            action = [&]() {
                if (!ev.labels.empty() && ev.labels.size() != ev.runs.size()) {
                    throw std::invalid_argument("--label count must match --run count");
                }
                Qrels qrels = read_qrels_tsv(ev.qrels);
                EvalReport report;
                report.k = ev.k;
                std::vector<RunResults> runs;
                std::vector<std::string> labels;
                for (std::size_t i = 0; i < ev.runs.size(); ++i) {
                    runs.push_back(read_results_tsv(ev.runs[i]));
                    labels.push_back(i < ev.labels.size()
                                         ? ev.labels[i]
                                         : std::filesystem::path(ev.runs[i]).stem().string());
                    ReportRow row;
                    row.dataset = ev.dataset;
                    row.model = labels.back();
                    row.stage = results_stage_of(ev.runs[i]);
                    row.layer = -1;  // unknown from a results file
                    row.hits_at_k = hits_at_k(runs.back(), qrels, ev.k);
                    row.mrr_at_k = mrr_at_k(runs.back(), qrels, ev.k);
                    report.rows.push_back(row);
                    std::printf("%-24s %-18s hits@%zu %.4f  mrr@%zu %.4f\n", labels.back().c_str(),
                                row.stage.c_str(), ev.k, row.hits_at_k, ev.k, row.mrr_at_k);
                }
                for (std::size_t i = 0; i < runs.size(); ++i) {
                    for (std::size_t j = i + 1; j < runs.size(); ++j) {
                        auto pa = per_query_rr(runs[i], qrels, ev.k);
                        auto pb = per_query_rr(runs[j], qrels, ev.k);
                        std::vector<double> va, vb;
                        for (const auto& [qid, v] : pa) {
                            auto it = pb.find(qid);
                            if (it != pb.end()) {
                                va.push_back(v);
                                vb.push_back(it->second);
                            }
                        }
                        std::string name = "rr@" + std::to_string(ev.k) + " " + labels[i] +
                                           " vs " + labels[j];
                        try {
                            TTestResult t = paired_t_test(va, vb);
                            report.significance.push_back({name, t.t, t.p, t.n});
                            std::printf("%s: t=%.4f p=%.4f n=%zu\n", name.c_str(), t.t, t.p, t.n);
                        } catch (const std::invalid_argument& e) {
                            std::fprintf(stderr, "warning: %s skipped: %s\n", name.c_str(),
                                         e.what());
                        }
                    }
                }
                write_report(report, ev.out);
                std::printf("wrote %s\n", ev.out.c_str());
                return 0;
            };
        });
    }

    // ----- bench ------------------------------------------------------------
    struct {
        std::string baseline, fast, corpus, vocab, out;
        std::size_t batch = 32, limit = 200, max_len = 32;
        int runs = 5;
    } bn;
    {
        auto* sc = app.add_subcommand("bench",
                                      "Embedding throughput of two checkpoints and their speedup");
        sc->add_option("--baseline", bn.baseline, "Baseline checkpoint")->required();
        sc->add_option("--fast", bn.fast, "Comparison checkpoint")->required();
        sc->add_option("--corpus", bn.corpus, "corpus.jsonl")->required();
        sc->add_option("--vocab", bn.vocab, "Vocab file")->required();
        sc->add_option("--batch", bn.batch, "Batch size");
        sc->add_option("--runs", bn.runs, "Timed runs (after 1 warmup)");
        sc->add_option("--limit", bn.limit, "Use at most this many docs");
        sc->add_option("--max-len", bn.max_len, "Max sequence length");
        sc->add_option("--out", bn.out, "Optional bench CSV");
        sc->callback([&]() {
            action = [&]() {
                Vocab vocab = load_vocab(bn.vocab);
                std::vector<std::string> texts = doc_texts_of(read_docs_jsonl(bn.corpus));
                if (texts.size() > bn.limit) texts.resize(bn.limit);
                EncoderWeights slow_w = load_checkpoint(bn.baseline);
                EncoderWeights fast_w = load_checkpoint(bn.fast);
                BenchResult slow = time_embedding(slow_w, vocab, texts, bn.batch, bn.runs,
                                                  clamp_len(bn.max_len, slow_w), bn.baseline);
                BenchResult fast = time_embedding(fast_w, vocab, texts, bn.batch, bn.runs,
                                                  clamp_len(bn.max_len, fast_w), bn.fast);
                double ratio = speedup(slow, fast);
                auto print_row = [](const BenchResult& r) {
                    std::printf("%-32s median %8.4fs  %9.1f sent/s\n", r.model_id.c_str(),
                                r.median_seconds, r.sentences_per_sec);
                };
                print_row(slow);
                print_row(fast);
                std::printf("speedup: %.2fx\n", ratio);
                if (!bn.out.empty()) {
                    std::ofstream out(bn.out, std::ios::trunc);
                    if (!out) throw std::runtime_error("cannot open " + bn.out);
                    out << "model,corpus,batch,runs,median_seconds,sentences_per_sec,"
                           "speedup_vs_baseline\n";
                    char line[256];
                    std::snprintf(line, sizeof(line), "%s,%zu,%zu,%d,%.6g,%.6g,1\n",
                                  slow.model_id.c_str(), slow.corpus_size, slow.batch, slow.runs,
                                  slow.median_seconds, slow.sentences_per_sec);
                    out << line;
                    std::snprintf(line, sizeof(line), "%s,%zu,%zu,%d,%.6g,%.6g,%.6g\n",
                                  fast.model_id.c_str(), fast.corpus_size, fast.batch, fast.runs,
                                  fast.median_seconds, fast.sentences_per_sec, ratio);
                    out << line;
                }
                return 0;
            };
        });
    }

    // ----- grad-check -------------------------------------------------------
    struct {
        std::string kernel = "all", model = "all";
        std::uint64_t seed = 123;
        std::size_t rows = 4, cols = 6;
    } gc;
    {
        auto* sc = app.add_subcommand("grad-check",
                                      "Finite-difference checks of kernel and model gradients");
        sc->add_option("--kernel", gc.kernel,
                       "matmul|softmax|layer_norm|gelu|attention|all|none");
        sc->add_option("--model", gc.model, "de|ce|all|none (full loss paths)");
        sc->add_option("--seed", gc.seed, "RNG seed");
        sc->add_option("--rows", gc.rows, "Kernel input rows");
        sc->add_option("--cols", gc.cols, "Kernel input cols");
        sc->callback([&]() {
            action = [&]() {
                const double kernel_tol = 1e-5, model_tol = 1e-4;
                bool ok = true;
                std::vector<std::string> kernels;
                if (gc.kernel == "all") {
                    kernels = {"matmul", "softmax", "layer_norm", "gelu", "attention"};
                } else if (gc.kernel != "none") {
                    kernels = {gc.kernel};
                }
                for (const std::string& id : kernels) {
                    GradCheckResult res = grad_check(id, gc.rows, gc.cols, gc.seed);
                    bool pass = res.skipped || res.max_rel_err < kernel_tol;
                    ok = ok && pass;
                    std::printf("kernel %-10s max rel err %.3g  %s\n", id.c_str(),
                                res.max_rel_err, res.skipped ? "SKIP" : pass ? "PASS" : "FAIL");
                }
                std::vector<TrainRole> roles;
                if (gc.model == "all") {
                    roles = {TrainRole::DualEncoderMnrl, TrainRole::CrossEncoderBinary};
                } else if (gc.model == "de") {
                    roles = {TrainRole::DualEncoderMnrl};
                } else if (gc.model == "ce") {
                    roles = {TrainRole::CrossEncoderBinary};
                } else if (gc.model != "none") {
                    throw std::invalid_argument("--model must be de, ce, all or none");
                }
                for (TrainRole role : roles) {
                    ModelGradCheckReport rep = model_grad_check(role, gc.seed);
                    bool pass = rep.max_rel_err < model_tol;
                    ok = ok && pass;
                    std::printf("model %-11s max rel err %.3g  %s\n",
                                role == TrainRole::DualEncoderMnrl ? "de (MNRL)" : "ce (binary)",
                                rep.max_rel_err, pass ? "PASS" : "FAIL");
                }
                if (!ok) throw std::runtime_error("gradient check failed");
                return 0;
            };
        });
    }

    // ----- run-pipeline -----------------------------------------------------
    struct {
        PipelineConfig cfg;
        std::string config_file;
        bool no_bench = false;
    } pl;
    {
        auto* sc = app.add_subcommand("run-pipeline", "Full data -> report pipeline");
        sc->add_option("--out", pl.cfg.out_dir, "Run directory (default runs/<stamp>-seed<seed>)");
        sc->add_option("--config", pl.config_file, "key=value config file");
        sc->add_option("--seed", pl.cfg.seed, "Master seed");
        sc->add_option("--corpus", pl.cfg.corpus_path, "Ingest corpus.jsonl (disables synth)");
        sc->add_option("--queries", pl.cfg.queries_path, "Ingest queries.jsonl");
        sc->add_option("--qrels", pl.cfg.qrels_path, "Ingest qrels.tsv");
        sc->add_flag("--resume", pl.cfg.resume, "Reuse artifacts already in the run directory");
        sc->add_flag("--no-bench", pl.no_bench, "Skip the wall-clock benchmark");
        sc->callback([&]() {
            action = [&]() {
                PipelineConfig cfg;  // defaults
                if (!pl.config_file.empty()) {
                    apply_pipeline_config(cfg, read_config_file(pl.config_file));
                }
                // CLI flags override the config file.
                CLI::App* me = app.get_subcommand("run-pipeline");
                if (me->count("--seed")) cfg.seed = pl.cfg.seed;
                if (me->count("--out")) cfg.out_dir = pl.cfg.out_dir;
                if (me->count("--corpus")) { cfg.corpus_path = pl.cfg.corpus_path; cfg.use_synth = false; }
                if (me->count("--queries")) cfg.queries_path = pl.cfg.queries_path;
                if (me->count("--qrels")) cfg.qrels_path = pl.cfg.qrels_path;
                cfg.resume = pl.cfg.resume;
                if (pl.no_bench) cfg.run_bench = false;
                if (cfg.out_dir.empty()) cfg.out_dir = default_run_dir(cfg.seed);

                PipelineResult res = run_pipeline(cfg);
                std::printf("\n%-14s %-18s %7s %7s\n", "model", "stage",
                            ("hits@" + std::to_string(cfg.eval_k)).c_str(),
                            ("mrr@" + std::to_string(cfg.eval_k)).c_str());
                for (const ReportRow& row : res.report.rows) {
                    std::printf("%-14s %-18s %7.4f %7.4f\n", row.model.c_str(), row.stage.c_str(),
                                row.hits_at_k, row.mrr_at_k);
                }
                for (const SignificanceRow& s : res.report.significance) {
                    std::printf("%s: t=%.4f p=%.4f n=%zu\n", s.comparison.c_str(), s.t, s.p, s.n);
                }
                if (res.ran_bench) {
                    std::printf("bench speedup de2-ce vs de-baseline: %.2fx\n",
                                res.bench_speedup);
                }
                std::printf("report: %s/report.csv\n", res.out_dir.c_str());
                return 0;
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }

    try {
        return action ? action() : 2;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
