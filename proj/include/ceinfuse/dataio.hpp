#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "ceinfuse/training.hpp"
#include "ceinfuse/types.hpp"

// On-disk formats. Text artifacts generated by this toolkit begin with a
// "# seed=<seed> config=<hash>" comment so a run is attributable to its
// inputs; readers here skip '#' lines. The one exception is the vocab file,
// whose line-number-is-id format has no room for comments.

namespace ceinfuse {

// ---------------------------------------------------------------------------
// seed headers and config hashing
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string config_hash_hex(const std::string& canonical) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(canonical)));
    return buf;
}

inline std::string seed_header(std::uint64_t seed, const std::string& config_hash) {
    return "seed=" + std::to_string(seed) + " config=" + config_hash;
}

inline void ensure_dir(const std::string& path) {
    std::error_code ec;
    std::filesystem::create_directories(path, ec);
    if (ec) throw std::runtime_error("cannot create directory " + path + ": " + ec.message());
}

namespace detail {

inline std::ofstream open_for_write(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    return out;
}

inline std::ifstream open_for_read(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    return in;
}

inline void write_header_comment(std::ofstream& out, const std::string& header) {
    if (!header.empty()) out << "# " << header << '\n';
}

inline bool comment_or_blank(const std::string& line) {
    return line.empty() || line[0] == '#';
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == '\t') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline void check_tsv_field(const std::string& s, const char* what) {
    if (s.find('\t') != std::string::npos || s.find('\n') != std::string::npos) {
        throw std::invalid_argument(std::string(what) + " contains a tab or newline: '" + s +
                                    "'");
    }
}

[[noreturn]] inline void line_fail(const std::string& path, std::size_t lineno,
                                   const std::string& what) {
    throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + what);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// corpus / queries: JSONL of {"id": ..., "text": ...}
// ---------------------------------------------------------------------------

inline void write_docs_jsonl(const std::string& path, const std::vector<Doc>& docs,
                             const std::string& header = "") {
    auto out = detail::open_for_write(path);
    detail::write_header_comment(out, header);
    for (const Doc& doc : docs) {
        nlohmann::json j;
        j["id"] = doc.id;
        j["text"] = doc.text;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

// Validates ingest rules: both fields present and strings, non-empty id and
// text, unique ids.
inline std::vector<Doc> read_docs_jsonl(const std::string& path) {
    auto in = detail::open_for_read(path);
    std::vector<Doc> docs;
    std::map<std::string, std::size_t> seen;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (detail::comment_or_blank(line)) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            detail::line_fail(path, lineno, std::string("invalid JSON: ") + e.what());
        }
        if (!j.is_object() || !j.contains("id") || !j.contains("text") ||
            !j["id"].is_string() || !j["text"].is_string()) {
            detail::line_fail(path, lineno, "expected an object with string fields id, text");
        }
        Doc doc{j["id"].get<std::string>(), j["text"].get<std::string>()};
        if (doc.id.empty()) detail::line_fail(path, lineno, "empty id");
        if (doc.text.empty()) detail::line_fail(path, lineno, "empty text for id '" + doc.id + "'");
        auto [it, fresh] = seen.emplace(doc.id, lineno);
        if (!fresh) {
            detail::line_fail(path, lineno,
                              "duplicate id '" + doc.id + "' (first at line " +
                                  std::to_string(it->second) + ")");
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

// ---------------------------------------------------------------------------
// qrels: TSV query_id <tab> doc_id <tab> relevance
// ---------------------------------------------------------------------------

inline void write_qrels_tsv(const std::string& path, const Qrels& qrels,
                            const std::string& header = "") {
    auto out = detail::open_for_write(path);
    detail::write_header_comment(out, header);
    for (const auto& [qid, docs] : qrels.relevant) {
        detail::check_tsv_field(qid, "query id");
        for (const auto& did : docs) {
            detail::check_tsv_field(did, "doc id");
            out << qid << '\t' << did << "\t1\n";
        }
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

inline Qrels read_qrels_tsv(const std::string& path) {
    auto in = detail::open_for_read(path);
    Qrels qrels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::comment_or_blank(line)) continue;
        auto f = detail::split_tabs(line);
        if (f.size() != 3 || f[0].empty() || f[1].empty()) {
            detail::line_fail(path, lineno, "expected query_id<TAB>doc_id<TAB>relevance");
        }
        long rel = 0;
        try {
            rel = std::stol(f[2]);
        } catch (const std::exception&) {
            detail::line_fail(path, lineno, "relevance is not an integer: '" + f[2] + "'");
        }
        if (rel > 0) qrels.relevant[f[0]].insert(f[1]);
    }
    return qrels;
}

// ---------------------------------------------------------------------------
// training pairs: TSV query_text <tab> positive_text
// ---------------------------------------------------------------------------

inline void write_pairs_tsv(const std::string& path,
                            const std::vector<std::pair<std::string, std::string>>& pairs,
                            const std::string& header = "") {
    auto out = detail::open_for_write(path);
    detail::write_header_comment(out, header);
    for (const auto& [query, positive] : pairs) {
        detail::check_tsv_field(query, "query text");
        detail::check_tsv_field(positive, "positive text");
        out << query << '\t' << positive << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

inline std::vector<std::pair<std::string, std::string>> read_pairs_tsv(const std::string& path) {
    auto in = detail::open_for_read(path);
    std::vector<std::pair<std::string, std::string>> pairs;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::comment_or_blank(line)) continue;
        auto f = detail::split_tabs(line);
        if (f.size() != 2 || f[0].empty() || f[1].empty()) {
            detail::line_fail(path, lineno, "expected query_text<TAB>positive_text");
        }
        pairs.emplace_back(f[0], f[1]);
    }
    return pairs;
}

// ---------------------------------------------------------------------------
// mined training examples: TSV query <tab> positive <tab> negative...
// ---------------------------------------------------------------------------

inline void write_examples_tsv(const std::string& path, const std::vector<TrainExample>& examples,
                               const std::string& header = "") {
    auto out = detail::open_for_write(path);
    detail::write_header_comment(out, header);
    for (const TrainExample& ex : examples) {
        detail::check_tsv_field(ex.query, "query text");
        detail::check_tsv_field(ex.positive, "positive text");
        out << ex.query << '\t' << ex.positive;
        for (const auto& neg : ex.negatives) {
            detail::check_tsv_field(neg, "negative text");
            out << '\t' << neg;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

inline std::vector<TrainExample> read_examples_tsv(const std::string& path) {
    auto in = detail::open_for_read(path);
    std::vector<TrainExample> examples;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::comment_or_blank(line)) continue;
        auto f = detail::split_tabs(line);
        if (f.size() < 2 || f[0].empty() || f[1].empty()) {
            detail::line_fail(path, lineno, "expected query<TAB>positive[<TAB>negative...]");
        }
        TrainExample ex;
        ex.query = f[0];
        ex.positive = f[1];
        ex.negatives.assign(f.begin() + 2, f.end());
        examples.push_back(std::move(ex));
    }
    return examples;
}

// ---------------------------------------------------------------------------
// search results: TSV query_id doc_id rank score stage
// ---------------------------------------------------------------------------

inline void write_results_tsv(
    const std::string& path,
    const std::vector<std::pair<std::string, std::vector<std::pair<std::string, double>>>>& runs,
    const std::string& stage, const std::string& header = "") {
    auto out = detail::open_for_write(path);
    detail::write_header_comment(out, header);
    out << "query_id\tdoc_id\trank\tscore\tstage\n";
    char num[64];
    for (const auto& [qid, hits] : runs) {
        detail::check_tsv_field(qid, "query id");
        for (std::size_t r = 0; r < hits.size(); ++r) {
            detail::check_tsv_field(hits[r].first, "doc id");
            std::snprintf(num, sizeof(num), "%.8g", hits[r].second);
            out << qid << '\t' << hits[r].first << '\t' << (r + 1) << '\t' << num << '\t'
                << stage << '\n';
        }
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

inline RunResults read_results_tsv(const std::string& path) {
    auto in = detail::open_for_read(path);
    RunResults run;
    std::string line;
    std::size_t lineno = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::comment_or_blank(line)) continue;
        auto f = detail::split_tabs(line);
        if (!saw_header) {
            if (f.size() != 5 || f[0] != "query_id") {
                detail::line_fail(path, lineno, "expected results header");
            }
            saw_header = true;
            continue;
        }
        if (f.size() != 5) detail::line_fail(path, lineno, "expected 5 tab-separated fields");
        run[f[0]].push_back(f[1]);  // rows are written in rank order
    }
    return run;
}

// ---------------------------------------------------------------------------
// loss curve: CSV step,loss,lr
// ---------------------------------------------------------------------------

inline void write_loss_curve_csv(const std::string& path, const std::vector<LossPoint>& curve,
                                 const std::string& header = "") {
    auto out = detail::open_for_write(path);
    detail::write_header_comment(out, header);
    out << "step,loss,lr\n";
    char num[64];
    for (const LossPoint& p : curve) {
        std::snprintf(num, sizeof(num), "%.10g,%.10g", p.loss, p.lr);
        out << p.step << ',' << num << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// key=value config files
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
    auto in = detail::open_for_read(path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::comment_or_blank(line)) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            detail::line_fail(path, lineno, "expected key=value, got '" + line + "'");
        }
        std::string key = detail::trim(line.substr(0, eq));
        if (key.empty()) detail::line_fail(path, lineno, "empty key");
        if (!kv.emplace(key, detail::trim(line.substr(eq + 1))).second) {
            detail::line_fail(path, lineno, "duplicate key '" + key + "'");
        }
    }
    return kv;
}

inline void write_config_file(const std::string& path,
                              const std::map<std::string, std::string>& kv,
                              const std::string& header = "") {
    auto out = detail::open_for_write(path);
    detail::write_header_comment(out, header);
    for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
    if (!out) throw std::runtime_error("write failed for " + path);
}

// Canonical form used for config hashing: sorted key=value lines.
inline std::string canonical_config_string(const std::map<std::string, std::string>& kv) {
    std::string s;
    for (const auto& [k, v] : kv) {
        s += k;
        s += '=';
        s += v;
        s += '\n';
    }
    return s;
}

}  // namespace ceinfuse
