#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace ceinfuse {

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kSepToken = "[SEP]";
inline constexpr std::size_t kMaxWordChars = 100;

struct Vocab {
    std::vector<std::string> tokens;            // id -> token
    std::unordered_map<std::string, int> ids;   // token -> id
    int pad_id = -1;
    int unk_id = -1;
    int cls_id = -1;
    int sep_id = -1;

    std::size_t size() const { return tokens.size(); }

    bool contains(const std::string& tok) const { return ids.count(tok) != 0; }

    int id_of(const std::string& tok) const {
        auto it = ids.find(tok);
        return it == ids.end() ? unk_id : it->second;
    }

    const std::string& token_of(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens.size()) {
            throw std::invalid_argument("Vocab: id out of range: " + std::to_string(id));
        }
        return tokens[static_cast<std::size_t>(id)];
    }
};

// One token per line, line number = id. All four specials must be present,
// duplicates are a format error.
inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("load_vocab: cannot open " + path);
    Vocab vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (vocab.ids.count(line)) {
            throw std::runtime_error("load_vocab: duplicate token '" + line + "' in " + path);
        }
        int id = static_cast<int>(vocab.tokens.size());
        vocab.ids.emplace(line, id);
        vocab.tokens.push_back(line);
    }
    auto require = [&](const char* tok) {
        auto it = vocab.ids.find(tok);
        if (it == vocab.ids.end()) {
            throw std::runtime_error("load_vocab: missing special token " + std::string(tok) +
                                     " in " + path);
        }
        return it->second;
    };
    vocab.pad_id = require(kPadToken);
    vocab.unk_id = require(kUnkToken);
    vocab.cls_id = require(kClsToken);
    vocab.sep_id = require(kSepToken);
    return vocab;
}

// Builds a vocab from an in-memory token list. The four specials are put at
// ids 0..3 unless the list already carries them; duplicates are an error.
inline Vocab make_vocab(const std::vector<std::string>& entries) {
    Vocab vocab;
    auto add = [&](const std::string& tok) {
        if (vocab.ids.count(tok)) {
            throw std::invalid_argument("make_vocab: duplicate token '" + tok + "'");
        }
        int id = static_cast<int>(vocab.tokens.size());
        vocab.ids.emplace(tok, id);
        vocab.tokens.push_back(tok);
        return id;
    };
    std::vector<std::string> specials = {kPadToken, kUnkToken, kClsToken, kSepToken};
    for (const auto& s : specials) {
        bool listed = false;
        for (const auto& e : entries) listed = listed || e == s;
        if (!listed) add(s);
    }
    for (const auto& e : entries) add(e);
    vocab.pad_id = vocab.ids.at(kPadToken);
    vocab.unk_id = vocab.ids.at(kUnkToken);
    vocab.cls_id = vocab.ids.at(kClsToken);
    vocab.sep_id = vocab.ids.at(kSepToken);
    return vocab;
}

// Lowercase, split on whitespace; every punctuation character becomes its own
// word. Shared by the wordpiece tokenizer and BM25.
inline std::vector<std::string> basic_tokenize(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    auto flush = [&]() {
        if (!cur.empty()) {
            words.push_back(cur);
            cur.clear();
        }
    };
    for (unsigned char ch : text) {
        if (std::isspace(ch)) {
            flush();
        } else if (std::ispunct(ch)) {
            flush();
            words.emplace_back(1, static_cast<char>(ch));
        } else {
            cur.push_back(static_cast<char>(std::tolower(ch)));
        }
    }
    flush();
    return words;
}

// Vocabulary construction: the four specials, then whole words by (count
// desc, word asc), then single-character fallback pieces ("c" and "##c" by
// character frequency) while the budget lasts. Deterministic in corpus order.
inline std::vector<std::string> build_vocab_tokens(const std::vector<std::string>& texts,
                                                   std::size_t size) {
    if (size < 5) throw std::invalid_argument("build_vocab: size must be >= 5");
    if (texts.empty()) throw std::invalid_argument("build_vocab: empty corpus");

    std::unordered_map<std::string, long long> word_count;
    std::unordered_map<char, long long> char_count;
    for (const std::string& text : texts) {
        for (const std::string& word : basic_tokenize(text)) {
            ++word_count[word];
            for (char ch : word) ++char_count[ch];
        }
    }
    auto by_count_then_token = [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    };

    std::vector<std::string> tokens = {kPadToken, kUnkToken, kClsToken, kSepToken};
    std::vector<std::pair<std::string, long long>> words(word_count.begin(), word_count.end());
    std::sort(words.begin(), words.end(), by_count_then_token);
    for (const auto& [word, count] : words) {
        if (tokens.size() >= size) break;
        tokens.push_back(word);
    }

    if (tokens.size() < size) {
        std::vector<std::pair<std::string, long long>> pieces;
        for (const auto& [ch, count] : char_count) {
            pieces.emplace_back(std::string(1, ch), count);
            pieces.emplace_back("##" + std::string(1, ch), count);
        }
        std::sort(pieces.begin(), pieces.end(), by_count_then_token);
        std::unordered_map<std::string, int> present;
        for (const auto& t : tokens) present.emplace(t, 1);
        for (const auto& [piece, count] : pieces) {
            if (tokens.size() >= size) break;
            if (present.emplace(piece, 1).second) tokens.push_back(piece);
        }
    }
    return tokens;
}

// One token per line, line number = id (the load_vocab format).
inline void save_vocab(const std::string& path, const std::vector<std::string>& tokens) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("save_vocab: cannot open " + path);
    for (const auto& t : tokens) out << t << '\n';
    if (!out) throw std::runtime_error("save_vocab: write failed for " + path);
}

// Greedy longest-match-first wordpiece split. A word with no full cover falls
// back to a single [UNK]; words over kMaxWordChars are [UNK] outright.
inline std::vector<std::string> wordpiece_tokenize(const std::string& text, const Vocab& vocab) {
    std::vector<std::string> out;
    for (const std::string& word : basic_tokenize(text)) {
        if (word.size() > kMaxWordChars) {
            out.push_back(kUnkToken);
            continue;
        }
        std::vector<std::string> pieces;
        std::size_t start = 0;
        bool bad = false;
        while (start < word.size()) {
            std::size_t end = word.size();
            std::string match;
            while (start < end) {
                std::string piece = word.substr(start, end - start);
                if (start > 0) piece = "##" + piece;
                if (vocab.contains(piece)) {
                    match = std::move(piece);
                    break;
                }
                --end;
            }
            if (match.empty()) {
                bad = true;
                break;
            }
            pieces.push_back(std::move(match));
            start = end;
        }
        if (bad) {
            out.push_back(kUnkToken);
        } else {
            for (auto& p : pieces) out.push_back(std::move(p));
        }
    }
    return out;
}

// Token ids plus the masks downstream consumers need. All four sequences have
// length max_len; attention_mask is a prefix of 1s; special_mask marks
// [CLS]/[SEP]/[PAD] positions.
struct Encoding {
    std::vector<int> ids;
    std::vector<int> segment_ids;
    std::vector<int> attention_mask;
    std::vector<int> special_mask;

    std::size_t length() const { return ids.size(); }

    std::size_t num_real_tokens() const {
        std::size_t n = 0;
        for (int m : attention_mask) n += static_cast<std::size_t>(m);
        return n;
    }
};

namespace detail {

inline Encoding finish_encoding(std::vector<int> ids, std::vector<int> segs,
                                std::vector<int> specials, const Vocab& vocab,
                                std::size_t max_len) {
    Encoding enc;
    enc.ids = std::move(ids);
    enc.segment_ids = std::move(segs);
    enc.special_mask = std::move(specials);
    enc.attention_mask.assign(enc.ids.size(), 1);
    while (enc.ids.size() < max_len) {
        enc.ids.push_back(vocab.pad_id);
        enc.segment_ids.push_back(0);
        enc.special_mask.push_back(1);
        enc.attention_mask.push_back(0);
    }
    return enc;
}

}  // namespace detail

// [CLS] tokens [SEP] then pads; tokens truncated to max_len - 2.
inline Encoding encode_single(const std::string& text, const Vocab& vocab, std::size_t max_len) {
    if (max_len < 2) throw std::invalid_argument("encode_single: max_len must be >= 2");
    std::vector<std::string> toks = wordpiece_tokenize(text, vocab);
    if (toks.size() > max_len - 2) toks.resize(max_len - 2);

    std::vector<int> ids{vocab.cls_id};
    std::vector<int> segs{0};
    std::vector<int> specials{1};
    for (const auto& t : toks) {
        ids.push_back(vocab.id_of(t));
        segs.push_back(0);
        specials.push_back(0);
    }
    ids.push_back(vocab.sep_id);
    segs.push_back(0);
    specials.push_back(1);
    return detail::finish_encoding(std::move(ids), std::move(segs), std::move(specials), vocab,
                                   max_len);
}

// [CLS] a [SEP] b [SEP] then pads. Segment 0 through the first [SEP]
// inclusive, segment 1 after. Truncation removes one token at a time from the
// longer side until the pair fits (ties trim the first side). self_pair
// replaces b with a before tokenization.
inline Encoding encode_pair(const std::string& a, const std::string& b, const Vocab& vocab,
                            std::size_t max_len, bool self_pair = false) {
    if (max_len < 3) throw std::invalid_argument("encode_pair: max_len must be >= 3");
    std::vector<std::string> ta = wordpiece_tokenize(a, vocab);
    std::vector<std::string> tb = self_pair ? ta : wordpiece_tokenize(b, vocab);

    const std::size_t budget = max_len - 3;
    while (ta.size() + tb.size() > budget) {
        if (ta.size() >= tb.size() && !ta.empty()) {
            ta.pop_back();
        } else {
            tb.pop_back();
        }
    }

    std::vector<int> ids{vocab.cls_id};
    std::vector<int> segs{0};
    std::vector<int> specials{1};
    for (const auto& t : ta) {
        ids.push_back(vocab.id_of(t));
        segs.push_back(0);
        specials.push_back(0);
    }
    ids.push_back(vocab.sep_id);
    segs.push_back(0);
    specials.push_back(1);
    for (const auto& t : tb) {
        ids.push_back(vocab.id_of(t));
        segs.push_back(1);
        specials.push_back(0);
    }
    ids.push_back(vocab.sep_id);
    segs.push_back(1);
    specials.push_back(1);
    return detail::finish_encoding(std::move(ids), std::move(segs), std::move(specials), vocab,
                                   max_len);
}

}  // namespace ceinfuse
