#pragma once

// Deterministic subword vocabulary with greedy longest-match tokenization.
// The builder deliberately keeps case and leading-space variants of the same
// word as distinct tokens so that downstream clustering has measurable
// redundancy to remove.

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "lens/common.hpp"

namespace lens {

inline bool is_word_char(unsigned char c) { return std::isalnum(c) != 0; }

// Advances one UTF-8 code point starting at `pos`; invalid bytes advance by 1.
inline std::size_t utf8_advance(std::string_view text, std::size_t pos) {
    const unsigned char c = static_cast<unsigned char>(text[pos]);
    std::size_t len = 1;
    if ((c & 0xE0) == 0xC0)
        len = 2;
    else if ((c & 0xF0) == 0xE0)
        len = 3;
    else if ((c & 0xF8) == 0xF0)
        len = 4;
    if (pos + len > text.size()) len = 1;
    return len;
}

struct Vocabulary {
    std::vector<std::string> tokens;
    std::unordered_map<std::string, int> token_to_id;
    int bos = 0;
    int eos = 1;
    int pad = 2;
    int unk = 3;

    static constexpr int kNumSpecials = 4;

    std::size_t size() const { return tokens.size(); }
    bool is_special(int id) const { return id >= 0 && id < kNumSpecials; }

    const std::string& token(int id) const {
        if (id < 0 || static_cast<std::size_t>(id) >= tokens.size())
            throw DataError("token id out of range: " + std::to_string(id));
        return tokens[static_cast<std::size_t>(id)];
    }

    int id_of(std::string_view tok) const {
        auto it = token_to_id.find(std::string(tok));
        if (it == token_to_id.end()) throw DataError("unknown token: " + std::string(tok));
        return it->second;
    }

    bool contains(std::string_view tok) const {
        return token_to_id.count(std::string(tok)) > 0;
    }
};

struct TokenRange {
    std::size_t begin = 0;  // byte offsets into the source text
    std::size_t end = 0;
};

struct TokenSequence {
    std::vector<int> ids;
    std::vector<TokenRange> offsets;

    std::size_t size() const { return ids.size(); }
    bool empty() const { return ids.empty(); }
};

namespace detail {

inline const char* kBosToken = "[BOS]";
inline const char* kEosToken = "[EOS]";
inline const char* kPadToken = "[PAD]";
inline const char* kUnkToken = "[UNK]";

// Control characters never become tokens; a line-oriented vocabulary file
// cannot represent them. They fall through to UNK at tokenize time.
inline bool is_token_char(char c) { return c != '\n' && c != '\r' && c != '\t'; }

struct CandidateCounts {
    // word / leading-space word / punctuation occurrences, exact strings
    std::map<std::string, std::size_t> counts;
    // every single code point seen (fallback pool), excluding control chars
    std::map<std::string, std::size_t> chars;
};

inline CandidateCounts count_candidates(std::string_view corpus) {
    CandidateCounts cc;
    std::size_t i = 0;
    while (i < corpus.size()) {
        const char c = corpus[i];
        if (is_word_char(static_cast<unsigned char>(c))) {
            std::size_t j = i;
            while (j < corpus.size() && is_word_char(static_cast<unsigned char>(corpus[j]))) ++j;
            std::string word(corpus.substr(i, j - i));
            cc.counts[word] += 1;
            if (i > 0 && corpus[i - 1] == ' ') cc.counts[" " + word] += 1;
            for (char wc : word) cc.chars[std::string(1, wc)] += 1;
            i = j;
        } else {
            const std::size_t len = utf8_advance(corpus, i);
            std::string ch(corpus.substr(i, len));
            if (is_token_char(c)) {
                cc.chars[ch] += 1;
                if (ch != " ") cc.counts[ch] += 1;
            }
            i += len;
        }
    }
    return cc;
}

}  // namespace detail

// Frequency-ranked vocabulary of whole words (plus their punctuation and
// single-character fallbacks). With variant_injection on, the capitalized and
// leading-space forms of every retained lowercase word are admitted whenever
// they occur in the corpus, even below the frequency cutoff, so the final
// size may exceed target_size.
inline Vocabulary build_vocabulary(std::string_view corpus, std::size_t target_size,
                                   bool variant_injection) {
    if (corpus.empty()) throw DataError("empty corpus");

    const detail::CandidateCounts cc = detail::count_candidates(corpus);

    if (target_size < 16 ||
        target_size < Vocabulary::kNumSpecials + cc.chars.size())
        throw DataError("vocabulary too small");

    Vocabulary v;
    v.tokens = {detail::kBosToken, detail::kEosToken, detail::kPadToken, detail::kUnkToken};

    auto admit = [&](const std::string& tok) {
        if (std::find(v.tokens.begin(), v.tokens.end(), tok) == v.tokens.end())
            v.tokens.push_back(tok);
    };

    // Rank non-char candidates by (count desc, string asc); ties deterministic.
    std::vector<std::pair<std::string, std::size_t>> ranked(cc.counts.begin(), cc.counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    // Single-character fallbacks are always admitted so UNK stays rare.
    for (const auto& [ch, n] : cc.chars) admit(ch);

    for (const auto& [tok, n] : ranked) {
        if (v.tokens.size() >= target_size) break;
        admit(tok);
    }

    if (variant_injection) {
        const std::vector<std::string> snapshot(v.tokens.begin() + Vocabulary::kNumSpecials,
                                                v.tokens.end());
        for (const auto& tok : snapshot) {
            if (tok.size() < 2 || !std::islower(static_cast<unsigned char>(tok[0]))) continue;
            std::string cap = tok;
            cap[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap[0])));
            if (cc.counts.count(cap)) admit(cap);
            std::string spaced = " " + tok;
            if (cc.counts.count(spaced)) admit(spaced);
        }
    }

    for (std::size_t id = 0; id < v.tokens.size(); ++id)
        v.token_to_id[v.tokens[id]] = static_cast<int>(id);
    return v;
}

// Greedy longest-match, left to right. Code points with no matching
// vocabulary string emit UNK. Pure function of (vocabulary, text).
inline TokenSequence tokenize(const Vocabulary& v, std::string_view text) {
    std::size_t max_len = 1;
    for (const auto& t : v.tokens) max_len = std::max(max_len, t.size());

    TokenSequence seq;
    std::size_t i = 0;
    while (i < text.size()) {
        const std::size_t cap = std::min(max_len, text.size() - i);
        int id = -1;
        std::size_t len = 0;
        for (std::size_t l = cap; l >= 1; --l) {
            auto it = v.token_to_id.find(std::string(text.substr(i, l)));
            if (it != v.token_to_id.end()) {
                id = it->second;
                len = l;
                break;
            }
        }
        if (id < 0) {
            id = v.unk;
            len = utf8_advance(text, i);
        }
        seq.ids.push_back(id);
        seq.offsets.push_back({i, i + len});
        i += len;
    }
    return seq;
}

// Concatenates token strings; UNK renders as its placeholder string.
// Inverse of tokenize on UNK-free sequences.
inline std::string detokenize_span(const Vocabulary& v, const TokenSequence& seq) {
    std::string out;
    for (int id : seq.ids) out += v.token(id);
    return out;
}

// Vocabulary file: one token per line in id order, specials first, leading
// spaces preserved verbatim. UTF-8.
inline void save_vocabulary(const Vocabulary& v, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for write: " + path);
    for (const auto& t : v.tokens) out << t << '\n';
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open vocabulary: " + path);
    Vocabulary v;
    std::string line;
    while (std::getline(in, line)) v.tokens.push_back(line);
    if (v.tokens.size() < Vocabulary::kNumSpecials) throw DataError("vocabulary file truncated");
    if (v.tokens[0] != detail::kBosToken || v.tokens[1] != detail::kEosToken ||
        v.tokens[2] != detail::kPadToken || v.tokens[3] != detail::kUnkToken)
        throw DataError("vocabulary file missing special tokens");
    for (std::size_t id = 0; id < v.tokens.size(); ++id) {
        if (id >= Vocabulary::kNumSpecials && v.tokens[id].empty())
            throw DataError("empty token in vocabulary file");
        if (!v.token_to_id.emplace(v.tokens[id], static_cast<int>(id)).second)
            throw DataError("duplicate token in vocabulary file: " + v.tokens[id]);
    }
    return v;
}

}  // namespace lens
