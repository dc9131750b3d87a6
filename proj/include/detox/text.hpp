#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "detox/error.hpp"

namespace detox {

using Tokens = std::vector<std::string>;
using TokenIds = std::vector<int>;

struct TokenizerConfig {
    bool lowercase = true;
};

/// A token together with the byte range it occupies in the source text.
struct TokenSpan {
    std::string surface;
    std::size_t begin = 0;
    std::size_t end = 0;
};

namespace detail {

inline bool is_space(unsigned char c) { return std::isspace(c) != 0; }

// Bytes >= 0x80 are parts of UTF-8 sequences and count as word characters.
inline bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }

} // namespace detail

/// Whitespace split, every ASCII punctuation character becomes its own token.
inline std::vector<TokenSpan> tokenize_with_offsets(std::string_view text, const TokenizerConfig& config = {}) {
    std::vector<TokenSpan> out;
    std::size_t i = 0;
    const std::size_t n = text.size();
    while (i < n) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (detail::is_space(c)) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        if (!detail::is_punct(c)) {
            while (j < n) {
                const auto d = static_cast<unsigned char>(text[j]);
                if (detail::is_space(d) || detail::is_punct(d)) break;
                ++j;
            }
        }
        std::string surface(text.substr(i, j - i));
        if (config.lowercase) {
            for (auto& ch : surface) {
                if (static_cast<unsigned char>(ch) < 0x80) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
            }
        }
        out.push_back({std::move(surface), i, j});
        i = j;
    }
    return out;
}

inline Tokens tokenize(std::string_view text, const TokenizerConfig& config = {}) {
    Tokens out;
    for (auto& span : tokenize_with_offsets(text, config)) out.push_back(std::move(span.surface));
    return out;
}

inline std::string detokenize(const Tokens& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out.push_back(' ');
        out += tokens[i];
    }
    return out;
}

/// Dense id space over word types plus four reserved symbols at ids 0..3.
class Vocabulary {
public:
    static constexpr int bos = 0;
    static constexpr int eos = 1;
    static constexpr int unk = 2;
    static constexpr int mask = 3;
    static constexpr int num_specials = 4;

    Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

    /// `words` must not contain duplicates or the reserved surfaces.
    explicit Vocabulary(const std::vector<std::string>& words) {
        tokens_ = {"<s>", "</s>", "<unk>", "<mask>"};
        for (const auto& w : words) {
            if (w.empty()) throw InvalidArgument("vocabulary: empty token");
            tokens_.push_back(w);
        }
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
                throw InvalidArgument("vocabulary: duplicate token '" + tokens_[i] + "'");
        }
    }

    std::size_t size() const noexcept { return tokens_.size(); }

    std::optional<int> find(std::string_view token) const {
        auto it = index_.find(std::string(token));
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    int id(std::string_view token) const { return find(token).value_or(unk); }

    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    static bool is_special(int id) noexcept { return id >= 0 && id < num_specials; }

    TokenIds encode(const Tokens& tokens) const {
        TokenIds ids;
        ids.reserve(tokens.size());
        for (const auto& t : tokens) ids.push_back(id(t));
        return ids;
    }

    /// Non-special tokens in id order.
    std::vector<std::string> words() const { return {tokens_.begin() + num_specials, tokens_.end()}; }

    /// FNV-1a over the id-ordered token list; equal vocabularies have equal fingerprints.
    std::uint64_t fingerprint() const {
        std::uint64_t h = 1469598103934665603ULL;
        for (const auto& t : tokens_) {
            for (unsigned char c : t) {
                h ^= c;
                h *= 1099511628211ULL;
            }
            h ^= 0xff;
            h *= 1099511628211ULL;
        }
        return h;
    }

    bool operator==(const Vocabulary& other) const { return tokens_ == other.tokens_; }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

/// Frequency-descending, then lexicographic id order; deterministic for a given corpus.
inline Vocabulary build_vocab(const std::vector<Tokens>& corpus, std::size_t min_count = 1) {
    if (min_count < 1) throw InvalidArgument("build_vocab: min_count must be >= 1");
    std::map<std::string, std::size_t> counts;
    for (const auto& sentence : corpus)
        for (const auto& t : sentence) ++counts[t];
    Vocabulary specials;
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [token, count] : counts) {
        if (count >= min_count && !specials.find(token)) kept.emplace_back(token, count);
    }
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    std::vector<std::string> words;
    words.reserve(kept.size());
    for (auto& [token, count] : kept) words.push_back(std::move(token));
    return Vocabulary(words);
}

inline const std::vector<std::string>& default_classes() {
    static const std::vector<std::string> classes{"neutral", "toxic"};
    return classes;
}

inline constexpr int kNeutral = 0;
inline constexpr int kToxic = 1;

struct LabeledRecord {
    int label = 0;
    Tokens tokens;
};

struct LabeledCorpus {
    std::vector<std::string> classes = default_classes();
    std::vector<LabeledRecord> records;

    std::vector<Tokens> sentences() const {
        std::vector<Tokens> out;
        out.reserve(records.size());
        for (const auto& r : records) out.push_back(r.tokens);
        return out;
    }

    std::vector<Tokens> sentences_of(int label) const {
        std::vector<Tokens> out;
        for (const auto& r : records)
            if (r.label == label) out.push_back(r.tokens);
        return out;
    }
};

inline void strip_cr(std::string& line) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
}

inline bool is_blank(std::string_view line) {
    return std::all_of(line.begin(), line.end(), [](char c) { return detail::is_space(static_cast<unsigned char>(c)); });
}

/// `label<TAB>text` per line; blank lines are skipped.
inline LabeledCorpus read_labeled_corpus(std::istream& in, const std::vector<std::string>& classes = default_classes(),
                                         const TokenizerConfig& config = {}) {
    LabeledCorpus corpus;
    corpus.classes = classes;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        strip_cr(line);
        if (is_blank(line)) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(line_no, "expected label<TAB>text");
        const std::string label = line.substr(0, tab);
        auto it = std::find(classes.begin(), classes.end(), label);
        if (it == classes.end()) throw UnknownLabel(line_no, label);
        LabeledRecord record{static_cast<int>(it - classes.begin()), tokenize(std::string_view(line).substr(tab + 1), config)};
        if (record.tokens.empty()) throw ParseError(line_no, "empty text");
        corpus.records.push_back(std::move(record));
    }
    return corpus;
}

inline LabeledCorpus read_labeled_corpus(const std::string& path, const std::vector<std::string>& classes = default_classes(),
                                         const TokenizerConfig& config = {}) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    return read_labeled_corpus(in, classes, config);
}

/// One sentence per line, line structure preserved (blank lines kept as empty strings).
inline std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        strip_cr(line);
        lines.push_back(line);
    }
    return lines;
}

inline void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream out(path);
    if (!out) throw Error("cannot write " + path);
    for (const auto& l : lines) out << l << '\n';
}

} // namespace detox
