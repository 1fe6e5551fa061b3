#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace comma::text {

// Lightweight English text machinery shared by the concept KBs, the desk
// encoders and the metrics. Rule-based on purpose: deterministic, no model
// files, behavior fully specified by the tables in text_data.cpp and the
// suffix rules in lemmatize().

// Bracket tags treated as atomic tokens everywhere.
const std::vector<std::string>& special_tokens();

// Splits into lowercase word tokens. Special tokens stay atomic, words are
// maximal [A-Za-z0-9']+ runs, and . , ! ? ; : come out as one-char tokens.
// Other bytes separate tokens and are dropped.
std::vector<std::string> word_tokens(std::string_view text,
                                     bool lowercase = true);

// Inverse-ish of word_tokens for generated text: joins with single spaces
// and attaches sentence punctuation to the preceding token.
std::string detokenize(const std::vector<std::string>& tokens);

bool is_stop_word(std::string_view lowercase_word);

// Coarse part-of-speech classes used by the concept filters.
enum class Pos { noun, verb, adjective };

std::string_view pos_name(Pos p);

// Rule-based lemmatizer: irregular-form tables first, then suffix rules
// (-ies/-ied -> y, -es cluster rules, -s, -ed/-ing with doubled-consonant
// undo and CVC e-restore, -ly stripping). Input must be lowercase.
std::string lemmatize(std::string_view word);

// Version tag of the embedded lexicons; recorded in config fingerprints.
std::string_view lexicon_version();

// Suffix/lexicon heuristic over (raw token, lemma). Every word maps into one
// of the three content classes; noun is the fallback.
Pos guess_pos(std::string_view raw, std::string_view lemma);

// Gender lexicon over character mention strings (pronouns, kinship terms and
// a small given-name list). Heuristic; "unknown" is the honest default.
enum class Gender { male, female, unknown };
Gender guess_gender(std::string_view character_mention);

// FNV-1a 64 over bytes; the project-wide fingerprint primitive.
uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

// Token <-> id mapping with reserved entries. Index 0 is <unk>, 1 is <s>,
// 2 is </s>; special bracket tags are always registered.
class Vocab {
public:
    static constexpr int kUnk = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;

    Vocab();

    // Builds from token streams: keeps the max_size most frequent tokens with
    // count >= min_count, ties broken lexicographically.
    static Vocab build(const std::vector<std::vector<std::string>>& docs,
                       size_t max_size = 20000, int min_count = 1);

    int add(const std::string& token);
    int id_of(std::string_view token) const;          // kUnk when absent
    const std::string& token_of(int id) const;
    std::vector<int> encode(const std::vector<std::string>& tokens) const;
    std::vector<std::string> decode(const std::vector<int>& ids) const;
    size_t size() const { return tokens_.size(); }

    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::vector<std::string> tokens_;
    std::map<std::string, int, std::less<>> index_;
};

}  // namespace comma::text
