#include "comma/text.hpp"

#include <algorithm>
#include <cctype>
#include <optional>
#include <map>
#include <set>

#include "comma/errors.hpp"

namespace comma::text {

namespace data {
extern const char* kLexiconVersion;
const std::set<std::string_view>& stop_words();
const std::map<std::string_view, std::string_view>& irregular_verbs();
const std::map<std::string_view, std::string_view>& irregular_nouns();
const std::set<std::string_view>& common_verbs();
const std::set<std::string_view>& male_terms();
const std::set<std::string_view>& female_terms();
const std::set<std::string_view>& adjective_suffixes();
const std::set<std::string_view>& common_adjectives();
}  // namespace data

std::string_view lexicon_version() { return data::kLexiconVersion; }

const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> toks = {"[ht]",  "[/ht]", "[mot]",
                                                  "[/mot]", "[act]", "[/act]"};
    return toks;
}

namespace {

bool is_word_char(char c) {
    const unsigned char u = static_cast<unsigned char>(c);
    return std::isalnum(u) || c == '\'';
}

bool is_punct_token(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

// Returns the special token starting at text[i], or empty.
std::string_view special_at(std::string_view text, size_t i) {
    if (text[i] != '[') return {};
    for (const auto& tok : special_tokens()) {
        if (text.compare(i, tok.size(), tok) == 0) return tok;
    }
    return {};
}

bool is_vowel(char c) {
    return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
}

// Consonant-vowel-consonant ending (final consonant not w/x/y), the classic
// e-restore trigger: "smil" -> "smile", "danc" -> "dance".
bool cvc_ending(std::string_view s) {
    if (s.size() < 3) return false;
    const char c2 = s[s.size() - 1];
    const char c1 = s[s.size() - 2];
    const char c0 = s[s.size() - 3];
    if (is_vowel(c2) || c2 == 'w' || c2 == 'x' || c2 == 'y') return false;
    if (!is_vowel(c1)) return false;
    if (is_vowel(c0)) return false;
    return true;
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Undo doubled final consonant left by -ed/-ing stripping: stopp -> stop.
// ll/ss/zz stay (tell, miss, buzz).
std::string undo_double(std::string stem) {
    if (stem.size() >= 2) {
        const char a = stem[stem.size() - 1];
        const char b = stem[stem.size() - 2];
        if (a == b && !is_vowel(a) && a != 'l' && a != 's' && a != 'z') {
            stem.pop_back();
        }
    }
    return stem;
}

std::string strip_verb_suffix(std::string_view word, size_t suffix_len) {
    std::string stem(word.substr(0, word.size() - suffix_len));
    std::string undone = undo_double(stem);
    if (undone.size() != stem.size()) return undone;
    if (cvc_ending(stem)) stem.push_back('e');
    return stem;
}

std::optional<std::string> irregular_lookup(
    const std::map<std::string_view, std::string_view>& table,
    std::string_view word) {
    auto it = table.find(word);
    if (it != table.end()) return std::string(it->second);
    return std::nullopt;
}

}  // namespace

std::vector<std::string> word_tokens(std::string_view text, bool lowercase) {
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            out.push_back(current);
            current.clear();
        }
    };
    for (size_t i = 0; i < text.size();) {
        const std::string_view special = special_at(text, i);
        if (!special.empty()) {
            flush();
            out.emplace_back(special);
            i += special.size();
            continue;
        }
        const char c = text[i];
        if (is_word_char(c)) {
            current.push_back(
                lowercase ? static_cast<char>(std::tolower(
                                static_cast<unsigned char>(c)))
                          : c);
        } else {
            flush();
            if (is_punct_token(c)) out.emplace_back(1, c);
        }
        ++i;
    }
    flush();
    return out;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    for (const auto& tok : tokens) {
        if (tok.size() == 1 && is_punct_token(tok[0])) {
            out += tok;
            continue;
        }
        if (!out.empty()) out.push_back(' ');
        out += tok;
    }
    return out;
}

bool is_stop_word(std::string_view lowercase_word) {
    return data::stop_words().count(lowercase_word) > 0;
}

std::string_view pos_name(Pos p) {
    switch (p) {
        case Pos::noun: return "noun";
        case Pos::verb: return "verb";
        case Pos::adjective: return "adjective";
    }
    return "noun";
}

std::string lemmatize(std::string_view word) {
    if (auto hit = irregular_lookup(data::irregular_verbs(), word)) return *hit;
    if (auto hit = irregular_lookup(data::irregular_nouns(), word)) return *hit;
    if (word.size() <= 3) return std::string(word);

    // Plurals / 3rd-person -s.
    if (ends_with(word, "ies") && word.size() > 4) {
        return std::string(word.substr(0, word.size() - 3)) + "y";
    }
    if (ends_with(word, "sses") || ends_with(word, "ches") ||
        ends_with(word, "shes") || ends_with(word, "xes") ||
        ends_with(word, "oes")) {
        return std::string(word.substr(0, word.size() - 2));
    }
    if (word.back() == 's' && !ends_with(word, "ss") && !ends_with(word, "us") &&
        !ends_with(word, "is")) {
        return std::string(word.substr(0, word.size() - 1));
    }

    // Past tense.
    if (ends_with(word, "ied") && word.size() > 4) {
        return std::string(word.substr(0, word.size() - 3)) + "y";
    }
    if (ends_with(word, "eed") && word.size() > 4) {
        return std::string(word.substr(0, word.size() - 1));
    }
    if (ends_with(word, "ed") && word.size() > 4) {
        return strip_verb_suffix(word, 2);
    }

    // Progressive.
    if (ends_with(word, "ing") && word.size() >= 5) {
        return strip_verb_suffix(word, 3);
    }

    // Adverbs -> adjective base.
    if (ends_with(word, "ily") && word.size() > 4) {
        return std::string(word.substr(0, word.size() - 3)) + "y";
    }
    if (ends_with(word, "ly") && word.size() > 4) {
        return std::string(word.substr(0, word.size() - 2));
    }

    return std::string(word);
}

Pos guess_pos(std::string_view raw, std::string_view lemma) {
    if (data::common_verbs().count(lemma) > 0) return Pos::verb;
    if ((ends_with(raw, "ed") || ends_with(raw, "ing")) && raw != lemma) {
        return Pos::verb;
    }
    if (data::common_adjectives().count(lemma) > 0) return Pos::adjective;
    for (const auto& suffix : data::adjective_suffixes()) {
        if (ends_with(lemma, suffix)) return Pos::adjective;
    }
    if (ends_with(raw, "ly") && raw != lemma) return Pos::adjective;
    return Pos::noun;
}

Gender guess_gender(std::string_view character_mention) {
    // Look at each word of the mention; first decisive hit wins.
    for (const auto& tok : word_tokens(character_mention)) {
        if (data::male_terms().count(tok) > 0) return Gender::male;
        if (data::female_terms().count(tok) > 0) return Gender::female;
    }
    return Gender::unknown;
}

uint64_t fnv1a64(std::string_view bytes) {
    uint64_t h = 14695981039346656037ULL;
    for (const char c : bytes) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

std::string fnv1a64_hex(std::string_view bytes) {
    const uint64_t h = fnv1a64(bytes);
    char buf[17];
    snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Vocab::Vocab() {
    add("[unk]");
    add("[bos]");
    add("[eos]");
    for (const auto& tok : special_tokens()) add(tok);
}

Vocab Vocab::build(const std::vector<std::vector<std::string>>& docs,
                   size_t max_size, int min_count) {
    std::map<std::string, int> counts;
    for (const auto& doc : docs) {
        for (const auto& tok : doc) ++counts[tok];
    }
    std::vector<std::pair<int, std::string>> ranked;
    ranked.reserve(counts.size());
    for (auto& [tok, n] : counts) {
        if (n >= min_count) ranked.emplace_back(-n, tok);
    }
    std::sort(ranked.begin(), ranked.end());

    Vocab vocab;
    for (const auto& [neg, tok] : ranked) {
        if (vocab.size() >= max_size) break;
        vocab.add(tok);
    }
    return vocab;
}

int Vocab::add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
}

int Vocab::id_of(std::string_view token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token_of(int id) const {
    if (id < 0 || id >= static_cast<int>(tokens_.size())) {
        throw contract_error("token id out of range: " + std::to_string(id));
    }
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int> Vocab::encode(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 2);
    ids.push_back(kBos);
    for (const auto& tok : tokens) ids.push_back(id_of(tok));
    ids.push_back(kEos);
    return ids;
}

std::vector<std::string> Vocab::decode(const std::vector<int>& ids) const {
    std::vector<std::string> toks;
    toks.reserve(ids.size());
    for (int id : ids) {
        if (id == kBos || id == kEos) continue;
        toks.push_back(token_of(id));
    }
    return toks;
}

}  // namespace comma::text
