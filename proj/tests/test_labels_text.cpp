#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <set>
#include <string>
#include <vector>

#include "comma/labels.hpp"
#include "comma/rng.hpp"
#include "comma/text.hpp"

using namespace comma;

TEST_CASE("motivation labels: canonical ids and order") {
    const auto ids = label_ids(Task::mu);
    REQUIRE(ids.size() == 5);
    CHECK(ids[0] == "physiological");
    CHECK(ids[1] == "stability");
    CHECK(ids[2] == "love");
    CHECK(ids[3] == "esteem");
    CHECK(ids[4] == "spiritual_growth");
}

TEST_CASE("emotion labels: canonical ids and order") {
    const auto ids = label_ids(Task::eu);
    REQUIRE(ids.size() == 8);
    CHECK(ids[0] == "joy");
    CHECK(ids[1] == "trust");
    CHECK(ids[2] == "sadness");
    CHECK(ids[3] == "surprise");
    CHECK(ids[4] == "fear");
    CHECK(ids[5] == "disgust");
    CHECK(ids[6] == "anger");
    CHECK(ids[7] == "anticipation");
}

TEST_CASE("motivation parsing accepts upstream aliases") {
    CHECK(parse_motivation("physiological") == Motivation::physiological);
    CHECK(parse_motivation("physiological needs") == Motivation::physiological);
    CHECK(parse_motivation("Physiological Needs") == Motivation::physiological);
    CHECK(parse_motivation("love and belonging") == Motivation::love);
    CHECK(parse_motivation("love/belonging") == Motivation::love);
    CHECK(parse_motivation("esteem") == Motivation::esteem);
    CHECK(parse_motivation("self actualization") ==
          Motivation::spiritual_growth);
    CHECK(parse_motivation("spiritual growth") == Motivation::spiritual_growth);
    CHECK(parse_motivation("spirit growth") == Motivation::spiritual_growth);
    CHECK(parse_motivation("stability") == Motivation::stability);
    CHECK(!parse_motivation("joy").has_value());
    CHECK(!parse_motivation("").has_value());
}

TEST_CASE("emotion parsing is case and punctuation tolerant") {
    CHECK(parse_emotion("joy") == Emotion::joy);
    CHECK(parse_emotion("Joy") == Emotion::joy);
    CHECK(parse_emotion("anticipation ") == Emotion::anticipation);
    CHECK(parse_emotion("Trust") == Emotion::trust);
    CHECK(!parse_emotion("esteem").has_value());
}

TEST_CASE("label id round trip") {
    for (auto m : all_motivations()) CHECK(parse_motivation(id(m)) == m);
    for (auto e : all_emotions()) CHECK(parse_emotion(id(e)) == e);
}

TEST_CASE("tokenizer keeps template tokens atomic") {
    const auto toks = text::word_tokens("[ht] Josh went home. [/ht] and");
    const std::vector<std::string> want = {"[ht]", "josh", "went",  "home",
                                           ".",    "[/ht]", "and"};
    CHECK(toks == want);
}

TEST_CASE("tokenizer splits punctuation and lowercases") {
    const auto toks = text::word_tokens("Kim's mom said: \"Go home!\"");
    const std::vector<std::string> want = {"kim's", "mom", "said", ":",
                                           "go",    "home", "!"};
    CHECK(toks == want);
}

TEST_CASE("tokenizer without lowercasing preserves case") {
    const auto toks = text::word_tokens("Mary smiled", false);
    const std::vector<std::string> want = {"Mary", "smiled"};
    CHECK(toks == want);
}

TEST_CASE("detokenize attaches punctuation to the left") {
    CHECK(text::detokenize({"go", "home", "!"}) == "go home!");
    CHECK(text::detokenize({"a", ",", "b", "."}) == "a, b.");
    CHECK(text::detokenize({}) == "");
}

TEST_CASE("stop words cover function words, not content words") {
    CHECK(text::is_stop_word("the"));
    CHECK(text::is_stop_word("of"));
    CHECK(text::is_stop_word("and"));
    CHECK(text::is_stop_word("at"));
    CHECK(!text::is_stop_word("sea"));
    CHECK(!text::is_stop_word("creature"));
}

TEST_CASE("lemmatizer handles documented examples") {
    CHECK(text::lemmatize("enjoyed") == "enjoy");
    CHECK(text::lemmatize("looking") == "look");
    CHECK(text::lemmatize("creatures") == "creature");
    CHECK(text::lemmatize("sea") == "sea");
}

TEST_CASE("lemmatizer suffix rules") {
    CHECK(text::lemmatize("cries") == "cry");
    CHECK(text::lemmatize("hugged") == "hug");
    CHECK(text::lemmatize("running") == "run");
    CHECK(text::lemmatize("watches") == "watch");
    CHECK(text::lemmatize("boxes") == "box");
    CHECK(text::lemmatize("classes") == "class");
    CHECK(text::lemmatize("tried") == "try");
    CHECK(text::lemmatize("agreed") == "agree");
    CHECK(text::lemmatize("smiled") == "smile");
    CHECK(text::lemmatize("hoping") == "hope");
    CHECK(text::lemmatize("dogs") == "dog");
    CHECK(text::lemmatize("glass") == "glass");
    CHECK(text::lemmatize("bus") == "bus");
}

TEST_CASE("lemmatizer irregular forms") {
    CHECK(text::lemmatize("ate") == "eat");
    CHECK(text::lemmatize("went") == "go");
    CHECK(text::lemmatize("ran") == "run");
    CHECK(text::lemmatize("children") == "child");
    CHECK(text::lemmatize("feet") == "foot");
    CHECK(text::lemmatize("felt") == "feel");
}

TEST_CASE("lemmatizer is idempotent on its own output") {
    const std::vector<std::string> words = {
        "enjoyed", "looking", "creatures", "cries",  "hugged", "running",
        "watches", "tried",   "agreed",    "smiled", "ate",    "children"};
    for (const auto& w : words) {
        const auto lemma = text::lemmatize(w);
        CHECK(text::lemmatize(lemma) == lemma);
    }
}

TEST_CASE("pos guess marks verbs and adjectives") {
    CHECK(text::guess_pos("enjoyed", "enjoy") == text::Pos::verb);
    CHECK(text::guess_pos("looking", "look") == text::Pos::verb);
    CHECK(text::guess_pos("happy", "happy") == text::Pos::adjective);
    CHECK(text::guess_pos("beautiful", "beautiful") == text::Pos::adjective);
    CHECK(text::guess_pos("creatures", "creature") == text::Pos::noun);
    CHECK(text::guess_pos("sea", "sea") == text::Pos::noun);
}

TEST_CASE("gender guess from mention tokens") {
    CHECK(text::guess_gender("Kim") == text::Gender::female);
    CHECK(text::guess_gender("her mom") == text::Gender::female);
    CHECK(text::guess_gender("Josh") == text::Gender::male);
    CHECK(text::guess_gender("the waiter") == text::Gender::unknown);
    CHECK(text::guess_gender("I (myself)") == text::Gender::unknown);
}

TEST_CASE("fnv1a64 matches reference vectors") {
    CHECK(text::fnv1a64("") == 0xcbf29ce484222325ull);
    CHECK(text::fnv1a64("a") == 0xaf63dc4c8601ec8cull);
    CHECK(text::fnv1a64("foobar") == 0x85944171f73967e8ull);
    CHECK(text::fnv1a64_hex("foobar") == "85944171f73967e8");
}

TEST_CASE("vocab reserves unk, bos, eos and special tokens") {
    text::Vocab v;
    CHECK(v.id_of("[unk]") == text::Vocab::kUnk);
    CHECK(v.id_of("[bos]") == text::Vocab::kBos);
    CHECK(v.id_of("[eos]") == text::Vocab::kEos);
    for (const auto& s : text::special_tokens()) {
        CHECK(v.id_of(s) != text::Vocab::kUnk);
    }
}

TEST_CASE("vocab build ranks by frequency then lexicographic") {
    const std::vector<std::vector<std::string>> docs = {
        {"b", "b", "a", "c"}, {"b", "a", "z"}};
    const auto v = text::Vocab::build(docs, 100, 1);
    CHECK(v.id_of("b") < v.id_of("a"));
    CHECK(v.id_of("a") < v.id_of("c"));
    CHECK(v.id_of("c") < v.id_of("z"));
    CHECK(v.id_of("missing") == text::Vocab::kUnk);
}

TEST_CASE("vocab respects max size and min count") {
    std::vector<std::vector<std::string>> docs;
    for (int i = 0; i < 3; ++i) docs.push_back({"common"});
    docs.push_back({"rare"});
    const auto v = text::Vocab::build(docs, 100, 2);
    CHECK(v.id_of("common") != text::Vocab::kUnk);
    CHECK(v.id_of("rare") == text::Vocab::kUnk);
}

TEST_CASE("vocab encode decode round trip with sentinels") {
    text::Vocab v;
    v.add("hello");
    v.add("world");
    const auto ids = v.encode({"hello", "world", "unseen"});
    REQUIRE(ids.size() == 5);
    CHECK(ids.front() == text::Vocab::kBos);
    CHECK(ids.back() == text::Vocab::kEos);
    CHECK(ids[3] == text::Vocab::kUnk);
    const auto back = v.decode(ids);
    const std::vector<std::string> want = {"hello", "world", "[unk]"};
    CHECK(back == want);
}

TEST_CASE("rng is deterministic per seed") {
    Rng a(7), b(7), c(8);
    for (int i = 0; i < 16; ++i) {
        CHECK(a.next() == b.next());
    }
    CHECK(a.next() != c.next());
}

TEST_CASE("rng bounded draws stay in range and cover values") {
    Rng r(123);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 400; ++i) {
        const auto x = r.bounded(7);
        CHECK(x < 7);
        seen.insert(x);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("rng unit stays in [0,1) and gaussian has sane moments") {
    Rng r(5);
    double sum = 0.0, sum2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = r.unit();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
    for (int i = 0; i < n; ++i) {
        const double g = r.gaussian();
        sum += g;
        sum2 += g * g;
    }
    CHECK(std::abs(sum / n) < 0.05);
    CHECK(std::abs(sum2 / n - 1.0) < 0.05);
}

TEST_CASE("rng shuffle is a seed-stable permutation") {
    std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7};
    Rng a(42);
    a.shuffle(v);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>({0, 1, 2, 3, 4, 5, 6, 7}));

    std::vector<int> w = {0, 1, 2, 3, 4, 5, 6, 7};
    Rng b(42);
    b.shuffle(w);
    CHECK(v == w);
}
