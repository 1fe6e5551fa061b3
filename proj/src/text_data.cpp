// Embedded lexicons: stop words, irregular inflections, common verbs and
// adjectives for the POS guesser, gender lexicon. Kept in one place so the
// extraction-config fingerprint can cover them via kLexiconVersion.

#include <map>
#include <set>
#include <string_view>

namespace comma::text::data {

const char* kLexiconVersion = "lex-v1";

// Standard English stop list (NLTK-style) plus contraction fragments that
// our tokenizer produces as standalone tokens.
const std::set<std::string_view>& stop_words() {
    static const std::set<std::string_view> words = {
        "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you",
        "you're", "you've", "you'll", "you'd", "your", "yours", "yourself",
        "yourselves", "he", "him", "his", "himself", "she", "she's", "her",
        "hers", "herself", "it", "it's", "its", "itself", "they", "them",
        "their", "theirs", "themselves", "what", "which", "who", "whom",
        "this", "that", "that'll", "these", "those", "am", "is", "are",
        "was", "were", "be", "been", "being", "have", "has", "had", "having",
        "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if",
        "or", "because", "as", "until", "while", "of", "at", "by", "for",
        "with", "about", "against", "between", "into", "through", "during",
        "before", "after", "above", "below", "to", "from", "up", "down",
        "in", "out", "on", "off", "over", "under", "again", "further",
        "then", "once", "here", "there", "when", "where", "why", "how",
        "all", "any", "both", "each", "few", "more", "most", "other",
        "some", "such", "no", "nor", "not", "only", "own", "same", "so",
        "than", "too", "very", "s", "t", "can", "will", "just", "don",
        "don't", "should", "should've", "now", "d", "ll", "m", "o", "re",
        "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn",
        "didn't", "doesn", "doesn't", "hadn", "hadn't", "hasn", "hasn't",
        "haven", "haven't", "isn", "isn't", "ma", "mightn", "mightn't",
        "mustn", "mustn't", "needn", "needn't", "shan", "shan't", "shouldn",
        "shouldn't", "wasn", "wasn't", "weren", "weren't", "won", "won't",
        "wouldn", "wouldn't", "would", "could", "cannot", "also",
    };
    return words;
}

// Irregular verb past/participle forms -> base.
const std::map<std::string_view, std::string_view>& irregular_verbs() {
    static const std::map<std::string_view, std::string_view> v = {
        {"went", "go"},       {"gone", "go"},      {"goes", "go"},
        {"was", "be"},        {"were", "be"},      {"ate", "eat"},
        {"eaten", "eat"},     {"got", "get"},      {"gotten", "get"},
        {"ran", "run"},       {"saw", "see"},      {"seen", "see"},
        {"took", "take"},     {"taken", "take"},   {"made", "make"},
        {"came", "come"},     {"felt", "feel"},    {"found", "find"},
        {"gave", "give"},     {"given", "give"},   {"knew", "know"},
        {"known", "know"},    {"thought", "think"},{"told", "tell"},
        {"said", "say"},      {"bought", "buy"},   {"brought", "bring"},
        {"left", "leave"},    {"met", "meet"},     {"sat", "sit"},
        {"stood", "stand"},   {"lost", "lose"},    {"won", "win"},
        {"wore", "wear"},     {"drove", "drive"},  {"driven", "drive"},
        {"wrote", "write"},   {"written", "write"},{"spoke", "speak"},
        {"spoken", "speak"},  {"broke", "break"},  {"broken", "break"},
        {"chose", "choose"},  {"chosen", "choose"},{"fell", "fall"},
        {"fallen", "fall"},   {"flew", "fly"},     {"grew", "grow"},
        {"grown", "grow"},    {"heard", "hear"},   {"held", "hold"},
        {"kept", "keep"},     {"paid", "pay"},     {"put", "put"},
        {"read", "read"},     {"rode", "ride"},    {"sang", "sing"},
        {"slept", "sleep"},   {"sold", "sell"},    {"sent", "send"},
        {"swam", "swim"},     {"taught", "teach"}, {"threw", "throw"},
        {"thrown", "throw"},  {"woke", "wake"},    {"drank", "drink"},
        {"drunk", "drink"},   {"began", "begin"},  {"begun", "begin"},
        {"built", "build"},   {"caught", "catch"}, {"cut", "cut"},
        {"did", "do"},        {"done", "do"},      {"had", "have"},
        {"let", "let"},       {"ate", "eat"},      {"spent", "spend"},
        {"ran", "run"},       {"meant", "mean"},   {"lit", "light"},
    };
    return v;
}

// Irregular plural -> singular.
const std::map<std::string_view, std::string_view>& irregular_nouns() {
    static const std::map<std::string_view, std::string_view> n = {
        {"children", "child"}, {"men", "man"},     {"women", "woman"},
        {"people", "person"},  {"feet", "foot"},   {"teeth", "tooth"},
        {"mice", "mouse"},     {"geese", "goose"}, {"wives", "wife"},
        {"knives", "knife"},   {"leaves", "leaf"}, {"lives", "life"},
        {"shelves", "shelf"},  {"wolves", "wolf"},
    };
    return n;
}

// Base forms the POS guesser treats as verbs even without -ed/-ing evidence.
const std::set<std::string_view>& common_verbs() {
    static const std::set<std::string_view> v = {
        "go",    "be",    "eat",   "get",   "run",   "see",   "take",
        "make",  "come",  "feel",  "find",  "give",  "know",  "think",
        "tell",  "say",   "buy",   "bring", "leave", "meet",  "sit",
        "stand", "lose",  "win",   "wear",  "drive", "write", "speak",
        "break", "choose","fall",  "fly",   "grow",  "hear",  "hold",
        "keep",  "pay",   "put",   "read",  "ride",  "sing",  "sleep",
        "sell",  "send",  "swim",  "teach", "throw", "wake",  "drink",
        "begin", "build", "catch", "cut",   "do",    "have",  "let",
        "spend", "mean",  "want",  "need",  "like",  "love",  "enjoy",
        "look",  "walk",  "talk",  "play",  "work",  "help",  "try",
        "call",  "ask",   "use",   "start", "stop",  "open",  "close",
        "turn",  "move",  "live",  "stay",  "visit", "watch", "learn",
        "study", "cook",  "clean", "smile", "laugh", "cry",   "shout",
        "hug",   "kiss",  "dance", "jump",  "hope",  "wish",  "plan",
        "decide","save",  "practice",
    };
    return v;
}

// Gender lexicon: pronouns, kinship/title terms and frequent given names.
const std::set<std::string_view>& male_terms() {
    static const std::set<std::string_view> t = {
        "he", "him", "his", "himself", "man", "men", "boy", "boys",
        "father", "dad", "daddy", "brother", "son", "husband", "uncle",
        "grandfather", "grandpa", "mr", "sir", "king", "prince", "gentleman",
        "james", "john", "robert", "michael", "william", "david", "richard",
        "joseph", "thomas", "charles", "christopher", "daniel", "matthew",
        "anthony", "mark", "donald", "steven", "paul", "andrew", "joshua",
        "josh",
        "kenneth", "kevin", "brian", "george", "timothy", "ronald", "edward",
        "jason", "jeffrey", "ryan", "jacob", "gary", "nicholas", "eric",
        "jonathan", "stephen", "larry", "justin", "scott", "brandon",
        "benjamin", "samuel", "gregory", "frank", "alexander", "raymond",
        "patrick", "jack", "dennis", "jerry", "tyler", "aaron", "jose",
        "adam", "nathan", "henry", "douglas", "zachary", "peter", "kyle",
        "ethan", "walter", "noah", "jeremy", "christian", "keith", "roger",
        "terry", "austin", "sean", "gerald", "carl", "harold", "dylan",
        "arthur", "lawrence", "jordan", "jesse", "bryan", "billy", "bruce",
        "tom", "tim", "bob", "bill", "joe", "jim", "mike", "dave", "dan",
        "steve", "tony", "fred", "sam", "max", "alex", "luke", "owen",
    };
    return t;
}

const std::set<std::string_view>& female_terms() {
    static const std::set<std::string_view> t = {
        "she", "her", "hers", "herself", "woman", "women", "girl", "girls",
        "mother", "mom", "mommy", "sister", "daughter", "wife", "aunt",
        "grandmother", "grandma", "mrs", "ms", "miss", "madam", "queen",
        "princess", "lady", "mary", "patricia", "jennifer", "linda",
        "elizabeth", "barbara", "susan", "jessica", "sarah", "karen",
        "lisa", "nancy", "betty", "margaret", "sandra", "ashley",
        "kimberly", "emily", "donna", "michelle", "carol", "amanda",
        "dorothy", "melissa", "deborah", "stephanie", "rebecca", "sharon",
        "laura", "cynthia", "kathleen", "amy", "angela", "shirley", "anna",
        "brenda", "pamela", "emma", "nicole", "helen", "samantha",
        "katherine", "christine", "debra", "rachel", "carolyn", "janet",
        "catherine", "maria", "heather", "diane", "ruth", "julie", "olivia",
        "joyce", "virginia", "victoria", "kelly", "lauren", "christina",
        "joan", "evelyn", "judith", "megan", "andrea", "cheryl", "hannah",
        "jacqueline", "martha", "gloria", "teresa", "ann", "sara", "madison",
        "frances", "kathryn", "janice", "jean", "abigail", "alice", "jane",
        "julia", "judy", "sophia", "grace", "denise", "amber", "doris",
        "marilyn", "danielle", "beverly", "isabella", "theresa", "diana",
        "natalie", "brittany", "charlotte", "kim", "sue", "kate", "lucy",
        "ava", "mia", "zoe", "ella", "lily", "chloe", "beth", "meg",
    };
    return t;
}

// Adjective suffixes for the POS guesser.
const std::set<std::string_view>& adjective_suffixes() {
    static const std::set<std::string_view> s = {
        "ous", "ful", "ive", "able", "ible", "less", "ish", "ical",
    };
    return s;
}

const std::set<std::string_view>& common_adjectives() {
    static const std::set<std::string_view> a = {
        "happy",  "sad",    "angry",  "afraid", "scared", "glad",
        "good",   "bad",    "big",    "small",  "new",    "old",
        "great",  "nice",   "safe",   "warm",   "cold",   "hungry",
        "thirsty","tired",  "proud",  "calm",   "eager",  "excited",
        "nervous","upset",  "lonely", "sick",   "healthy","strong",
        "brave",  "sorry",  "sure",   "ready",  "favorite",
    };
    return a;
}

}  // namespace comma::text::data
