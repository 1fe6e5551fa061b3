#include "comma/synth.hpp"

#include <array>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "comma/errors.hpp"
#include "comma/io.hpp"
#include "comma/labels.hpp"
#include "comma/rng.hpp"

namespace comma::synth {

namespace {

using nlohmann::json;

// Six cue words per label keep every cue below the default 5% document
// frequency cutoff, so the concept KB retains the signal.
constexpr std::array<std::array<const char*, 6>, 8> kEmotionNouns = {{
    {"cake", "parade", "melody", "rainbow", "carnival", "bouquet"},
    {"handshake", "promise", "oath", "contract", "alliance", "guardian"},
    {"funeral", "farewell", "teardrop", "obituary", "ruins", "goodbye"},
    {"firework", "jackpot", "twist", "ambush", "windfall", "miracle"},
    {"spider", "thunder", "nightmare", "shadow", "siren", "basement"},
    {"garbage", "slime", "stench", "mold", "roach", "sewage"},
    {"argument", "insult", "quarrel", "outrage", "feud", "grudge"},
    {"ticket", "countdown", "itinerary", "invitation", "forecast", "preview"},
}};

constexpr std::array<std::array<const char*, 6>, 8> kEmotionVerbs = {{
    {"smiled", "laughed", "cheered", "beamed", "giggled", "celebrated"},
    {"nodded", "agreed", "relied", "confided", "believed", "trusted"},
    {"wept", "cried", "sighed", "mourned", "sobbed", "slumped"},
    {"gasped", "blinked", "startled", "marveled", "jumped", "gaped"},
    {"trembled", "shivered", "panicked", "froze", "cowered", "flinched"},
    {"grimaced", "gagged", "recoiled", "cringed", "retched", "frowned"},
    {"fumed", "shouted", "snapped", "glared", "scowled", "stormed"},
    {"waited", "prepared", "packed", "planned", "rehearsed", "counted"},
}};

constexpr std::array<std::array<const char*, 6>, 5> kMotivationNouns = {{
    {"sandwich", "breakfast", "dinner", "casserole", "lemonade", "porridge"},
    {"paycheck", "mortgage", "savings", "insurance", "toolbox", "pension"},
    {"sweetheart", "valentine", "anniversary", "cousin", "roommate",
     "neighbor"},
    {"trophy", "medal", "diploma", "promotion", "applause", "certificate"},
    {"scripture", "sermon", "pilgrimage", "mantra", "hymn", "psalm"},
}};

constexpr std::array<std::array<const char*, 6>, 5> kMotivationVerbs = {{
    {"ate", "devoured", "cooked", "nibbled", "gulped", "tasted"},
    {"saved", "budgeted", "locked", "insured", "repaired", "stocked"},
    {"hugged", "embraced", "kissed", "comforted", "reassured", "cuddled"},
    {"won", "achieved", "impressed", "earned", "triumphed", "excelled"},
    {"chanted", "prayed", "reflected", "journaled", "volunteered", "fasted"},
}};

constexpr std::array<const char*, 6> kFemaleNames = {"Anna",  "Emma",
                                                     "Sarah", "Laura",
                                                     "Rachel", "Nicole"};
constexpr std::array<const char*, 6> kMaleNames = {"James",  "Kevin", "Eric",
                                                   "Daniel", "Ryan",  "Thomas"};

constexpr std::array<const char*, 8> kAdverbs = {"today", "again", "twice",
                                                 "early", "later", "soon",
                                                 "outside", "upstairs"};

constexpr std::array<const char*, 6> kNeutral = {
    "strolled past the market", "waited near the corner",
    "talked by the window",     "wandered through town",
    "looked around the yard",   "rested on the porch"};

// Mild label skew, mirroring the head-heavy distribution of the upstream
// annotations.
constexpr std::array<int, 8> kEmotionWeights = {3, 2, 2, 1, 1, 1, 2, 2};
constexpr std::array<int, 5> kMotivationWeights = {4, 3, 3, 2, 2};

template <size_t N>
int weighted_pick(Rng& rng, const std::array<int, N>& weights) {
    int total = 0;
    for (int w : weights) total += w;
    auto roll = static_cast<int>(rng.bounded(static_cast<uint64_t>(total)));
    for (size_t i = 0; i < N; ++i) {
        roll -= weights[i];
        if (roll < 0) return static_cast<int>(i);
    }
    return static_cast<int>(N) - 1;
}

std::string motivation_alias(Motivation m, Rng& rng) {
    const bool alt = rng.bounded(3) == 0;
    switch (m) {
        case Motivation::physiological:
            return alt ? "physiological needs" : "physiological";
        case Motivation::love:
            return alt ? "love and belonging" : "love";
        case Motivation::spiritual_growth:
            return alt ? "self-actualization" : "spiritual growth";
        default:
            return std::string(id(m));
    }
}

json vote_json_m(const std::set<Motivation>& votes, Rng& rng) {
    json arr = json::array();
    for (Motivation m : votes) arr.push_back(motivation_alias(m, rng));
    return json{{"maslow", arr}};
}

json vote_json_e(const std::set<Emotion>& votes) {
    json arr = json::array();
    for (Emotion e : votes) arr.push_back(std::string(id(e)));
    return json{{"plutchik", arr}};
}

// Two agreeing annotators plus one noisy third whose stray single vote can
// never reach the 2-of-3 bar on its own.
template <typename Label, typename ToJson>
json agreed_votes(const std::set<Label>& labels, int label_space, Rng& rng,
                  ToJson to_json) {
    json out = json::object();
    out["ann0"] = to_json(labels);
    out["ann1"] = to_json(labels);
    std::set<Label> third;
    if (rng.bounded(10) < 3) {
        third.insert(static_cast<Label>(
            static_cast<int>(rng.bounded(static_cast<uint64_t>(label_space)))));
    }
    out["ann2"] = to_json(third);
    return out;
}

// Three mutually distinct singletons: no label reaches two votes.
template <typename Label, typename ToJson>
json split_votes(int label_space, Rng& rng, ToJson to_json) {
    const int a = static_cast<int>(rng.bounded(static_cast<uint64_t>(label_space)));
    json out = json::object();
    const char* keys[3] = {"ann0", "ann1", "ann2"};
    for (int k = 0; k < 3; ++k) {
        out[keys[k]] =
            to_json(std::set<Label>{static_cast<Label>((a + k) % label_space)});
    }
    return out;
}

struct CandidateLabels {
    std::set<Motivation> motivations;
    std::set<Emotion> emotions;
};

CandidateLabels pick_labels(Rng& rng) {
    CandidateLabels out;
    const int m = weighted_pick(rng, kMotivationWeights);
    out.motivations.insert(static_cast<Motivation>(m));
    if (rng.bounded(100) < 15) {
        out.motivations.insert(
            static_cast<Motivation>((m + 1 + rng.bounded(4)) % 5));
    }
    const int e = weighted_pick(rng, kEmotionWeights);
    out.emotions.insert(static_cast<Emotion>(e));
    if (rng.bounded(100) < 20) {
        out.emotions.insert(static_cast<Emotion>((e + 1 + rng.bounded(7)) % 8));
    }
    return out;
}

std::string cue_sentence(const std::string& name,
                         const CandidateLabels& labels, Rng& rng) {
    const int m1 = static_cast<int>(*labels.motivations.begin());
    const int m2 = static_cast<int>(*labels.motivations.rbegin());
    const int e1 = static_cast<int>(*labels.emotions.begin());
    const int e2 = static_cast<int>(*labels.emotions.rbegin());
    const std::string mv = kMotivationVerbs[m1][rng.bounded(6)];
    const std::string mn = kMotivationNouns[m2][rng.bounded(6)];
    const std::string ev = kEmotionVerbs[e2][rng.bounded(6)];
    const std::string en = kEmotionNouns[e1][rng.bounded(6)];
    std::string tail;
    if (rng.bounded(3) == 0) {
        tail = std::string(" ") + kAdverbs[rng.bounded(8)];
    }
    switch (rng.bounded(3)) {
        case 0:
            return name + " " + mv + " the " + mn + " and " + ev +
                   " at the " + en + tail + ".";
        case 1:
            return name + " " + ev + " at the " + en + " and " + mv +
                   " the " + mn + tail + ".";
        default:
            return name + " " + mv + " the " + mn + ", then " + ev +
                   " at the " + en + tail + ".";
    }
}

}  // namespace

json synth_release(const SynthConfig& config) {
    if (config.n_stories < 1) {
        throw config_error("synthetic release needs at least one story");
    }
    Rng rng(config.seed);
    json release = json::object();
    for (int s = 0; s < config.n_stories; ++s) {
        char sid[16];
        std::snprintf(sid, sizeof(sid), "synth%05d", s);
        const std::string char_a = kFemaleNames[rng.bounded(6)];
        const std::string char_b = kMaleNames[rng.bounded(6)];
        const int free_line = static_cast<int>(rng.bounded(5));

        json lines = json::object();
        int reject_cycle = 0;
        for (int line = 1; line <= 5; ++line) {
            json characters = json::object();
            std::string text;
            if (line - 1 == free_line) {
                // No agreement on this line: one unannotated candidate and
                // one character marked as not appearing.
                text = char_a + " and " + char_b + " " +
                       kNeutral[rng.bounded(6)] + ".";
                characters[char_a] = json{{"app", true}};
                characters[char_b] = json{{"app", false}};
            } else {
                const bool a_agrees = rng.bounded(2) == 0;
                const std::string& agreed = a_agrees ? char_a : char_b;
                const std::string& other = a_agrees ? char_b : char_a;
                const CandidateLabels labels = pick_labels(rng);
                text = cue_sentence(agreed, labels, rng);
                characters[agreed] = json{
                    {"app", true},
                    {"motiv",
                     agreed_votes(labels.motivations, 5, rng,
                                  [&](const std::set<Motivation>& v) {
                                      return vote_json_m(v, rng);
                                  })},
                    {"emotion", agreed_votes(labels.emotions, 8, rng,
                                             vote_json_e)},
                };
                // The second character alternates between the two one-sided
                // rejection shapes.
                json other_obj = json{{"app", true}};
                if (reject_cycle++ % 2 == 0) {
                    other_obj["motiv"] = split_votes<Motivation>(
                        5, rng, [&](const std::set<Motivation>& v) {
                            return vote_json_m(v, rng);
                        });
                    other_obj["emotion"] =
                        agreed_votes(std::set<Emotion>{static_cast<Emotion>(
                                         rng.bounded(8))},
                                     8, rng, vote_json_e);
                } else {
                    other_obj["motiv"] = agreed_votes(
                        std::set<Motivation>{
                            static_cast<Motivation>(rng.bounded(5))},
                        5, rng, [&](const std::set<Motivation>& v) {
                            return vote_json_m(v, rng);
                        });
                    other_obj["emotion"] = split_votes<Emotion>(8, rng,
                                                                vote_json_e);
                }
                characters[other] = std::move(other_obj);
            }
            lines[std::to_string(line)] =
                json{{"text", text}, {"characters", characters}};
        }
        release[sid] = json{{"lines", lines}};
    }
    return release;
}

void write_release(const SynthConfig& config, const std::string& dir) {
    const auto doc = synth_release(config);
    std::filesystem::create_directories(dir);
    io::write_json_file(
        (std::filesystem::path(dir) / "annotations.json").string(), doc);
}

}  // namespace comma::synth
