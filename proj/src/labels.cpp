#include "comma/labels.hpp"

#include <algorithm>
#include <cctype>
#include <map>

namespace comma {

namespace {

constexpr std::array<std::string_view, kNumMotivations> kMotivationIds = {
    "physiological", "stability", "love", "esteem", "spiritual_growth"};

constexpr std::array<std::string_view, kNumMotivations> kMotivationNames = {
    "physiological", "stability", "love", "esteem", "spiritual growth"};

constexpr std::array<std::string_view, kNumEmotions> kEmotionIds = {
    "joy",  "trust",   "sadness", "surprise",
    "fear", "disgust", "anger",   "anticipation"};

// Lowercase, trim, collapse runs of spaces/underscores/hyphens to one space.
std::string normalize(std::string_view raw) {
    std::string out;
    out.reserve(raw.size());
    bool pending_sep = false;
    for (char c : raw) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (std::isalpha(u)) {
            if (pending_sep && !out.empty()) out.push_back(' ');
            pending_sep = false;
            out.push_back(static_cast<char>(std::tolower(u)));
        } else {
            pending_sep = true;
        }
    }
    return out;
}

const std::map<std::string, Motivation, std::less<>>& motivation_table() {
    static const std::map<std::string, Motivation, std::less<>> table = {
        {"physiological", Motivation::physiological},
        {"physiological needs", Motivation::physiological},
        {"stability", Motivation::stability},
        {"love", Motivation::love},
        {"love and belonging", Motivation::love},
        {"love belonging", Motivation::love},
        {"esteem", Motivation::esteem},
        {"spiritual_growth", Motivation::spiritual_growth},
        {"spiritual growth", Motivation::spiritual_growth},
        {"self actualization", Motivation::spiritual_growth},
        {"spirit growth", Motivation::spiritual_growth},
    };
    return table;
}

}  // namespace

std::string_view id(Motivation m) { return kMotivationIds[static_cast<int>(m)]; }
std::string_view id(Emotion e) { return kEmotionIds[static_cast<int>(e)]; }

std::string_view display_name(Motivation m) {
    return kMotivationNames[static_cast<int>(m)];
}
std::string_view display_name(Emotion e) { return kEmotionIds[static_cast<int>(e)]; }

std::optional<Motivation> parse_motivation(std::string_view raw) {
    const std::string key = normalize(raw);
    const auto& table = motivation_table();
    auto it = table.find(key);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

std::optional<Emotion> parse_emotion(std::string_view raw) {
    const std::string key = normalize(raw);
    for (int i = 0; i < kNumEmotions; ++i) {
        if (key == kEmotionIds[i]) return static_cast<Emotion>(i);
    }
    return std::nullopt;
}

std::vector<Motivation> all_motivations() {
    std::vector<Motivation> out;
    for (int i = 0; i < kNumMotivations; ++i) out.push_back(static_cast<Motivation>(i));
    return out;
}

std::vector<Emotion> all_emotions() {
    std::vector<Emotion> out;
    for (int i = 0; i < kNumEmotions; ++i) out.push_back(static_cast<Emotion>(i));
    return out;
}

int label_count(Task task) {
    return task == Task::eu ? kNumEmotions : kNumMotivations;
}

std::vector<std::string> label_ids(Task task) {
    std::vector<std::string> out;
    if (task == Task::eu) {
        for (auto e : all_emotions()) out.emplace_back(id(e));
    } else {
        for (auto m : all_motivations()) out.emplace_back(id(m));
    }
    return out;
}

}  // namespace comma
