#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace comma {

// Maslow hierarchy of needs, the 5-way motivation label space.
enum class Motivation {
    physiological,
    stability,
    love,
    esteem,
    spiritual_growth,
};

// Plutchik wheel of emotions, the 8-way emotion label space, fixed order.
enum class Emotion {
    joy,
    trust,
    sadness,
    surprise,
    fear,
    disgust,
    anger,
    anticipation,
};

inline constexpr int kNumMotivations = 5;
inline constexpr int kNumEmotions = 8;

// Canonical machine id, e.g. "spiritual_growth".
std::string_view id(Motivation m);
std::string_view id(Emotion e);

// Human-readable name used in prompt templates, e.g. "spiritual growth".
std::string_view display_name(Motivation m);
std::string_view display_name(Emotion e);

// Parses a raw label string. Case-, space- and punctuation-tolerant, with an
// alias table: "love and belonging" -> love, "self-actualization" and
// "spirit growth" -> spiritual_growth, "physiological needs" ->
// physiological. Returns nullopt for unknown strings.
std::optional<Motivation> parse_motivation(std::string_view raw);
std::optional<Emotion> parse_emotion(std::string_view raw);

std::vector<Motivation> all_motivations();
std::vector<Emotion> all_emotions();

// The two understanding tasks. EU predicts emotions, MU predicts motivations.
enum class Task { eu, mu };

int label_count(Task task);
// Canonical ids of the task's predicted label space, in fixed order.
std::vector<std::string> label_ids(Task task);

}  // namespace comma
