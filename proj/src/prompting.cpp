#include "comma/prompting.hpp"

#include <algorithm>

#include "comma/errors.hpp"
#include "comma/text.hpp"

namespace comma::prompting {

namespace {

constexpr std::string_view kVersion = "tmpl-v1";

// Sentence templates; "__" slots are filled left to right.
constexpr std::string_view kHistorySentence = "__'s history actions are __.";
constexpr std::string_view kMotivationSentence = "__'s motivation is __.";
constexpr std::string_view kEmotionSentence = "__'s emotion is __.";
constexpr std::string_view kActionSentence = "__'s action is __.";
constexpr std::string_view kGenHistoryBlock = "[ht] __'s history actions are __ [/ht]";
constexpr std::string_view kGenMotivationBlock = "[mot] __ has __ motivation [/mot]";
constexpr std::string_view kGenTarget = "[act] __ [/act]";

bool ends_with_terminal(const std::string& s) {
    if (s.empty()) return false;
    const char c = s.back();
    return c == '.' || c == '!' || c == '?';
}

// Fills "__" slots left to right. A slot directly followed by the template's
// closing period swallows that period when the value already ends with
// terminal punctuation, so "Kim went out." never becomes "Kim went out..".
std::string fill(std::string_view tmpl, const std::vector<std::string>& values) {
    std::string out;
    size_t pos = 0;
    size_t slot = 0;
    while (pos < tmpl.size()) {
        const size_t hit = tmpl.find("__", pos);
        if (hit == std::string_view::npos) {
            out += tmpl.substr(pos);
            break;
        }
        out += tmpl.substr(pos, hit - pos);
        if (slot >= values.size()) {
            throw contract_error("template has more slots than values");
        }
        const std::string& value = values[slot++];
        out += value;
        pos = hit + 2;
        if (pos < tmpl.size() && tmpl[pos] == '.' && ends_with_terminal(value)) {
            ++pos;
        }
    }
    if (slot != values.size()) {
        throw contract_error("template has fewer slots than values");
    }
    return out;
}

std::string join(const std::vector<std::string>& parts,
                 const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

std::string motivation_slot(const corpus::Instance& inst) {
    std::vector<std::string> names;
    for (auto m : inst.motivations) names.emplace_back(display_name(m));
    return join(names, ", ");
}

std::string emotion_slot(const corpus::Instance& inst) {
    std::vector<std::string> names;
    for (auto e : inst.emotions) names.emplace_back(display_name(e));
    return join(names, ", ");
}

}  // namespace

std::string_view template_version() { return kVersion; }

std::string render_understanding_prompt(const corpus::Instance& instance,
                                        Task task) {
    if (instance.character.empty()) {
        throw contract_error("understanding prompt requires a character");
    }
    if (instance.action.empty()) {
        throw contract_error("understanding prompt requires an action");
    }
    if (task == Task::eu && instance.motivations.empty()) {
        throw contract_error(
            "emotion understanding prompt requires motivations");
    }
    if (task == Task::mu && instance.emotions.empty()) {
        throw contract_error("motivation understanding prompt requires emotions");
    }
    const std::string& c = instance.character;
    std::vector<std::string> sentences;
    if (!instance.history.empty()) {
        sentences.push_back(
            fill(kHistorySentence, {c, join(instance.history, " ")}));
    }
    if (task == Task::eu) {
        sentences.push_back(fill(kMotivationSentence, {c, motivation_slot(instance)}));
    } else {
        sentences.push_back(fill(kEmotionSentence, {c, emotion_slot(instance)}));
    }
    sentences.push_back(fill(kActionSentence, {c, instance.action}));
    return join(sentences, " ");
}

PromptRendering render_generation_prompt(const corpus::Instance& instance,
                                         bool include_target,
                                         bool with_motivation) {
    if (instance.character.empty()) {
        throw contract_error("generation prompt requires a character");
    }
    if (with_motivation && instance.motivations.empty()) {
        throw contract_error("generation prompt requires motivations");
    }
    PromptRendering out;
    const std::string& c = instance.character;
    std::vector<std::string> blocks;
    if (!instance.history.empty()) {
        const size_t begin = 0;
        blocks.push_back(
            fill(kGenHistoryBlock, {c, join(instance.history, " ")}));
        out.spans["ht"] = {begin, blocks.back().size()};
    }
    if (with_motivation) {
        const std::string block = fill(kGenMotivationBlock, {c, motivation_slot(instance)});
        size_t begin = 0;
        if (!blocks.empty()) {
            begin = blocks[0].size() + std::string(" and ").size();
        }
        out.spans["mot"] = {begin, begin + block.size()};
        blocks.push_back(block);
    }
    out.input = join(blocks, " and ");
    if (include_target) {
        if (instance.action.empty()) {
            throw contract_error("generation target requires an action");
        }
        out.target = fill(kGenTarget, {instance.action});
        out.spans["act"] = {0, out.target.size()};
    }
    return out;
}

ParsedAction parse_generated_action(const std::string& decoded) {
    static const std::string open = "[act]";
    static const std::string close = "[/act]";
    const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return std::string();
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    };

    ParsedAction out;
    const size_t start = decoded.find(open);
    if (start != std::string::npos) {
        const size_t body = start + open.size();
        const size_t stop = decoded.find(close, body);
        if (stop != std::string::npos) {
            out.action = trim(decoded.substr(body, stop - body));
        } else {
            out.action = trim(decoded.substr(body));
            out.untagged = true;
        }
    } else {
        // Degenerate decode: drop echoed prompt blocks, then stray tags.
        std::string rest = decoded;
        for (const auto& [open_tag, close_tag] :
             {std::pair<std::string, std::string>{"[ht]", "[/ht]"},
              {"[mot]", "[/mot]"}}) {
            size_t pos;
            while ((pos = rest.find(open_tag)) != std::string::npos) {
                const size_t stop = rest.find(close_tag, pos);
                if (stop == std::string::npos) break;
                rest.erase(pos, stop + close_tag.size() - pos);
            }
        }
        for (const char* tag : {"[ht]", "[/ht]", "[mot]", "[/mot]", "[/act]"}) {
            size_t pos;
            while ((pos = rest.find(tag)) != std::string::npos) {
                rest.erase(pos, std::string(tag).size());
            }
        }
        rest = trim(rest);
        if (rest.rfind("and ", 0) == 0) rest = rest.substr(4);
        out.action = trim(rest);
        out.untagged = true;
    }
    if (out.action.empty()) {
        throw error("generator produced an empty action");
    }
    return out;
}

}  // namespace comma::prompting
