#pragma once

#include <map>
#include <string>

#include "comma/corpus.hpp"
#include "comma/labels.hpp"

namespace comma::prompting {

// Version tag of the fixed template set; recorded in generator sidecars.
std::string_view template_version();

// Understanding input: history sentence (omitted when H is empty), then the
// given mental-state sentence (motivations for emotion prediction, emotions
// for motivation prediction), then the action sentence. Multi-label slots
// join display names with ", ".
std::string render_understanding_prompt(const corpus::Instance& instance,
                                        Task task);

struct Span {
    size_t begin = 0;  // offset of the opening tag
    size_t end = 0;    // one past the closing tag
};

struct PromptRendering {
    std::string input;
    std::string target;
    std::map<std::string, Span> spans;  // "ht"/"mot" in input, "act" in target
};

// Generation input "[ht] C's history actions are ... [/ht] and [mot] C has
// ... motivation [/mot]"; target "[act] A [/act]". The emotion never enters
// the template; it supervises the generator through its emotion head. An
// empty history drops the [ht] block and the joining "and". with_motivation
// = false renders the ablated prompt without the [mot] block.
PromptRendering render_generation_prompt(const corpus::Instance& instance,
                                         bool include_target = true,
                                         bool with_motivation = true);

struct ParsedAction {
    std::string action;
    bool untagged = false;  // fallback path: no [act]...[/act] pair found
};

// Inverse of the target template. Untagged decodes fall back to the text
// with template remnants stripped; an empty extraction is an error.
ParsedAction parse_generated_action(const std::string& decoded);

}  // namespace comma::prompting
