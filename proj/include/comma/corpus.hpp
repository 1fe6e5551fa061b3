#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "comma/labels.hpp"
#include "json.hpp"

namespace comma::corpus {

// One annotated (story, line, character) triple from the upstream release.
// Votes are per annotator; an empty vote list means unannotated.
struct AnnotatedLine {
    std::string story_id;
    int line_idx = 0;  // 1-based position within the story
    std::string character;
    std::string sentence;
    std::vector<std::set<Motivation>> motivation_votes;
    std::vector<std::set<Emotion>> emotion_votes;
};

struct ParseIssue {
    int record_no = 0;  // 1-based record number; 0 when not line-oriented
    std::string kind;   // "bad_json" | "missing_field" | "bad_label" | ...
    std::string message;
};

struct ParseResult {
    std::vector<AnnotatedLine> lines;
    std::vector<ParseIssue> issues;
};

// Normalized record stream: one JSON object per line with keys
// story_id, line_idx, character, sentence, motivations, emotions
// (the last two are lists of per-annotator label lists).
ParseResult parse_story_annotations(std::istream& records);

// Upstream release shapes: a single annotations.json document keyed by
// story id, or per-annotator CSV rows. parse_release_dir sniffs which
// one is present under the given directory.
ParseResult parse_release_json(const nlohmann::json& doc);
ParseResult parse_release_csv(std::istream& csv);
ParseResult parse_release_dir(const std::string& dir);

// A training/eval unit: character C took action A after history H, with
// aligned motivation and emotion label sets (both nonempty).
struct Instance {
    std::string story_id;
    int line_idx = 0;
    std::string character;
    std::vector<std::string> history;
    std::string action;
    std::set<Motivation> motivations;
    std::set<Emotion> emotions;
};

// Canonical "story:line:character" identity used in logs and predictions.
std::string instance_id(const Instance& instance);

struct AlignStats {
    int candidates = 0;
    int emitted = 0;
    int rejected_no_motivation = 0;  // emotions agreed, motivations did not
    int rejected_no_emotion = 0;
    int rejected_no_labels = 0;  // neither side reached agreement
};

struct Aligned {
    std::vector<Instance> instances;
    AlignStats stats;
};

// A label is active when at least agreement_min annotators selected it;
// an instance is emitted only when both label sets end up nonempty.
Aligned align_instances(const std::vector<AnnotatedLine>& lines,
                        int agreement_min);

struct CorpusSplits {
    std::vector<Instance> train;
    std::vector<Instance> dev;
    std::vector<Instance> test;
    std::uint64_t seed = 0;
    std::array<double, 3> ratios{};
    std::map<std::string, std::string> manifest;  // story_id -> partition
};

// Story-level split: a story's instances never straddle partitions. The
// manifest is a function of (story id set, ratios, seed) only.
CorpusSplits split_corpus(const std::vector<Instance>& instances,
                          const std::array<double, 3>& ratios,
                          std::uint64_t seed);

struct LabelStats {
    std::map<std::string, int> motivation_counts;
    std::map<std::string, int> emotion_counts;
    int male = 0;  // heuristic pronoun/name lookup on the character mention
    int female = 0;
    int unknown = 0;
    int n_instances = 0;
    int n_stories = 0;
};

LabelStats corpus_stats(const std::vector<Instance>& instances);

// Corpus files hold one JSON object per line with keys exactly
// {story_id, line_idx, character, history, action, motivations, emotions}.
void write_jsonl(const std::string& path,
                 const std::vector<Instance>& instances);
std::vector<Instance> read_jsonl(const std::string& path);

nlohmann::json manifest_json(const CorpusSplits& splits);
void write_manifest(const std::string& path, const CorpusSplits& splits);

// Rebuilds splits from a stored manifest; instances of stories missing
// from the manifest raise a data error.
CorpusSplits apply_manifest(const std::vector<Instance>& instances,
                            const nlohmann::json& manifest);

}  // namespace comma::corpus
