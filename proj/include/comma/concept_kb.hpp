#pragma once

#include <Eigen/Dense>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "comma/corpus.hpp"
#include "comma/labels.hpp"
#include "comma/text.hpp"
#include "json.hpp"

namespace comma::kb {

struct ExtractionConfig {
    bool lowercase = true;
    bool remove_stop_words = true;
    std::set<text::Pos> allowed_pos = {text::Pos::noun, text::Pos::verb,
                                       text::Pos::adjective};
    // A lemma is dropped when it appears in more than this share of the
    // training actions.
    double high_freq_threshold = 0.05;
    // Optional floor applied to stored scores; 0 keeps the raw formula.
    double epsilon = 0.0;

    nlohmann::json to_json() const;
    std::string fingerprint() const;
};

struct Concept {
    std::string lemma;
    text::Pos pos;

    bool operator==(const Concept& other) const = default;
};

// Document-order concept extraction; duplicates are preserved so counting
// can weight repeated mentions. `exclude` carries the corpus-level
// high-frequency lemmas (computed by build_kb over training actions).
std::vector<Concept> extract_concepts(const std::string& action_text,
                                      const ExtractionConfig& config,
                                      const std::set<std::string>& exclude = {});

struct ConceptKB {
    Task task = Task::mu;
    std::vector<std::string> labels;  // canonical ids, fixed order
    std::string config_fingerprint;
    std::vector<long long> vocab_size;   // V per label
    std::vector<long long> total_count;  // N per label

    struct Entry {
        std::vector<long long> counts;  // per label
        std::vector<double> scores;     // per label
    };
    std::map<std::string, Entry> concepts;
    std::set<std::string> high_freq;  // lemmas excluded by the df filter

    int label_index(const std::string& label) const;
};

// Raw score of one concept under one label from counting statistics:
// (label_count / concept_total) * (vocab_size / label_total).
double concept_score(long long label_count, long long concept_total,
                     long long vocab_size, long long label_total);

ConceptKB build_kb(const std::vector<corpus::Instance>& instances, Task task,
                   const ExtractionConfig& config);

struct ConceptDist {
    std::string lemma;
    Eigen::VectorXd dist;  // normalized over labels, sums to 1
};

// Distributions for the distinct in-vocabulary concepts of the text, in
// first-occurrence order. Unknown concepts are skipped.
std::vector<ConceptDist> query_kb(const ConceptKB& kb,
                                  const std::string& action_text,
                                  const ExtractionConfig& config);

nlohmann::json kb_json(const ConceptKB& kb);
void save_kb(const ConceptKB& kb, const std::string& path);

// Verifies count/score invariants; when expected_fingerprint is given, a
// different stored fingerprint raises a compatibility error.
ConceptKB load_kb(const std::string& path,
                  const std::optional<std::string>& expected_fingerprint =
                      std::nullopt);

}  // namespace comma::kb
