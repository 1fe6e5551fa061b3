#include "comma/concept_kb.hpp"

#include <algorithm>
#include <cmath>

#include "comma/errors.hpp"
#include "comma/io.hpp"

namespace comma::kb {

namespace {

using nlohmann::json;

std::string task_name(Task task) {
    return task == Task::mu ? "motivation" : "emotion";
}

Task parse_task_name(const std::string& name, const std::string& path) {
    if (name == "motivation") return Task::mu;
    if (name == "emotion") return Task::eu;
    throw data_error("unknown task in KB file " + path + ": " + name);
}

std::vector<std::string> task_labels(Task task) {
    std::vector<std::string> out;
    for (auto v : label_ids(task)) out.emplace_back(v);
    return out;
}

const std::set<Motivation>& instance_motivations(const corpus::Instance& i) {
    return i.motivations;
}

}  // namespace

json ExtractionConfig::to_json() const {
    json doc;
    doc["lowercase"] = lowercase;
    doc["remove_stop_words"] = remove_stop_words;
    doc["lexicon"] = text::lexicon_version();
    json pos = json::array();
    for (auto p : allowed_pos) pos.push_back(std::string(text::pos_name(p)));
    doc["allowed_pos"] = pos;
    doc["high_freq_threshold"] = high_freq_threshold;
    doc["epsilon"] = epsilon;
    return doc;
}

std::string ExtractionConfig::fingerprint() const {
    return io::json_fingerprint(to_json());
}

std::vector<Concept> extract_concepts(const std::string& action_text,
                                      const ExtractionConfig& config,
                                      const std::set<std::string>& exclude) {
    std::vector<Concept> out;
    for (const auto& raw : text::word_tokens(action_text, config.lowercase)) {
        if (raw.size() == 1 && !std::isalnum(static_cast<unsigned char>(raw[0]))) {
            continue;  // punctuation token
        }
        bool special = false;
        for (const auto& s : text::special_tokens()) {
            if (raw == s) {
                special = true;
                break;
            }
        }
        if (special) continue;
        if (config.remove_stop_words && text::is_stop_word(raw)) continue;
        const std::string lemma = text::lemmatize(raw);
        if (lemma.empty()) continue;
        if (config.remove_stop_words && text::is_stop_word(lemma)) continue;
        const text::Pos pos = text::guess_pos(raw, lemma);
        if (!config.allowed_pos.count(pos)) continue;
        if (exclude.count(lemma)) continue;
        out.push_back({lemma, pos});
    }
    return out;
}

double concept_score(long long label_count, long long concept_total,
                     long long vocab_size, long long label_total) {
    if (concept_total <= 0 || label_total <= 0) return 0.0;
    return (static_cast<double>(label_count) /
            static_cast<double>(concept_total)) *
           (static_cast<double>(vocab_size) /
            static_cast<double>(label_total));
}

int ConceptKB::label_index(const std::string& label) const {
    const auto it = std::find(labels.begin(), labels.end(), label);
    if (it == labels.end()) {
        throw contract_error("label not in KB label space: " + label);
    }
    return static_cast<int>(it - labels.begin());
}

ConceptKB build_kb(const std::vector<corpus::Instance>& instances, Task task,
                   const ExtractionConfig& config) {
    if (instances.empty()) {
        throw config_error("cannot build a concept KB from zero instances");
    }

    // First pass: document frequency of candidate lemmas over actions.
    std::map<std::string, int> df;
    for (const auto& inst : instances) {
        std::set<std::string> seen;
        for (const auto& c : extract_concepts(inst.action, config)) {
            seen.insert(c.lemma);
        }
        for (const auto& lemma : seen) ++df[lemma];
    }
    ConceptKB kb;
    kb.task = task;
    kb.labels = task_labels(task);
    kb.config_fingerprint = config.fingerprint();
    const double cutoff =
        config.high_freq_threshold * static_cast<double>(instances.size());
    for (const auto& [lemma, n] : df) {
        if (static_cast<double>(n) > cutoff) kb.high_freq.insert(lemma);
    }

    // Second pass: per-label occurrence counts; every active label of the
    // instance is incremented for every occurrence.
    const size_t n_labels = kb.labels.size();
    for (const auto& inst : instances) {
        std::vector<int> active;
        if (task == Task::mu) {
            for (auto m : instance_motivations(inst)) {
                active.push_back(static_cast<int>(m));
            }
        } else {
            for (auto e : inst.emotions) active.push_back(static_cast<int>(e));
        }
        if (active.empty()) {
            throw config_error("instance without labels for task " +
                               task_name(task) + ": " + inst.story_id);
        }
        for (const auto& c : extract_concepts(inst.action, config, kb.high_freq)) {
            auto& entry = kb.concepts[c.lemma];
            if (entry.counts.empty()) {
                entry.counts.assign(n_labels, 0);
                entry.scores.assign(n_labels, 0.0);
            }
            for (int s : active) ++entry.counts[static_cast<size_t>(s)];
        }
    }
    if (kb.concepts.empty()) {
        throw data_error("concept vocabulary is empty after filtering; config " +
                         config.to_json().dump());
    }

    kb.vocab_size.assign(n_labels, 0);
    kb.total_count.assign(n_labels, 0);
    for (const auto& [lemma, entry] : kb.concepts) {
        for (size_t s = 0; s < n_labels; ++s) {
            if (entry.counts[s] > 0) {
                ++kb.vocab_size[s];
                kb.total_count[s] += entry.counts[s];
            }
        }
    }
    for (auto& [lemma, entry] : kb.concepts) {
        long long total = 0;
        for (long long c : entry.counts) total += c;
        for (size_t s = 0; s < n_labels; ++s) {
            double score = concept_score(entry.counts[s], total,
                                         kb.vocab_size[s], kb.total_count[s]);
            if (config.epsilon > 0.0) score = std::max(score, config.epsilon);
            entry.scores[s] = score;
        }
    }
    return kb;
}

std::vector<ConceptDist> query_kb(const ConceptKB& kb,
                                  const std::string& action_text,
                                  const ExtractionConfig& config) {
    if (action_text.empty()) {
        throw contract_error("query_kb requires nonempty action text");
    }
    std::vector<ConceptDist> out;
    std::set<std::string> seen;
    for (const auto& c : extract_concepts(action_text, config)) {
        if (!seen.insert(c.lemma).second) continue;
        const auto it = kb.concepts.find(c.lemma);
        if (it == kb.concepts.end()) continue;
        const auto& scores = it->second.scores;
        Eigen::VectorXd v(static_cast<Eigen::Index>(scores.size()));
        double sum = 0.0;
        for (size_t i = 0; i < scores.size(); ++i) {
            v[static_cast<Eigen::Index>(i)] = scores[i];
            sum += scores[i];
        }
        if (sum <= 0.0) continue;
        v /= sum;
        out.push_back({c.lemma, std::move(v)});
    }
    return out;
}

json kb_json(const ConceptKB& kb) {
    json doc;
    doc["task"] = task_name(kb.task);
    doc["labels"] = kb.labels;
    doc["config_fingerprint"] = kb.config_fingerprint;
    json per_label = json::object();
    for (size_t s = 0; s < kb.labels.size(); ++s) {
        per_label[kb.labels[s]] = {{"V", kb.vocab_size[s]},
                                   {"N", kb.total_count[s]}};
    }
    doc["per_label"] = per_label;
    json concepts = json::object();
    for (const auto& [lemma, entry] : kb.concepts) {
        json counts = json::object();
        json scores = json::object();
        for (size_t s = 0; s < kb.labels.size(); ++s) {
            if (entry.counts[s] != 0) counts[kb.labels[s]] = entry.counts[s];
            if (entry.scores[s] != 0.0) scores[kb.labels[s]] = entry.scores[s];
        }
        concepts[lemma] = {{"counts", counts}, {"scores", scores}};
    }
    doc["concepts"] = concepts;
    return doc;
}

void save_kb(const ConceptKB& kb, const std::string& path) {
    io::write_json_file(path, kb_json(kb));
}

ConceptKB load_kb(const std::string& path,
                  const std::optional<std::string>& expected_fingerprint) {
    const json doc = io::read_json_file(path);
    for (const char* key :
         {"task", "labels", "config_fingerprint", "per_label", "concepts"}) {
        if (!doc.contains(key)) {
            throw data_error("KB file " + path + " lacks key " + key);
        }
    }
    ConceptKB kb;
    kb.task = parse_task_name(doc["task"].get<std::string>(), path);
    kb.labels = doc["labels"].get<std::vector<std::string>>();
    if (kb.labels != task_labels(kb.task)) {
        throw data_error("KB label space does not match task " +
                         task_name(kb.task) + " in " + path);
    }
    kb.config_fingerprint = doc["config_fingerprint"].get<std::string>();
    if (expected_fingerprint && *expected_fingerprint != kb.config_fingerprint) {
        throw config_error("KB extraction config mismatch: expected " +
                           *expected_fingerprint + ", file has " +
                           kb.config_fingerprint);
    }
    const size_t n_labels = kb.labels.size();
    kb.vocab_size.assign(n_labels, 0);
    kb.total_count.assign(n_labels, 0);
    for (size_t s = 0; s < n_labels; ++s) {
        const auto& pl = doc["per_label"].at(kb.labels[s]);
        kb.vocab_size[s] = pl.at("V").get<long long>();
        kb.total_count[s] = pl.at("N").get<long long>();
    }
    for (const auto& [lemma, body] : doc["concepts"].items()) {
        ConceptKB::Entry entry;
        entry.counts.assign(n_labels, 0);
        entry.scores.assign(n_labels, 0.0);
        for (const auto& [label, n] : body.at("counts").items()) {
            entry.counts[static_cast<size_t>(kb.label_index(label))] =
                n.get<long long>();
        }
        for (const auto& [label, v] : body.at("scores").items()) {
            entry.scores[static_cast<size_t>(kb.label_index(label))] =
                v.get<double>();
        }
        for (long long c : entry.counts) {
            if (c < 0) {
                throw data_error("negative count for concept " + lemma +
                                 " in " + path);
            }
        }
        kb.concepts.emplace(lemma, std::move(entry));
    }

    // Count-derived invariants must hold regardless of extraction config.
    std::vector<long long> vocab(n_labels, 0), total(n_labels, 0);
    for (const auto& [lemma, entry] : kb.concepts) {
        for (size_t s = 0; s < n_labels; ++s) {
            if (entry.counts[s] > 0) {
                ++vocab[s];
                total[s] += entry.counts[s];
            }
        }
    }
    for (size_t s = 0; s < n_labels; ++s) {
        if (vocab[s] != kb.vocab_size[s]) {
            throw data_error("KB invariant violated in " + path + ": V^" +
                             kb.labels[s] + " != distinct concept count");
        }
        if (total[s] != kb.total_count[s]) {
            throw data_error("KB invariant violated in " + path + ": N^" +
                             kb.labels[s] + " != sum of counts");
        }
    }
    // Stored scores must be at least the raw formula value (an epsilon
    // floor can only raise them) and exact when no floor applied.
    for (const auto& [lemma, entry] : kb.concepts) {
        long long concept_total = 0;
        for (long long c : entry.counts) concept_total += c;
        for (size_t s = 0; s < n_labels; ++s) {
            const double raw = concept_score(entry.counts[s], concept_total,
                                             kb.vocab_size[s],
                                             kb.total_count[s]);
            if (entry.scores[s] + 1e-12 < raw) {
                throw data_error("KB invariant violated in " + path +
                                 ": stored score below count-derived value "
                                 "for concept " +
                                 lemma);
            }
        }
    }
    return kb;
}

}  // namespace comma::kb
