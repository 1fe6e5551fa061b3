#include "comma/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <tuple>

#include "comma/errors.hpp"
#include "comma/io.hpp"
#include "comma/rng.hpp"
#include "comma/text.hpp"

namespace comma::corpus {

std::string instance_id(const Instance& instance) {
    return instance.story_id + ":" + std::to_string(instance.line_idx) + ":" +
           instance.character;
}

namespace {

using nlohmann::json;

// Upstream label entries look like "joy:3" (annotator rating 1..3) or a
// bare "joy". A rated entry counts as selected when the rating is >= 2.
constexpr int kMinRating = 2;

struct VoteParse {
    bool ok = true;
    std::string bad_token;
};

template <typename Label, typename ParseFn>
VoteParse parse_vote_list(const json& arr, ParseFn parse,
                          std::set<Label>& out) {
    VoteParse res;
    for (const auto& item : arr) {
        if (!item.is_string()) {
            res.ok = false;
            res.bad_token = item.dump();
            return res;
        }
        std::string tok = item.get<std::string>();
        int rating = kMinRating;
        if (const auto colon = tok.rfind(':'); colon != std::string::npos) {
            const std::string tail = tok.substr(colon + 1);
            try {
                size_t used = 0;
                rating = std::stoi(tail, &used);
                if (used != tail.size()) throw std::invalid_argument(tail);
                tok = tok.substr(0, colon);
            } catch (const std::exception&) {
                res.ok = false;
                res.bad_token = tok;
                return res;
            }
        }
        const auto label = parse(tok);
        if (!label) {
            res.ok = false;
            res.bad_token = tok;
            return res;
        }
        if (rating >= kMinRating) out.insert(*label);
    }
    return res;
}

using LineKey = std::tuple<std::string, int, std::string>;

// Merges duplicate records for the same (story, line, character) by
// appending annotator vote lists; emits lines in key order.
ParseResult finalize(std::map<LineKey, AnnotatedLine>&& merged,
                     std::vector<ParseIssue>&& issues) {
    ParseResult out;
    out.issues = std::move(issues);
    out.lines.reserve(merged.size());
    for (auto& [key, line] : merged) out.lines.push_back(std::move(line));
    return out;
}

void merge_line(std::map<LineKey, AnnotatedLine>& merged, AnnotatedLine&& l) {
    const LineKey key{l.story_id, l.line_idx, l.character};
    auto it = merged.find(key);
    if (it == merged.end()) {
        merged.emplace(key, std::move(l));
        return;
    }
    auto& dst = it->second;
    if (dst.sentence.empty()) dst.sentence = l.sentence;
    for (auto& v : l.motivation_votes)
        dst.motivation_votes.push_back(std::move(v));
    for (auto& v : l.emotion_votes) dst.emotion_votes.push_back(std::move(v));
}

std::vector<std::string> split_pipe(const std::string& s) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : s) {
        if (c == '|') {
            if (!cur.empty()) parts.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) parts.push_back(std::move(cur));
    return parts;
}

}  // namespace

ParseResult parse_story_annotations(std::istream& records) {
    std::map<LineKey, AnnotatedLine> merged;
    std::vector<ParseIssue> issues;
    std::string raw;
    int record_no = 0;
    while (std::getline(records, raw)) {
        ++record_no;
        if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(raw);
        } catch (const json::parse_error& e) {
            issues.push_back({record_no, "bad_json", e.what()});
            continue;
        }
        if (!rec.contains("story_id") || !rec["story_id"].is_string()) {
            issues.push_back({record_no, "missing_field", "story_id"});
            continue;
        }
        if (!rec.contains("line_idx") || !rec["line_idx"].is_number_integer()) {
            issues.push_back({record_no, "missing_field", "line_idx"});
            continue;
        }
        AnnotatedLine line;
        line.story_id = rec["story_id"].get<std::string>();
        line.line_idx = rec["line_idx"].get<int>();
        if (line.line_idx < 1) {
            issues.push_back({record_no, "bad_value", "line_idx must be >= 1"});
            continue;
        }
        line.character = rec.value("character", "");
        line.sentence = rec.value("sentence", "");
        bool ok = true;
        for (const auto& ann : rec.value("motivations", json::array())) {
            std::set<Motivation> votes;
            const auto res = parse_vote_list<Motivation>(
                ann, [](const std::string& s) { return parse_motivation(s); },
                votes);
            if (!res.ok) {
                issues.push_back({record_no, "bad_label", res.bad_token});
                ok = false;
                break;
            }
            line.motivation_votes.push_back(std::move(votes));
        }
        if (!ok) continue;
        for (const auto& ann : rec.value("emotions", json::array())) {
            std::set<Emotion> votes;
            const auto res = parse_vote_list<Emotion>(
                ann, [](const std::string& s) { return parse_emotion(s); },
                votes);
            if (!res.ok) {
                issues.push_back({record_no, "bad_label", res.bad_token});
                ok = false;
                break;
            }
            line.emotion_votes.push_back(std::move(votes));
        }
        if (!ok) continue;
        merge_line(merged, std::move(line));
    }
    return finalize(std::move(merged), std::move(issues));
}

ParseResult parse_release_json(const json& doc) {
    std::map<LineKey, AnnotatedLine> merged;
    std::vector<ParseIssue> issues;
    if (!doc.is_object()) {
        issues.push_back({0, "bad_json", "release root must be an object"});
        return finalize(std::move(merged), std::move(issues));
    }
    for (const auto& [story_id, story] : doc.items()) {
        if (!story.is_object() || !story.contains("lines")) {
            issues.push_back({0, "missing_field", story_id + ": lines"});
            continue;
        }
        for (const auto& [idx_str, line] : story["lines"].items()) {
            int line_idx = 0;
            try {
                line_idx = std::stoi(idx_str);
            } catch (const std::exception&) {
                issues.push_back(
                    {0, "bad_value", story_id + ": line key " + idx_str});
                continue;
            }
            const std::string sentence = line.value("text", "");
            const json characters = line.value("characters", json::object());
            for (const auto& [name, ch] : characters.items()) {
                if (!ch.value("app", true)) continue;
                AnnotatedLine al;
                al.story_id = story_id;
                al.line_idx = line_idx;
                al.character = name;
                al.sentence = sentence;
                bool ok = true;
                const json motiv = ch.value("motiv", json::object());
                for (const auto& [ann, body] : motiv.items()) {
                    std::set<Motivation> votes;
                    const auto res = parse_vote_list<Motivation>(
                        body.value("maslow", json::array()),
                        [](const std::string& s) {
                            return parse_motivation(s);
                        },
                        votes);
                    if (!res.ok) {
                        issues.push_back({0, "bad_label",
                                          story_id + "/" + idx_str + "/" +
                                              name + ": " + res.bad_token});
                        ok = false;
                        break;
                    }
                    al.motivation_votes.push_back(std::move(votes));
                    (void)ann;
                }
                if (!ok) continue;
                const json emotion = ch.value("emotion", json::object());
                for (const auto& [ann, body] : emotion.items()) {
                    std::set<Emotion> votes;
                    const auto res = parse_vote_list<Emotion>(
                        body.value("plutchik", json::array()),
                        [](const std::string& s) { return parse_emotion(s); },
                        votes);
                    if (!res.ok) {
                        issues.push_back({0, "bad_label",
                                          story_id + "/" + idx_str + "/" +
                                              name + ": " + res.bad_token});
                        ok = false;
                        break;
                    }
                    al.emotion_votes.push_back(std::move(votes));
                    (void)ann;
                }
                if (!ok) continue;
                merge_line(merged, std::move(al));
            }
        }
    }
    return finalize(std::move(merged), std::move(issues));
}

ParseResult parse_release_csv(std::istream& csv) {
    std::map<LineKey, AnnotatedLine> merged;
    std::vector<ParseIssue> issues;
    std::string raw;
    int record_no = 0;
    bool header_seen = false;
    while (std::getline(csv, raw)) {
        ++record_no;
        if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto fields = io::split_csv_row(raw);
        if (!header_seen) {
            header_seen = true;
            if (!fields.empty() && fields[0] == "story_id") continue;
        }
        if (fields.size() != 7) {
            issues.push_back({record_no, "bad_value",
                              "expected 7 fields, got " +
                                  std::to_string(fields.size())});
            continue;
        }
        AnnotatedLine line;
        line.story_id = fields[0];
        if (line.story_id.empty()) {
            issues.push_back({record_no, "missing_field", "story_id"});
            continue;
        }
        try {
            line.line_idx = std::stoi(fields[1]);
        } catch (const std::exception&) {
            issues.push_back({record_no, "missing_field", "line_idx"});
            continue;
        }
        line.character = fields[2];
        line.sentence = fields[3];
        std::set<Motivation> mv;
        std::set<Emotion> ev;
        const auto mres = parse_vote_list<Motivation>(
            json(split_pipe(fields[5])),
            [](const std::string& s) { return parse_motivation(s); }, mv);
        if (!mres.ok) {
            issues.push_back({record_no, "bad_label", mres.bad_token});
            continue;
        }
        const auto eres = parse_vote_list<Emotion>(
            json(split_pipe(fields[6])),
            [](const std::string& s) { return parse_emotion(s); }, ev);
        if (!eres.ok) {
            issues.push_back({record_no, "bad_label", eres.bad_token});
            continue;
        }
        line.motivation_votes.push_back(std::move(mv));
        line.emotion_votes.push_back(std::move(ev));
        merge_line(merged, std::move(line));
    }
    return finalize(std::move(merged), std::move(issues));
}

ParseResult parse_release_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) {
        throw data_error("release directory not found: " + dir);
    }
    const fs::path json_path = fs::path(dir) / "annotations.json";
    if (fs::exists(json_path)) {
        return parse_release_json(io::read_json_file(json_path.string()));
    }
    std::vector<fs::path> csvs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() == ".csv") csvs.push_back(entry.path());
    }
    if (csvs.empty()) {
        throw data_error("no annotations.json or *.csv under " + dir);
    }
    std::sort(csvs.begin(), csvs.end());
    ParseResult all;
    std::map<LineKey, AnnotatedLine> merged;
    for (const auto& p : csvs) {
        std::ifstream in(p);
        if (!in) throw data_error("cannot open file: " + p.string());
        auto part = parse_release_csv(in);
        for (auto& issue : part.issues) {
            issue.message = p.filename().string() + ": " + issue.message;
            all.issues.push_back(std::move(issue));
        }
        for (auto& line : part.lines) merge_line(merged, std::move(line));
    }
    auto fin = finalize(std::move(merged), std::move(all.issues));
    return fin;
}

Aligned align_instances(const std::vector<AnnotatedLine>& lines,
                        int agreement_min) {
    if (agreement_min < 1) {
        throw contract_error("agreement_min must be >= 1");
    }
    // Sentence lookup per story so histories can be assembled even when a
    // candidate line itself gets rejected.
    std::map<std::string, std::map<int, std::string>> sentences;
    for (const auto& l : lines) {
        auto& per_story = sentences[l.story_id];
        auto it = per_story.find(l.line_idx);
        if (it == per_story.end() || it->second.empty()) {
            per_story[l.line_idx] = l.sentence;
        }
    }

    std::vector<const AnnotatedLine*> ordered;
    ordered.reserve(lines.size());
    for (const auto& l : lines) ordered.push_back(&l);
    std::sort(ordered.begin(), ordered.end(),
              [](const AnnotatedLine* a, const AnnotatedLine* b) {
                  return std::tie(a->story_id, a->line_idx, a->character) <
                         std::tie(b->story_id, b->line_idx, b->character);
              });

    Aligned out;
    for (const AnnotatedLine* l : ordered) {
        ++out.stats.candidates;
        std::map<Motivation, int> mvotes;
        for (const auto& ann : l->motivation_votes) {
            for (auto m : ann) ++mvotes[m];
        }
        std::map<Emotion, int> evotes;
        for (const auto& ann : l->emotion_votes) {
            for (auto e : ann) ++evotes[e];
        }
        Instance inst;
        for (const auto& [m, n] : mvotes) {
            if (n >= agreement_min) inst.motivations.insert(m);
        }
        for (const auto& [e, n] : evotes) {
            if (n >= agreement_min) inst.emotions.insert(e);
        }
        if (inst.motivations.empty() && inst.emotions.empty()) {
            ++out.stats.rejected_no_labels;
            continue;
        }
        if (inst.motivations.empty()) {
            ++out.stats.rejected_no_motivation;
            continue;
        }
        if (inst.emotions.empty()) {
            ++out.stats.rejected_no_emotion;
            continue;
        }
        inst.story_id = l->story_id;
        inst.line_idx = l->line_idx;
        inst.character = l->character;
        inst.action = l->sentence;
        const auto& per_story = sentences[l->story_id];
        for (const auto& [idx, text] : per_story) {
            if (idx >= l->line_idx) break;
            inst.history.push_back(text);
        }
        ++out.stats.emitted;
        out.instances.push_back(std::move(inst));
    }
    return out;
}

CorpusSplits split_corpus(const std::vector<Instance>& instances,
                          const std::array<double, 3>& ratios,
                          std::uint64_t seed) {
    double sum = 0.0;
    for (double r : ratios) {
        if (r < 0.0) throw config_error("split ratios must be nonnegative");
        sum += r;
    }
    if (std::abs(sum - 1.0) > 1e-9) {
        throw config_error("split ratios must sum to 1");
    }

    std::set<std::string> story_set;
    for (const auto& inst : instances) story_set.insert(inst.story_id);
    std::vector<std::string> stories(story_set.begin(), story_set.end());

    int nonzero = 0;
    for (double r : ratios) {
        if (r > 0.0) ++nonzero;
    }
    if (static_cast<int>(stories.size()) < nonzero) {
        throw config_error("fewer stories than split partitions");
    }

    Rng rng(seed);
    rng.shuffle(stories);

    const size_t n = stories.size();
    std::array<size_t, 3> quota{};
    std::array<double, 3> frac{};
    size_t assigned = 0;
    for (int k = 0; k < 3; ++k) {
        const double exact = ratios[k] * static_cast<double>(n);
        quota[k] = static_cast<size_t>(std::floor(exact));
        frac[k] = exact - std::floor(exact);
        assigned += quota[k];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return frac[a] > frac[b]; });
    for (size_t left = n - assigned, i = 0; left > 0; --left, ++i) {
        ++quota[order[i % 3]];
    }
    // A partition with nonzero ratio must end up nonempty when enough
    // stories exist; steal from the largest partition if rounding left it
    // dry.
    for (int k = 0; k < 3; ++k) {
        if (ratios[k] > 0.0 && quota[k] == 0) {
            int big = 0;
            for (int j = 1; j < 3; ++j) {
                if (quota[j] > quota[big]) big = j;
            }
            --quota[big];
            ++quota[k];
        }
    }

    static const std::array<const char*, 3> names = {"train", "dev", "test"};
    CorpusSplits out;
    out.seed = seed;
    out.ratios = ratios;
    size_t pos = 0;
    for (int k = 0; k < 3; ++k) {
        for (size_t i = 0; i < quota[k]; ++i, ++pos) {
            out.manifest[stories[pos]] = names[k];
        }
    }
    for (const auto& inst : instances) {
        const auto& part = out.manifest.at(inst.story_id);
        if (part == "train") {
            out.train.push_back(inst);
        } else if (part == "dev") {
            out.dev.push_back(inst);
        } else {
            out.test.push_back(inst);
        }
    }
    return out;
}

LabelStats corpus_stats(const std::vector<Instance>& instances) {
    if (instances.empty()) {
        throw contract_error("corpus_stats requires a nonempty instance list");
    }
    LabelStats stats;
    std::set<std::string> stories;
    for (const auto& inst : instances) {
        ++stats.n_instances;
        stories.insert(inst.story_id);
        for (auto m : inst.motivations) {
            ++stats.motivation_counts[std::string(id(m))];
        }
        for (auto e : inst.emotions) {
            ++stats.emotion_counts[std::string(id(e))];
        }
        switch (text::guess_gender(inst.character)) {
            case text::Gender::male: ++stats.male; break;
            case text::Gender::female: ++stats.female; break;
            case text::Gender::unknown: ++stats.unknown; break;
        }
    }
    stats.n_stories = static_cast<int>(stories.size());
    return stats;
}

namespace {

json instance_json(const Instance& inst) {
    json obj;
    obj["story_id"] = inst.story_id;
    obj["line_idx"] = inst.line_idx;
    obj["character"] = inst.character;
    obj["history"] = inst.history;
    obj["action"] = inst.action;
    json mots = json::array();
    for (auto m : inst.motivations) mots.push_back(id(m));
    obj["motivations"] = mots;
    json emos = json::array();
    for (auto e : inst.emotions) emos.push_back(id(e));
    obj["emotions"] = emos;
    return obj;
}

}  // namespace

void write_jsonl(const std::string& path,
                 const std::vector<Instance>& instances) {
    std::string out;
    for (const auto& inst : instances) {
        out += instance_json(inst).dump();
        out += '\n';
    }
    io::write_file(path, out);
}

std::vector<Instance> read_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw data_error("cannot open corpus file: " + path);
    std::vector<Instance> out;
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        if (raw.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(raw);
        } catch (const json::parse_error& e) {
            throw data_error(path + ":" + std::to_string(line_no) +
                             ": invalid JSON: " + e.what());
        }
        const auto fail = [&](const std::string& what) -> data_error {
            return data_error(path + ":" + std::to_string(line_no) + ": " +
                              what);
        };
        for (const char* key : {"story_id", "line_idx", "character", "history",
                                "action", "motivations", "emotions"}) {
            if (!rec.contains(key)) throw fail(std::string("missing ") + key);
        }
        Instance inst;
        inst.story_id = rec["story_id"].get<std::string>();
        inst.line_idx = rec["line_idx"].get<int>();
        inst.character = rec["character"].get<std::string>();
        for (const auto& h : rec["history"]) {
            inst.history.push_back(h.get<std::string>());
        }
        inst.action = rec["action"].get<std::string>();
        for (const auto& m : rec["motivations"]) {
            const auto parsed = parse_motivation(m.get<std::string>());
            if (!parsed) throw fail("unknown motivation: " + m.dump());
            inst.motivations.insert(*parsed);
        }
        for (const auto& e : rec["emotions"]) {
            const auto parsed = parse_emotion(e.get<std::string>());
            if (!parsed) throw fail("unknown emotion: " + e.dump());
            inst.emotions.insert(*parsed);
        }
        if (inst.motivations.empty()) throw fail("empty motivations");
        if (inst.emotions.empty()) throw fail("empty emotions");
        out.push_back(std::move(inst));
    }
    return out;
}

nlohmann::json manifest_json(const CorpusSplits& splits) {
    json doc;
    doc["seed"] = splits.seed;
    doc["ratios"] = splits.ratios;
    doc["assignments"] = splits.manifest;
    return doc;
}

void write_manifest(const std::string& path, const CorpusSplits& splits) {
    io::write_json_file(path, manifest_json(splits));
}

CorpusSplits apply_manifest(const std::vector<Instance>& instances,
                            const nlohmann::json& manifest) {
    if (!manifest.contains("assignments") ||
        !manifest["assignments"].is_object()) {
        throw data_error("split manifest lacks an assignments map");
    }
    CorpusSplits out;
    out.seed = manifest.value("seed", 0ull);
    if (manifest.contains("ratios") && manifest["ratios"].is_array() &&
        manifest["ratios"].size() == 3) {
        for (int k = 0; k < 3; ++k) out.ratios[k] = manifest["ratios"][k];
    }
    const auto& assign = manifest["assignments"];
    for (const auto& [story, part] : assign.items()) {
        const std::string p = part.get<std::string>();
        if (p != "train" && p != "dev" && p != "test") {
            throw data_error("manifest partition for " + story +
                             " must be train/dev/test, got " + p);
        }
        out.manifest[story] = p;
    }
    for (const auto& inst : instances) {
        const auto it = out.manifest.find(inst.story_id);
        if (it == out.manifest.end()) {
            throw data_error("story missing from split manifest: " +
                             inst.story_id);
        }
        if (it->second == "train") {
            out.train.push_back(inst);
        } else if (it->second == "dev") {
            out.dev.push_back(inst);
        } else {
            out.test.push_back(inst);
        }
    }
    return out;
}

}  // namespace comma::corpus
