#include <algorithm>
#include <cctype>
#include <charconv>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "comma/errors.hpp"
#include "comma/io.hpp"
#include "comma/metrics.hpp"
#include "comma/rng.hpp"

namespace comma::metrics {
namespace {

constexpr std::string_view kSheetHeader =
    "id,context,action_A,action_B,choice,quality_0_3,rationality_0_3";

// The sheet parser is line based, so exported fields must stay single line.
std::string flatten(const std::string& field) {
    std::string out = field;
    for (char& c : out) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return out;
}

std::string key_checksum(const nlohmann::json& items) {
    return io::json_fingerprint(items);
}

std::string trim(const std::string& s) {
    size_t b = 0;
    size_t e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

int parse_score(const std::string& raw, const std::string& column,
                const std::string& id, const std::string& path) {
    const std::string s = trim(raw);
    int value = -1;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
    if (ec != std::errc{} || ptr != s.data() + s.size() || value < 0 || value > 3) {
        throw data_error(path + ": row '" + id + "': " + column +
                         " must be an integer in 0..3, got '" + raw + "'");
    }
    return value;
}

enum class Choice { system, baseline, tie };

}  // namespace

void export_human_eval(const std::vector<EvalPair>& pairs, std::uint64_t seed,
                       const std::string& sheet_path,
                       const std::string& key_path) {
    if (pairs.empty()) {
        throw contract_error("human eval export needs at least one pair");
    }
    std::set<std::string> seen;
    for (const auto& p : pairs) {
        if (p.id.empty()) throw data_error("human eval pair with empty id");
        if (!seen.insert(p.id).second) {
            throw data_error("duplicate human eval id: " + p.id);
        }
    }
    Rng rng(seed);
    std::ostringstream sheet;
    sheet << kSheetHeader << "\n";
    nlohmann::json items = nlohmann::json::object();
    for (const auto& p : pairs) {
        const bool system_first = rng.bounded(2) == 0;
        const std::string& a = system_first ? p.system_action : p.baseline_action;
        const std::string& b = system_first ? p.baseline_action : p.system_action;
        sheet << io::csv_escape(flatten(p.id)) << ','
              << io::csv_escape(flatten(p.context)) << ','
              << io::csv_escape(flatten(a)) << ','
              << io::csv_escape(flatten(b)) << ",,,\n";
        items[p.id] = {{"system_slot", system_first ? "A" : "B"}};
    }
    io::write_file(sheet_path, sheet.str());
    const nlohmann::json key = {
        {"seed", seed},
        {"items", items},
        {"checksum", key_checksum(items)},
    };
    io::write_json_file(key_path, key);
}

HumanEvalSummary import_human_eval(const std::vector<std::string>& sheet_paths,
                                   const std::string& key_path) {
    if (sheet_paths.size() < 3) {
        throw config_error("human eval import needs sheets from at least 3 "
                           "annotators, got " + std::to_string(sheet_paths.size()));
    }
    const nlohmann::json key = io::read_json_file(key_path);
    if (!key.is_object() || !key.contains("items") || !key.contains("checksum") ||
        !key.at("items").is_object()) {
        throw data_error("unblinding key is malformed: " + key_path);
    }
    const nlohmann::json items = key.at("items");
    if (key.at("checksum").get<std::string>() != key_checksum(items)) {
        throw data_error("unblinding key failed its integrity check: " + key_path);
    }
    std::map<std::string, char> system_slot;
    for (const auto& [id, entry] : items.items()) {
        const std::string s = entry.value("system_slot", "");
        if (s != "A" && s != "B") {
            throw data_error("unblinding key has a bad slot for '" + id + "'");
        }
        system_slot[id] = s[0];
    }
    if (system_slot.empty()) {
        throw data_error("unblinding key lists no items: " + key_path);
    }

    // id -> per-annotator unblinded choices.
    std::map<std::string, std::vector<Choice>> votes;
    double quality_sum = 0.0;
    double rationality_sum = 0.0;
    long long n_judgments = 0;
    for (const auto& path : sheet_paths) {
        std::istringstream in(io::read_file(path));
        std::string line;
        if (!std::getline(in, line) ||
            trim(line) != std::string(kSheetHeader)) {
            throw data_error(path + ": missing or unexpected sheet header");
        }
        std::set<std::string> covered;
        size_t line_no = 1;
        while (std::getline(in, line)) {
            ++line_no;
            if (trim(line).empty()) continue;
            const auto fields = io::split_csv_row(line);
            if (fields.size() != 7) {
                throw data_error(path + ":" + std::to_string(line_no) +
                                 ": expected 7 fields, got " +
                                 std::to_string(fields.size()));
            }
            const std::string& id = fields[0];
            const auto slot_it = system_slot.find(id);
            if (slot_it == system_slot.end()) {
                throw data_error(path + ": row id '" + id +
                                 "' is absent from the unblinding key");
            }
            if (!covered.insert(id).second) {
                throw data_error(path + ": duplicate row id '" + id + "'");
            }
            const std::string choice = lower(trim(fields[4]));
            Choice unblinded;
            if (choice == "tie") {
                unblinded = Choice::tie;
            } else if (choice == "a" || choice == "b") {
                const char picked = choice == "a" ? 'A' : 'B';
                unblinded = picked == slot_it->second ? Choice::system
                                                      : Choice::baseline;
            } else {
                throw data_error(path + ": row '" + id +
                                 "': choice must be A, B, or tie, got '" +
                                 fields[4] + "'");
            }
            votes[id].push_back(unblinded);
            quality_sum += parse_score(fields[5], "quality_0_3", id, path);
            rationality_sum += parse_score(fields[6], "rationality_0_3", id, path);
            ++n_judgments;
        }
        if (covered.size() != system_slot.size()) {
            throw data_error(path + ": sheet covers " +
                             std::to_string(covered.size()) + " of " +
                             std::to_string(system_slot.size()) + " items");
        }
    }

    HumanEvalSummary summary;
    summary.n_items = static_cast<int>(system_slot.size());
    summary.n_annotators = static_cast<int>(sheet_paths.size());

    std::vector<std::vector<int>> kappa_counts;
    kappa_counts.reserve(votes.size());
    int item_wins = 0;
    int item_losses = 0;
    int item_ties = 0;
    for (const auto& [id, vs] : votes) {
        std::vector<int> row(3, 0);
        for (Choice c : vs) ++row[static_cast<int>(c)];
        kappa_counts.push_back(row);
        // Majority verdict per item; a split plurality counts as a tie.
        const int best = *std::max_element(row.begin(), row.end());
        const int holders = static_cast<int>(
            std::count(row.begin(), row.end(), best));
        if (holders > 1 || best == row[static_cast<int>(Choice::tie)]) {
            ++item_ties;
        } else if (best == row[static_cast<int>(Choice::system)]) {
            ++item_wins;
        } else {
            ++item_losses;
        }
    }
    const double n_items = static_cast<double>(summary.n_items);
    summary.win = item_wins / n_items;
    summary.loss = item_losses / n_items;
    summary.tie = item_ties / n_items;
    summary.kappa = fleiss_kappa(kappa_counts);
    summary.sign_test_p = item_wins + item_losses > 0
                              ? sign_test(item_wins, item_losses)
                              : 1.0;
    summary.mean_quality = quality_sum / static_cast<double>(n_judgments);
    summary.mean_rationality =
        rationality_sum / static_cast<double>(n_judgments);
    return summary;
}

nlohmann::json HumanEvalSummary::to_json() const {
    nlohmann::json doc = {
        {"n_items", n_items},
        {"n_annotators", n_annotators},
        {"win", win},
        {"loss", loss},
        {"tie", tie},
        {"sign_test_p", sign_test_p},
        {"mean_quality", mean_quality},
        {"mean_rationality", mean_rationality},
    };
    doc["kappa"] = kappa ? nlohmann::json(*kappa) : nlohmann::json();
    return doc;
}

}  // namespace comma::metrics
