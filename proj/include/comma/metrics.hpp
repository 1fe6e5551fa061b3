#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace comma::metrics {

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Micro average over all (instance, label) pairs; 0/0 ratios collapse to 0.
Prf micro_prf(const std::vector<std::set<int>>& gold,
              const std::vector<std::set<int>>& pred);

// exp(mean NLL) over per-token negative log likelihoods.
double perplexity(const std::vector<double>& token_nlls);

// Corpus-level BLEU with clipped n-gram precisions, uniform weights up to
// max_n, brevity penalty. Zero precisions are floored at kBleuEpsilon;
// n-gram orders longer than every hypothesis are dropped from the mean.
inline constexpr double kBleuEpsilon = 1e-9;
double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references, int max_n);

enum class Rouge { r1, r2, rl };

// Mean per-pair F-measure of unigram/bigram overlap or LCS.
double rouge(const std::vector<std::string>& hypotheses,
             const std::vector<std::string>& references, Rouge variant);

// counts: one row per subject, one column per category, each row summing to
// the (identical) number of raters. Returns nullopt when chance agreement
// is 1, which leaves kappa undefined.
std::optional<double> fleiss_kappa(const std::vector<std::vector<int>>& counts);

// Two-sided exact binomial sign test at p = 0.5; ties excluded upstream.
double sign_test(int wins, int losses);

struct EvalReport {
    std::string task;
    std::map<std::string, double> metrics;
    std::string smoothing;  // documented smoothing setup, "" when n/a
    nlohmann::json per_instance = nlohmann::json::array();
    std::string config_fingerprint;

    nlohmann::json to_json() const;
};

// Blinded A/B annotation sheets.
struct EvalPair {
    std::string id;
    std::string context;
    std::string system_action;
    std::string baseline_action;
};

// Writes the annotator sheet (columns id, context, action_A, action_B,
// choice, quality_0_3, rationality_0_3) and a separate unblinding key with
// an integrity checksum. A/B order is randomized per row by the seed.
void export_human_eval(const std::vector<EvalPair>& pairs, std::uint64_t seed,
                       const std::string& sheet_path,
                       const std::string& key_path);

struct HumanEvalSummary {
    int n_items = 0;
    int n_annotators = 0;
    double win = 0.0;   // share of items whose majority preferred the system
    double loss = 0.0;
    double tie = 0.0;
    std::optional<double> kappa;  // agreement over unblinded choices
    double sign_test_p = 1.0;
    double mean_quality = 0.0;
    double mean_rationality = 0.0;

    nlohmann::json to_json() const;
};

// Completed sheets from all annotators plus the stored key. Scores outside
// 0..3, unknown row ids, or a tampered key raise data errors.
HumanEvalSummary import_human_eval(const std::vector<std::string>& sheet_paths,
                                   const std::string& key_path);

}  // namespace comma::metrics
