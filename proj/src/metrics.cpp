#include "comma/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "comma/errors.hpp"
#include "comma/text.hpp"

namespace comma::metrics {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& tokens,
                                  int n) {
    std::map<Ngram, int> counts;
    if (static_cast<int>(tokens.size()) < n) return counts;
    for (size_t i = 0; i + n <= tokens.size(); ++i) {
        ++counts[Ngram(tokens.begin() + i, tokens.begin() + i + n)];
    }
    return counts;
}

std::vector<std::string> content_tokens(const std::string& s) {
    return text::word_tokens(s, true);
}

size_t lcs_length(const std::vector<std::string>& a,
                  const std::vector<std::string>& b) {
    std::vector<size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (size_t i = 1; i <= a.size(); ++i) {
        for (size_t j = 1; j <= b.size(); ++j) {
            if (a[i - 1] == b[j - 1]) {
                cur[j] = prev[j - 1] + 1;
            } else {
                cur[j] = std::max(prev[j], cur[j - 1]);
            }
        }
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double f_measure(double p, double r) {
    return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
}

}  // namespace

Prf micro_prf(const std::vector<std::set<int>>& gold,
              const std::vector<std::set<int>>& pred) {
    if (gold.size() != pred.size()) {
        throw contract_error("micro_prf requires equal gold/pred lengths");
    }
    long long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < gold.size(); ++i) {
        for (int label : pred[i]) {
            if (gold[i].count(label)) {
                ++tp;
            } else {
                ++fp;
            }
        }
        for (int label : gold[i]) {
            if (!pred[i].count(label)) ++fn;
        }
    }
    Prf out;
    if (tp + fp > 0) out.precision = double(tp) / double(tp + fp);
    if (tp + fn > 0) out.recall = double(tp) / double(tp + fn);
    out.f1 = f_measure(out.precision, out.recall);
    return out;
}

double perplexity(const std::vector<double>& token_nlls) {
    if (token_nlls.empty()) {
        throw contract_error("perplexity requires at least one token NLL");
    }
    double sum = 0.0;
    for (double nll : token_nlls) sum += nll;
    return std::exp(sum / static_cast<double>(token_nlls.size()));
}

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references, int max_n) {
    if (hypotheses.empty()) {
        throw contract_error("bleu requires at least one hypothesis");
    }
    if (hypotheses.size() != references.size()) {
        throw contract_error("bleu requires one reference per hypothesis");
    }
    if (max_n < 1) throw contract_error("bleu max_n must be >= 1");

    std::vector<long long> clipped(max_n, 0), total(max_n, 0);
    long long hyp_len = 0, ref_len = 0;
    for (size_t i = 0; i < hypotheses.size(); ++i) {
        const auto hyp = content_tokens(hypotheses[i]);
        const auto ref = content_tokens(references[i]);
        hyp_len += static_cast<long long>(hyp.size());
        ref_len += static_cast<long long>(ref.size());
        for (int n = 1; n <= max_n; ++n) {
            const auto hyp_counts = ngram_counts(hyp, n);
            const auto ref_counts = ngram_counts(ref, n);
            for (const auto& [gram, count] : hyp_counts) {
                total[n - 1] += count;
                const auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) {
                    clipped[n - 1] += std::min(count, it->second);
                }
            }
        }
    }
    if (hyp_len == 0) return 0.0;

    double log_sum = 0.0;
    int levels = 0;
    for (int n = 0; n < max_n; ++n) {
        if (total[n] == 0) continue;  // every hypothesis shorter than n+1
        ++levels;
        const double p =
            clipped[n] > 0
                ? static_cast<double>(clipped[n]) / static_cast<double>(total[n])
                : kBleuEpsilon;
        log_sum += std::log(p);
    }
    if (levels == 0) return 0.0;
    const double geo = std::exp(log_sum / levels);
    const double bp =
        hyp_len >= ref_len
            ? 1.0
            : std::exp(1.0 - static_cast<double>(ref_len) /
                                 static_cast<double>(hyp_len));
    return bp * geo;
}

double rouge(const std::vector<std::string>& hypotheses,
             const std::vector<std::string>& references, Rouge variant) {
    if (hypotheses.empty()) {
        throw contract_error("rouge requires at least one hypothesis");
    }
    if (hypotheses.size() != references.size()) {
        throw contract_error("rouge requires one reference per hypothesis");
    }
    double sum = 0.0;
    for (size_t i = 0; i < hypotheses.size(); ++i) {
        const auto hyp = content_tokens(hypotheses[i]);
        const auto ref = content_tokens(references[i]);
        double p = 0.0, r = 0.0;
        if (variant == Rouge::rl) {
            if (!hyp.empty() && !ref.empty()) {
                const double lcs = static_cast<double>(lcs_length(hyp, ref));
                p = lcs / static_cast<double>(hyp.size());
                r = lcs / static_cast<double>(ref.size());
            }
        } else {
            const int n = variant == Rouge::r1 ? 1 : 2;
            const auto hyp_counts = ngram_counts(hyp, n);
            const auto ref_counts = ngram_counts(ref, n);
            long long overlap = 0, hyp_total = 0, ref_total = 0;
            for (const auto& [gram, count] : hyp_counts) {
                hyp_total += count;
                const auto it = ref_counts.find(gram);
                if (it != ref_counts.end()) {
                    overlap += std::min(count, it->second);
                }
            }
            for (const auto& [gram, count] : ref_counts) ref_total += count;
            if (hyp_total > 0) p = double(overlap) / double(hyp_total);
            if (ref_total > 0) r = double(overlap) / double(ref_total);
        }
        sum += f_measure(p, r);
    }
    return sum / static_cast<double>(hypotheses.size());
}

std::optional<double> fleiss_kappa(
    const std::vector<std::vector<int>>& counts) {
    if (counts.empty()) {
        throw contract_error("fleiss_kappa requires at least one subject");
    }
    const size_t k = counts[0].size();
    if (k < 2) {
        throw contract_error("fleiss_kappa requires at least two categories");
    }
    int m = 0;
    for (int c : counts[0]) m += c;
    if (m < 2) {
        throw contract_error("fleiss_kappa requires at least two raters");
    }
    const size_t n = counts.size();
    std::vector<double> marginal(k, 0.0);
    double p_bar = 0.0;
    for (const auto& row : counts) {
        if (row.size() != k) {
            throw contract_error("fleiss_kappa rows must share one width");
        }
        int row_sum = 0;
        long long sq = 0;
        for (size_t j = 0; j < k; ++j) {
            if (row[j] < 0) {
                throw contract_error("fleiss_kappa counts must be >= 0");
            }
            row_sum += row[j];
            sq += static_cast<long long>(row[j]) * row[j];
            marginal[j] += row[j];
        }
        if (row_sum != m) {
            throw contract_error("fleiss_kappa rows must all sum to the "
                                 "rater count");
        }
        p_bar += (static_cast<double>(sq) - m) /
                 (static_cast<double>(m) * (m - 1));
    }
    p_bar /= static_cast<double>(n);
    double pe = 0.0;
    for (size_t j = 0; j < k; ++j) {
        const double pj = marginal[j] / (static_cast<double>(n) * m);
        pe += pj * pj;
    }
    // Unanimity is perfect agreement even when a single category absorbs
    // all mass and chance agreement degenerates to 1.
    if (p_bar >= 1.0 - 1e-12) return 1.0;
    if (std::abs(1.0 - pe) < 1e-12) return std::nullopt;
    return (p_bar - pe) / (1.0 - pe);
}

double sign_test(int wins, int losses) {
    if (wins < 0 || losses < 0) {
        throw contract_error("sign_test counts must be >= 0");
    }
    const int n = wins + losses;
    if (n < 1) {
        throw contract_error("sign_test requires wins + losses >= 1");
    }
    const int k = std::min(wins, losses);
    // P(X <= k) for X ~ Binomial(n, 1/2), doubled and capped.
    double tail = 0.0;
    for (int i = 0; i <= k; ++i) {
        const double log_p = std::lgamma(n + 1.0) - std::lgamma(i + 1.0) -
                             std::lgamma(n - i + 1.0) -
                             n * std::log(2.0);
        tail += std::exp(log_p);
    }
    return std::min(1.0, 2.0 * tail);
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json doc;
    doc["task"] = task;
    doc["metrics"] = metrics;
    doc["smoothing"] = smoothing;
    doc["n_instances"] = per_instance.size();
    return doc;
}

}  // namespace comma::metrics
