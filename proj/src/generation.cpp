#include "comma/generation.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "comma/errors.hpp"
#include "comma/metrics.hpp"
#include "comma/nn.hpp"
#include "comma/prompting.hpp"
#include "comma/rng.hpp"

namespace comma::generation {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kProbFloor = 1e-12;
const int kEmotionCount = label_count(Task::eu);

void validate_loss_config(const GenLossConfig& config) {
    if (config.lambda1 < 0.0 || config.lambda2 < 0.0) {
        throw config_error("loss weights must be nonnegative");
    }
    if (!(config.lambda1 + config.lambda2 > 0.0)) {
        throw config_error("at least one loss weight must be positive");
    }
    if (!(config.epsilon >= 0.0 && config.epsilon < 1.0)) {
        throw config_error("label smoothing must lie in [0, 1)");
    }
    if (config.kl_direction != "forward" && config.kl_direction != "reverse") {
        throw config_error("kl direction must be 'forward' or 'reverse'");
    }
}

void validate_decode(const DecodeConfig& decode) {
    if (decode.mode != "greedy" && decode.mode != "beam") {
        throw config_error("decode mode must be 'greedy' or 'beam'");
    }
    if (decode.beam_width < 1) throw config_error("beam width must be >= 1");
    if (decode.max_tokens < 1) {
        throw config_error("decode token budget must be >= 1");
    }
}

VectorXd smooth_target(const VectorXd& q, double epsilon) {
    const auto k = q.size();
    return (1.0 - epsilon) * q +
           VectorXd::Constant(k, epsilon / static_cast<double>(k));
}

// Renders the input side and drops history lines oldest-first until the
// prompt fits; hard-truncates from the front as a last resort.
std::vector<std::string> truncated_input_tokens(
    const corpus::Instance& instance, bool with_motivation,
    int max_input_tokens, bool include_target, std::string* target,
    bool* truncated) {
    corpus::Instance trimmed = instance;
    auto rendering = prompting::render_generation_prompt(trimmed,
                                                         include_target,
                                                         with_motivation);
    auto tokens = text::word_tokens(rendering.input);
    while (static_cast<int>(tokens.size()) > max_input_tokens &&
           !trimmed.history.empty()) {
        trimmed.history.erase(trimmed.history.begin());
        *truncated = true;
        rendering = prompting::render_generation_prompt(trimmed,
                                                        include_target,
                                                        with_motivation);
        tokens = text::word_tokens(rendering.input);
    }
    if (static_cast<int>(tokens.size()) > max_input_tokens) {
        tokens.erase(tokens.begin(), tokens.end() - max_input_tokens);
        *truncated = true;
    }
    if (target) *target = rendering.target;
    return tokens;
}

const MatrixXd& tensor(const RnnLm& model, const std::string& name) {
    const auto it = model.tensors.find(name);
    if (it == model.tensors.end()) {
        throw contract_error("generator tensor '" + name + "' is missing");
    }
    return it->second;
}

// One tanh cell update h' = tanh(w_xh emb[token] + w_hh h + b_h).
VectorXd cell(const MatrixXd& emb, const MatrixXd& w_xh, const MatrixXd& w_hh,
              const MatrixXd& b_h, const VectorXd& h, int token) {
    return (w_xh * emb.row(token).transpose() + w_hh * h + b_h.col(0))
        .array()
        .tanh();
}

double kl_gradient(const VectorXd& p_e, const VectorXd& q_s,
                   const std::string& direction, double kl, VectorXd* dz) {
    if (direction == "forward") {
        *dz = p_e - q_s;
    } else {
        VectorXd logp = p_e.array().max(kProbFloor).log();
        VectorXd logq = q_s.array().max(kProbFloor).log();
        *dz = p_e.array() * ((logp - logq).array() - kl);
    }
    return kl;
}

struct RunResult {
    GenForward forward;
    io::TensorMap grads;
};

// Teacher-forced pass shared by loss evaluation and training. Softmaxes are
// materialized only where the loss needs them unless all_log_probs asks for
// the full per-position trace.
RunResult run_example(const RnnLm& model, const GenerationExample& example,
                      const GenLossConfig& config, bool want_grads,
                      bool all_log_probs) {
    validate_loss_config(config);
    const int n = static_cast<int>(example.ids.size());
    if (n < 2) throw contract_error("generation example needs >= 2 tokens");
    if (example.mask.size() != example.ids.size()) {
        throw contract_error("mask length must match the token sequence");
    }
    if (example.input_len < 1 || example.input_len >= n) {
        throw contract_error("example input length is out of range");
    }
    if (example.q_e.size() != kEmotionCount) {
        throw contract_error("emotion target must cover the 8 labels");
    }
    const bool encdec = model.arch == "enc-dec";
    const MatrixXd& emb = tensor(model, "emb");
    const MatrixXd& w_xh = tensor(model, "w_xh");
    const MatrixXd& w_hh = tensor(model, "w_hh");
    const MatrixXd& b_h = tensor(model, "b_h");
    const MatrixXd& w_out = tensor(model, "w_out");
    const MatrixXd& b_out = tensor(model, "b_out");
    const MatrixXd& w_emo = tensor(model, "w_emo");
    const MatrixXd& b_emo = tensor(model, "b_emo");
    const int vocab_size = static_cast<int>(emb.rows());
    const int hidden = static_cast<int>(w_hh.rows());
    for (int id : example.ids) {
        if (id < 0 || id >= vocab_size) {
            throw contract_error("token id is outside the vocabulary");
        }
    }

    // Encoder pass (enc-dec only) over [bos] + input tokens.
    std::vector<VectorXd> enc_states;
    if (encdec) {
        const MatrixXd& e_xh = tensor(model, "enc_w_xh");
        const MatrixXd& e_hh = tensor(model, "enc_w_hh");
        const MatrixXd& e_bh = tensor(model, "enc_b_h");
        VectorXd g = VectorXd::Zero(hidden);
        enc_states.reserve(example.input_len);
        for (int t = 0; t < example.input_len; ++t) {
            g = cell(emb, e_xh, e_hh, e_bh, g, example.ids[t]);
            enc_states.push_back(g);
        }
    }

    // Decoder consumed sequence: the full sequence for the causal shape, or
    // [bos] + target tokens for enc-dec (its state is seeded by the encoder
    // and it predicts target plus the closing [eos]).
    std::vector<int> consumed;
    std::vector<int> predicted;  // global position of the token each step emits
    if (encdec) {
        consumed.push_back(text::Vocab::kBos);
        for (int j = example.input_len; j < n - 1; ++j) {
            consumed.push_back(example.ids[j]);
        }
        for (int j = example.input_len; j < n; ++j) predicted.push_back(j);
    } else {
        for (int t = 0; t < n - 1; ++t) consumed.push_back(example.ids[t]);
        for (int j = 1; j < n; ++j) predicted.push_back(j);
    }
    const int steps = static_cast<int>(consumed.size());

    std::vector<VectorXd> states(steps);
    std::vector<std::optional<VectorXd>> probs(steps);
    std::vector<double> lp(n, 0.0);
    VectorXd h = encdec ? enc_states.back() : VectorXd::Zero(hidden);
    for (int t = 0; t < steps; ++t) {
        h = cell(emb, w_xh, w_hh, b_h, h, consumed[t]);
        states[t] = h;
        const int pos = predicted[t];
        if (!all_log_probs && !example.mask[pos]) continue;
        const VectorXd lsm = nn::log_softmax(w_out * h + b_out.col(0));
        lp[pos] = lsm[example.ids[pos]];
        if (want_grads && example.mask[pos]) {
            probs[t] = lsm.array().exp().matrix();
        }
    }

    // States after consuming each target token feed the emotion pool; the
    // decoder sees target token at global j at step j - input_len + (encdec)
    // offset, i.e. the step whose consumed token is that target token.
    std::vector<int> pool_steps;
    for (int t = 0; t < steps; ++t) {
        const int consumed_pos = encdec ? example.input_len + t - 1 : t;
        if (consumed_pos >= 0 && consumed_pos < n &&
            example.mask[consumed_pos]) {
            pool_steps.push_back(t);
        }
    }
    if (pool_steps.empty()) throw contract_error("masked span is empty");
    VectorXd h_mean = VectorXd::Zero(hidden);
    for (int t : pool_steps) h_mean += states[t];
    h_mean /= static_cast<double>(pool_steps.size());
    const VectorXd z_e = w_emo * h_mean + b_emo.col(0);
    const VectorXd p_e = nn::softmax(z_e);

    RunResult out;
    out.forward.token_log_probs = lp;
    out.forward.lm = lm_loss(lp, example.mask);
    out.forward.kl = kl_loss(p_e, example.q_e, 0.0, config.kl_direction);
    out.forward.total = total_loss(out.forward.lm, out.forward.kl, config);
    out.forward.p_e = p_e;
    if (!want_grads) return out;

    io::TensorMap& g = out.grads;
    for (const auto& [name, value] : model.tensors) {
        g[name] = MatrixXd::Zero(value.rows(), value.cols());
    }
    const double mask_count = static_cast<double>(pool_steps.size());

    // Emotion head.
    VectorXd dz_e;
    kl_gradient(p_e, example.q_e, config.kl_direction, out.forward.kl, &dz_e);
    dz_e *= config.lambda2;
    g["w_emo"] += dz_e * h_mean.transpose();
    g["b_emo"].col(0) += dz_e;
    const VectorXd dh_mean = w_emo.transpose() * dz_e / mask_count;

    // Per-state gradient accumulators.
    std::vector<VectorXd> dh(steps, VectorXd::Zero(hidden));
    for (int t : pool_steps) dh[t] += dh_mean;
    for (int t = 0; t < steps; ++t) {
        if (!probs[t]) continue;
        VectorXd dlogits = *probs[t] * (config.lambda1 / mask_count);
        dlogits[example.ids[predicted[t]]] -= config.lambda1 / mask_count;
        g["w_out"] += dlogits * states[t].transpose();
        g["b_out"].col(0) += dlogits;
        dh[t] += w_out.transpose() * dlogits;
    }

    // Backprop through time over the decoder.
    VectorXd d_init = VectorXd::Zero(hidden);
    for (int t = steps - 1; t >= 0; --t) {
        const VectorXd da =
            (dh[t].array() * (1.0 - states[t].array().square())).matrix();
        const VectorXd prev =
            t > 0 ? states[t - 1]
                  : (encdec ? enc_states.back() : VectorXd::Zero(hidden));
        g["w_xh"] += da * emb.row(consumed[t]);
        g["w_hh"] += da * prev.transpose();
        g["b_h"].col(0) += da;
        g["emb"].row(consumed[t]) += (w_xh.transpose() * da).transpose();
        if (t > 0) {
            dh[t - 1] += w_hh.transpose() * da;
        } else {
            d_init = w_hh.transpose() * da;
        }
    }

    // Backprop through the encoder, seeded by the decoder's initial state.
    if (encdec) {
        const MatrixXd& e_xh = tensor(model, "enc_w_xh");
        const MatrixXd& e_hh = tensor(model, "enc_w_hh");
        VectorXd dg = d_init;
        for (int t = example.input_len - 1; t >= 0; --t) {
            const VectorXd da =
                (dg.array() * (1.0 - enc_states[t].array().square())).matrix();
            const VectorXd prev =
                t > 0 ? enc_states[t - 1] : VectorXd::Zero(hidden);
            g["enc_w_xh"] += da * emb.row(example.ids[t]);
            g["enc_w_hh"] += da * prev.transpose();
            g["enc_b_h"].col(0) += da;
            g["emb"].row(example.ids[t]) += (e_xh.transpose() * da).transpose();
            dg = e_hh.transpose() * da;
        }
    }
    return out;
}

double mean_split_loss(const RnnLm& model,
                       const std::vector<GenerationExample>& examples,
                       const GenLossConfig& config, double* lm_out,
                       double* kl_out) {
    double lm = 0.0, kl = 0.0, total = 0.0;
    for (const auto& ex : examples) {
        const auto f = run_example(model, ex, config, false, false).forward;
        lm += f.lm;
        kl += f.kl;
        total += f.total;
    }
    const double n = static_cast<double>(examples.size());
    if (lm_out) *lm_out = lm / n;
    if (kl_out) *kl_out = kl / n;
    return total / n;
}

}  // namespace

nlohmann::json GenLossConfig::to_json() const {
    return {{"lambda1", lambda1},
            {"lambda2", lambda2},
            {"epsilon", epsilon},
            {"kl_direction", kl_direction}};
}

GenLossConfig GenLossConfig::from_json(const nlohmann::json& doc) {
    GenLossConfig config;
    for (const char* key : {"lambda1", "lambda2", "epsilon", "kl_direction"}) {
        if (!doc.contains(key)) {
            throw data_error(std::string("loss config misses '") + key + "'");
        }
    }
    config.lambda1 = doc.at("lambda1").get<double>();
    config.lambda2 = doc.at("lambda2").get<double>();
    config.epsilon = doc.at("epsilon").get<double>();
    config.kl_direction = doc.at("kl_direction").get<std::string>();
    validate_loss_config(config);
    return config;
}

VectorXd emotion_target(const corpus::Instance& instance) {
    if (instance.emotions.empty()) {
        throw contract_error("emotion target requires gold emotions");
    }
    VectorXd q = VectorXd::Zero(kEmotionCount);
    for (Emotion e : instance.emotions) q[static_cast<int>(e)] = 1.0;
    return q / q.sum();
}

GenerationExample build_training_example(const corpus::Instance& instance,
                                         const text::Vocab& vocab,
                                         bool with_motivation, double epsilon,
                                         int max_input_tokens,
                                         int max_target_tokens) {
    if (max_input_tokens < 1 || max_target_tokens < 2) {
        throw contract_error("token budgets must allow a nonempty prompt");
    }
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw config_error("label smoothing must lie in [0, 1)");
    }
    GenerationExample ex;
    ex.id = corpus::instance_id(instance);
    std::string target_text;
    const auto input_tokens =
        truncated_input_tokens(instance, with_motivation, max_input_tokens,
                               true, &target_text, &ex.truncated);
    auto target_tokens = text::word_tokens(target_text);
    if (static_cast<int>(target_tokens.size()) > max_target_tokens) {
        const std::string closing = target_tokens.back();
        target_tokens.resize(max_target_tokens - 1);
        target_tokens.push_back(closing);
        ex.truncated = true;
    }
    std::vector<std::string> all = input_tokens;
    all.insert(all.end(), target_tokens.begin(), target_tokens.end());
    ex.ids = vocab.encode(all);
    ex.input_len = 1 + static_cast<int>(input_tokens.size());
    ex.mask.assign(ex.ids.size(), 0);
    for (size_t k = 0; k < target_tokens.size(); ++k) {
        ex.mask[ex.input_len + k] = 1;
    }
    ex.q_e = smooth_target(emotion_target(instance), epsilon);
    return ex;
}

double lm_loss(const std::vector<double>& token_log_probs,
               const std::vector<int>& mask) {
    if (token_log_probs.size() != mask.size()) {
        throw contract_error("mask length must match the token sequence");
    }
    double sum = 0.0;
    long long count = 0;
    for (size_t i = 0; i < mask.size(); ++i) {
        if (!mask[i]) continue;
        sum -= token_log_probs[i];
        ++count;
    }
    if (count == 0) throw contract_error("masked span is empty");
    const double loss = sum / static_cast<double>(count);
    if (!std::isfinite(loss)) {
        throw numeric_error("language model loss is not finite");
    }
    return loss;
}

double kl_loss(const VectorXd& p_e, const VectorXd& q_e, double epsilon,
               const std::string& direction, bool* floored) {
    if (p_e.size() == 0 || p_e.size() != q_e.size()) {
        throw contract_error("kl needs equally sized nonempty distributions");
    }
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw config_error("label smoothing must lie in [0, 1)");
    }
    if (direction != "forward" && direction != "reverse") {
        throw config_error("kl direction must be 'forward' or 'reverse'");
    }
    if (!p_e.allFinite() || !q_e.allFinite()) {
        throw numeric_error("kl inputs must be finite");
    }
    const VectorXd q_s = smooth_target(q_e, epsilon);
    VectorXd p = p_e;
    bool hit = false;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (p[i] < kProbFloor) {
            p[i] = kProbFloor;
            hit = true;
        }
    }
    if (floored) *floored = hit;
    double out = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        if (direction == "forward") {
            if (q_s[i] <= 0.0) continue;
            out += q_s[i] * (std::log(q_s[i]) - std::log(p[i]));
        } else {
            out += p[i] * (std::log(p[i]) -
                           std::log(std::max(q_s[i], kProbFloor)));
        }
    }
    if (!std::isfinite(out)) throw numeric_error("kl loss is not finite");
    return out;
}

double total_loss(double lm, double kl, const GenLossConfig& config) {
    validate_loss_config(config);
    if (!std::isfinite(lm) || !std::isfinite(kl)) {
        throw numeric_error("loss components must be finite");
    }
    return config.lambda1 * lm + config.lambda2 * kl;
}

RnnLm init_generator(const std::string& arch, int hidden_dim, int embed_dim,
                     const text::Vocab& vocab, uint64_t seed) {
    if (arch != "causal" && arch != "enc-dec") {
        throw config_error("generator arch must be 'causal' or 'enc-dec'");
    }
    if (hidden_dim < 1 || embed_dim < 1) {
        throw config_error("generator dimensions must be positive");
    }
    RnnLm model;
    model.arch = arch;
    model.hidden_dim = hidden_dim;
    model.embed_dim = embed_dim;
    model.vocab = vocab;
    Rng rng(seed);
    const auto v = static_cast<Eigen::Index>(vocab.size());
    model.tensors["emb"] = nn::glorot(v, embed_dim, rng);
    model.tensors["w_xh"] = nn::glorot(hidden_dim, embed_dim, rng);
    model.tensors["w_hh"] = nn::glorot(hidden_dim, hidden_dim, rng);
    model.tensors["b_h"] = MatrixXd::Zero(hidden_dim, 1);
    model.tensors["w_out"] = nn::glorot(v, hidden_dim, rng);
    model.tensors["b_out"] = MatrixXd::Zero(v, 1);
    model.tensors["w_emo"] = nn::glorot(kEmotionCount, hidden_dim, rng);
    model.tensors["b_emo"] = MatrixXd::Zero(kEmotionCount, 1);
    if (arch == "enc-dec") {
        model.tensors["enc_w_xh"] = nn::glorot(hidden_dim, embed_dim, rng);
        model.tensors["enc_w_hh"] = nn::glorot(hidden_dim, hidden_dim, rng);
        model.tensors["enc_b_h"] = MatrixXd::Zero(hidden_dim, 1);
    }
    return model;
}

GenForward example_loss(const RnnLm& model, const GenerationExample& example,
                        const GenLossConfig& config) {
    return run_example(model, example, config, false, true).forward;
}

GenGradients example_backward(const RnnLm& model,
                              const GenerationExample& example,
                              const GenLossConfig& config) {
    auto run = run_example(model, example, config, true, false);
    GenGradients out;
    out.forward = std::move(run.forward);
    out.grads = std::move(run.grads);
    return out;
}

nlohmann::json GenTrainLog::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : epochs) {
        rows.push_back({{"epoch", e.epoch},
                        {"train_total", e.train_total},
                        {"train_lm", e.train_lm},
                        {"train_kl", e.train_kl},
                        {"dev_total", e.dev_total},
                        {"dev_lm", e.dev_lm},
                        {"dev_kl", e.dev_kl},
                        {"grad_norm_pre_max", e.grad_norm_pre_max},
                        {"grad_norm_post_max", e.grad_norm_post_max}});
    }
    return {{"epochs", rows},
            {"selected_epoch", selected_epoch},
            {"selected_dev_total", selected_dev_total},
            {"aborted_non_finite", aborted_non_finite},
            {"seed", seed}};
}

GenTrainResult train_generator(const std::vector<corpus::Instance>& train,
                               const std::vector<corpus::Instance>& dev,
                               const GenHyper& hyper,
                               const GenLossConfig& loss_config) {
    if (train.empty() || dev.empty()) {
        throw contract_error("training needs nonempty train and dev splits");
    }
    validate_loss_config(loss_config);
    if (hyper.epochs < 1 || hyper.batch_size < 1) {
        throw config_error("epochs and batch size must be >= 1");
    }
    if (!(hyper.lr > 0.0) || !(hyper.grad_clip > 0.0)) {
        throw config_error("learning rate and gradient clip must be positive");
    }
    if (!(hyper.warmup_frac >= 0.0 && hyper.warmup_frac <= 1.0)) {
        throw config_error("warm-up fraction must lie in [0, 1]");
    }

    std::vector<std::vector<std::string>> docs;
    docs.reserve(train.size());
    for (const auto& inst : train) {
        const auto rendering =
            prompting::render_generation_prompt(inst, true,
                                                hyper.with_motivation);
        auto toks = text::word_tokens(rendering.input);
        const auto tgt = text::word_tokens(rendering.target);
        toks.insert(toks.end(), tgt.begin(), tgt.end());
        docs.push_back(std::move(toks));
    }
    const auto vocab = text::Vocab::build(
        docs, static_cast<size_t>(hyper.vocab_max), hyper.vocab_min_count);

    RnnLm model = init_generator(hyper.arch, hyper.hidden_dim, hyper.embed_dim,
                                 vocab, hyper.seed);
    model.with_motivation = hyper.with_motivation;

    const auto build_split = [&](const std::vector<corpus::Instance>& insts) {
        std::vector<GenerationExample> out;
        out.reserve(insts.size());
        for (const auto& inst : insts) {
            out.push_back(build_training_example(
                inst, vocab, hyper.with_motivation, loss_config.epsilon,
                hyper.max_input_tokens, hyper.max_target_tokens));
        }
        return out;
    };
    const auto train_ex = build_split(train);
    const auto dev_ex = build_split(dev);

    nn::Adam adam(hyper.lr);
    Rng shuffle_rng(hyper.seed + 1);
    const long long batches_per_epoch =
        (static_cast<long long>(train_ex.size()) + hyper.batch_size - 1) /
        hyper.batch_size;
    const long long total_steps = hyper.epochs * batches_per_epoch;

    GenTrainLog log;
    log.seed = hyper.seed;
    std::optional<RnnLm> best;
    double best_dev = std::numeric_limits<double>::infinity();
    std::vector<size_t> order(train_ex.size());
    std::iota(order.begin(), order.end(), 0);
    long long step_no = 0;

    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        GenEpochLog row;
        row.epoch = epoch;
        double ep_lm = 0.0, ep_kl = 0.0, ep_total = 0.0;
        long long seen = 0;
        bool bad = false;
        for (size_t start = 0; start < order.size() && !bad;
             start += hyper.batch_size) {
            const size_t stop =
                std::min(order.size(), start + hyper.batch_size);
            io::TensorMap acc;
            for (const auto& [name, value] : model.tensors) {
                acc[name] = MatrixXd::Zero(value.rows(), value.cols());
            }
            for (size_t i = start; i < stop; ++i) {
                const auto gg =
                    example_backward(model, train_ex[order[i]], loss_config);
                if (!std::isfinite(gg.forward.total)) {
                    bad = true;
                    break;
                }
                for (const auto& [name, grad] : gg.grads) acc[name] += grad;
                ep_lm += gg.forward.lm;
                ep_kl += gg.forward.kl;
                ep_total += gg.forward.total;
                ++seen;
            }
            if (bad) break;
            const double inv = 1.0 / static_cast<double>(stop - start);
            std::vector<MatrixXd*> ptrs;
            ptrs.reserve(acc.size());
            for (auto& [name, grad] : acc) {
                grad *= inv;
                ptrs.push_back(&grad);
            }
            const double pre = nn::clip_global_norm(ptrs, hyper.grad_clip);
            if (!std::isfinite(pre)) {
                bad = true;
                break;
            }
            row.grad_norm_pre_max = std::max(row.grad_norm_pre_max, pre);
            row.grad_norm_post_max = std::max(row.grad_norm_post_max,
                                              std::min(pre, hyper.grad_clip));
            ++step_no;
            const double scale =
                nn::warmup_scale(step_no, total_steps, hyper.warmup_frac);
            for (auto& [name, grad] : acc) {
                adam.step(name, model.tensors[name], grad, scale);
            }
        }
        if (bad) {
            log.aborted_non_finite = true;
            break;
        }
        row.train_lm = ep_lm / static_cast<double>(seen);
        row.train_kl = ep_kl / static_cast<double>(seen);
        row.train_total = ep_total / static_cast<double>(seen);
        row.dev_total = mean_split_loss(model, dev_ex, loss_config,
                                        &row.dev_lm, &row.dev_kl);
        if (!std::isfinite(row.dev_total)) {
            log.aborted_non_finite = true;
            break;
        }
        log.epochs.push_back(row);
        if (row.dev_total < best_dev) {
            best_dev = row.dev_total;
            best = model;
            log.selected_epoch = epoch;
        }
    }
    if (!best) {
        throw numeric_error("generator training diverged before any "
                            "checkpoint was recorded");
    }
    log.selected_dev_total = best_dev;
    return {std::move(*best), std::move(log)};
}

GeneratedAction generate_action(const RnnLm& model,
                                const corpus::Instance& instance,
                                const DecodeConfig& decode,
                                int max_input_tokens) {
    validate_decode(decode);
    if (max_input_tokens < 1) {
        throw contract_error("token budgets must allow a nonempty prompt");
    }
    const bool encdec = model.arch == "enc-dec";
    const MatrixXd& emb = tensor(model, "emb");
    const MatrixXd& w_xh = tensor(model, "w_xh");
    const MatrixXd& w_hh = tensor(model, "w_hh");
    const MatrixXd& b_h = tensor(model, "b_h");
    const MatrixXd& w_out = tensor(model, "w_out");
    const MatrixXd& b_out = tensor(model, "b_out");
    const MatrixXd& w_emo = tensor(model, "w_emo");
    const MatrixXd& b_emo = tensor(model, "b_emo");
    const int hidden = static_cast<int>(w_hh.rows());

    bool truncated = false;
    const auto input_tokens =
        truncated_input_tokens(instance, model.with_motivation,
                               max_input_tokens, false, nullptr, &truncated);
    std::vector<int> context = {text::Vocab::kBos};
    for (const auto& tok : input_tokens) {
        context.push_back(model.vocab.id_of(tok));
    }

    // Advance to the state that predicts the first target token.
    VectorXd h0 = VectorXd::Zero(hidden);
    if (encdec) {
        const MatrixXd& e_xh = tensor(model, "enc_w_xh");
        const MatrixXd& e_hh = tensor(model, "enc_w_hh");
        const MatrixXd& e_bh = tensor(model, "enc_b_h");
        for (int id : context) h0 = cell(emb, e_xh, e_hh, e_bh, h0, id);
        h0 = cell(emb, w_xh, w_hh, b_h, h0, text::Vocab::kBos);
    } else {
        for (int id : context) h0 = cell(emb, w_xh, w_hh, b_h, h0, id);
    }

    const int close_id = model.vocab.id_of("[/act]");
    const int width = decode.mode == "greedy" ? 1 : decode.beam_width;

    struct Cand {
        std::vector<int> toks;
        std::vector<VectorXd> states;
        VectorXd h;
        double score = 0.0;
        bool done = false;
    };
    std::vector<Cand> beam = {{{}, {}, h0, 0.0, false}};
    for (int len = 0; len < decode.max_tokens; ++len) {
        bool any_live = false;
        std::vector<Cand> next;
        for (const auto& cand : beam) {
            if (cand.done) {
                next.push_back(cand);
                continue;
            }
            any_live = true;
            const VectorXd lsm =
                nn::log_softmax(w_out * cand.h + b_out.col(0));
            std::vector<int> idx(lsm.size());
            std::iota(idx.begin(), idx.end(), 0);
            const int take =
                std::min<int>(width, static_cast<int>(idx.size()));
            std::partial_sort(idx.begin(), idx.begin() + take, idx.end(),
                              [&](int a, int b) {
                                  if (lsm[a] != lsm[b]) return lsm[a] > lsm[b];
                                  return a < b;
                              });
            for (int k = 0; k < take; ++k) {
                Cand child = cand;
                child.score += lsm[idx[k]];
                if (idx[k] == text::Vocab::kEos) {
                    child.done = true;
                } else {
                    child.toks.push_back(idx[k]);
                    child.h = cell(emb, w_xh, w_hh, b_h, cand.h, idx[k]);
                    child.states.push_back(child.h);
                    if (idx[k] == close_id) child.done = true;
                }
                next.push_back(std::move(child));
            }
        }
        if (!any_live) break;
        std::stable_sort(next.begin(), next.end(),
                         [](const Cand& a, const Cand& b) {
                             return a.score > b.score;
                         });
        if (static_cast<int>(next.size()) > width) next.resize(width);
        beam = std::move(next);
    }

    const auto head_dist = [&](const Cand& cand) {
        VectorXd pooled = VectorXd::Zero(hidden);
        if (cand.states.empty()) {
            pooled = h0;
        } else {
            for (const auto& s : cand.states) pooled += s;
            pooled /= static_cast<double>(cand.states.size());
        }
        return nn::softmax(w_emo * pooled + b_emo.col(0));
    };
    size_t pick = 0;
    if (decode.rerank_emotion) {
        const int want = static_cast<int>(*decode.rerank_emotion);
        double best_p = -1.0;
        for (size_t i = 0; i < beam.size(); ++i) {
            const double p = head_dist(beam[i])[want];
            if (p > best_p) {
                best_p = p;
                pick = i;
            }
        }
    }
    const Cand& chosen = beam[pick];

    GeneratedAction out;
    out.p_e = head_dist(chosen);
    out.score = chosen.score;
    out.truncated_input = truncated;
    out.tokens.reserve(chosen.toks.size());
    for (int id : chosen.toks) out.tokens.push_back(model.vocab.token_of(id));
    const auto parsed =
        prompting::parse_generated_action(text::detokenize(out.tokens));
    out.action = parsed.action;
    out.untagged = parsed.untagged;
    return out;
}

nlohmann::json generated_json(const corpus::Instance& instance,
                              const GeneratedAction& generated) {
    nlohmann::json motivations = nlohmann::json::array();
    for (Motivation m : instance.motivations) {
        motivations.push_back(display_name(m));
    }
    nlohmann::json p_e = nlohmann::json::array();
    for (Eigen::Index i = 0; i < generated.p_e.size(); ++i) {
        p_e.push_back(generated.p_e[i]);
    }
    return {{"input",
             {{"story_id", instance.story_id},
              {"line_idx", instance.line_idx},
              {"character", instance.character},
              {"history", instance.history},
              {"motivations", motivations}}},
            {"action", generated.action},
            {"p_e", p_e},
            {"tagged", !generated.untagged}};
}

nlohmann::json evaluate_generator(const RnnLm& model,
                                  const std::vector<corpus::Instance>& split,
                                  const GenLossConfig& loss_config,
                                  int max_input_tokens,
                                  int max_target_tokens) {
    if (split.empty()) {
        throw contract_error("evaluation needs at least one instance");
    }
    std::vector<double> nlls;
    std::vector<std::string> hyps, refs;
    DecodeConfig greedy;
    greedy.mode = "greedy";
    greedy.beam_width = 1;
    greedy.max_tokens = max_target_tokens;
    for (const auto& inst : split) {
        const auto ex = build_training_example(
            inst, model.vocab, model.with_motivation, loss_config.epsilon,
            max_input_tokens, max_target_tokens);
        const auto fwd = example_loss(model, ex, loss_config);
        for (size_t j = 0; j < ex.mask.size(); ++j) {
            if (ex.mask[j]) nlls.push_back(-fwd.token_log_probs[j]);
        }
        std::string action;
        try {
            action = generate_action(model, inst, greedy, max_input_tokens)
                         .action;
        } catch (const error&) {
            // An empty decode counts as a zero-overlap hypothesis.
        }
        hyps.push_back(action);
        refs.push_back(inst.action);
    }
    return {{"ppl", metrics::perplexity(nlls)},
            {"bleu_1", metrics::bleu(hyps, refs, 1)},
            {"bleu_2", metrics::bleu(hyps, refs, 2)},
            {"bleu_4", metrics::bleu(hyps, refs, 4)},
            {"rouge_1", metrics::rouge(hyps, refs, metrics::Rouge::r1)},
            {"rouge_2", metrics::rouge(hyps, refs, metrics::Rouge::r2)},
            {"rouge_l", metrics::rouge(hyps, refs, metrics::Rouge::rl)}};
}

void save_generator(const RnnLm& model, const GenLossConfig& loss_config,
                    const DecodeConfig& decode_defaults,
                    const std::string& dir) {
    validate_loss_config(loss_config);
    validate_decode(decode_defaults);
    std::filesystem::create_directories(dir);
    const auto base = std::filesystem::path(dir);
    io::write_weights((base / "weights.bin").string(), model.tensors);
    io::write_vocab(model.vocab, (base / "vocab.json").string());
    nlohmann::json sidecar = {
        {"arch", model.arch},
        {"hidden_dim", model.hidden_dim},
        {"embed_dim", model.embed_dim},
        {"with_motivation", model.with_motivation},
        {"template_version", std::string(prompting::template_version())},
        {"decode_defaults",
         {{"mode", decode_defaults.mode},
          {"beam_width", decode_defaults.beam_width},
          {"max_tokens", decode_defaults.max_tokens}}},
    };
    sidecar.update(loss_config.to_json());
    io::write_json_file((base / "model.json").string(), sidecar);
}

LoadedGenerator load_generator(const std::string& dir) {
    const auto base = std::filesystem::path(dir);
    const auto sidecar = io::read_json_file((base / "model.json").string());
    for (const char* key :
         {"arch", "hidden_dim", "embed_dim", "with_motivation",
          "template_version", "decode_defaults", "lambda1", "lambda2",
          "epsilon", "kl_direction"}) {
        if (!sidecar.contains(key)) {
            throw data_error(std::string("generator sidecar misses '") + key +
                             "': " + dir);
        }
    }
    if (sidecar.at("template_version").get<std::string>() !=
        prompting::template_version()) {
        throw data_error(
            "generator was trained with a different prompt template set: " +
            dir);
    }
    LoadedGenerator out;
    out.model.arch = sidecar.at("arch").get<std::string>();
    if (out.model.arch != "causal" && out.model.arch != "enc-dec") {
        throw data_error("generator arch must be 'causal' or 'enc-dec': " +
                         dir);
    }
    out.model.hidden_dim = sidecar.at("hidden_dim").get<int>();
    out.model.embed_dim = sidecar.at("embed_dim").get<int>();
    out.model.with_motivation = sidecar.at("with_motivation").get<bool>();
    if (out.model.hidden_dim < 1 || out.model.embed_dim < 1) {
        throw data_error("generator dimensions must be positive: " + dir);
    }
    out.loss_config = GenLossConfig::from_json(sidecar);
    const auto& dec = sidecar.at("decode_defaults");
    for (const char* key : {"mode", "beam_width", "max_tokens"}) {
        if (!dec.contains(key)) {
            throw data_error(std::string("decode defaults miss '") + key +
                             "': " + dir);
        }
    }
    out.decode_defaults.mode = dec.at("mode").get<std::string>();
    out.decode_defaults.beam_width = dec.at("beam_width").get<int>();
    out.decode_defaults.max_tokens = dec.at("max_tokens").get<int>();
    validate_decode(out.decode_defaults);
    out.model.vocab = io::read_vocab((base / "vocab.json").string());
    out.model.tensors = io::read_weights((base / "weights.bin").string());
    std::vector<std::string> required = {"emb",   "w_xh",  "w_hh",  "b_h",
                                         "w_out", "b_out", "w_emo", "b_emo"};
    if (out.model.arch == "enc-dec") {
        required.insert(required.end(),
                        {"enc_w_xh", "enc_w_hh", "enc_b_h"});
    }
    const auto v = static_cast<Eigen::Index>(out.model.vocab.size());
    const Eigen::Index h = out.model.hidden_dim;
    const Eigen::Index e = out.model.embed_dim;
    const std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> shapes =
        {{"emb", {v, e}},        {"w_xh", {h, e}},
         {"w_hh", {h, h}},       {"b_h", {h, 1}},
         {"w_out", {v, h}},      {"b_out", {v, 1}},
         {"w_emo", {kEmotionCount, h}}, {"b_emo", {kEmotionCount, 1}},
         {"enc_w_xh", {h, e}},   {"enc_w_hh", {h, h}},
         {"enc_b_h", {h, 1}}};
    for (const auto& name : required) {
        const auto it = out.model.tensors.find(name);
        if (it == out.model.tensors.end()) {
            throw data_error("generator weights miss '" + name + "': " + dir);
        }
        const auto& want = shapes.at(name);
        if (it->second.rows() != want.first ||
            it->second.cols() != want.second) {
            throw data_error("generator tensor '" + name +
                             "' has the wrong shape: " + dir);
        }
        if (!it->second.allFinite()) {
            throw data_error("generator tensor '" + name +
                             "' holds non-finite values: " + dir);
        }
    }
    return out;
}

}  // namespace comma::generation
