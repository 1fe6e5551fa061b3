#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "comma/corpus.hpp"
#include "comma/io.hpp"
#include "comma/labels.hpp"
#include "comma/text.hpp"
#include "json.hpp"

namespace comma::generation {

// Weighted sum of the masked LM term and the emotion KL term. The KL is
// written against the smoothed target so a one-hot label keeps full
// support; the direction is configurable and recorded in artifacts.
struct GenLossConfig {
    double lambda1 = 1.0;
    double lambda2 = 1.5;
    double epsilon = 0.1;                // target label smoothing
    std::string kl_direction = "forward";  // "forward": KL(q_s || p)
    nlohmann::json to_json() const;
    static GenLossConfig from_json(const nlohmann::json& doc);
};

// One teacher-forced training unit. ids is the full token sequence
// [bos] input target [eos]; mask flags exactly the target action tokens
// (including the [act]/[/act] boundaries); input_len counts [bos] plus the
// input tokens, so ids[input_len] is the first masked position.
struct GenerationExample {
    std::string id;
    std::vector<int> ids;
    std::vector<int> mask;
    int input_len = 0;
    Eigen::VectorXd q_e;  // smoothed normalized emotion indicator
    bool truncated = false;
};

// Normalized indicator over the eight emotion labels, before smoothing.
Eigen::VectorXd emotion_target(const corpus::Instance& instance);

// Renders the prompt pair, tokenizes, and enforces the length budget by
// dropping history lines from the oldest first (then hard-truncating as a
// last resort, always keeping the closing tag of the target).
GenerationExample build_training_example(const corpus::Instance& instance,
                                         const text::Vocab& vocab,
                                         bool with_motivation, double epsilon,
                                         int max_input_tokens = 200,
                                         int max_target_tokens = 60);

// Mean negative log-likelihood over masked positions only.
double lm_loss(const std::vector<double>& token_log_probs,
               const std::vector<int>& mask);

// KL between the prediction and the epsilon-smoothed target
// q_s = (1 - epsilon) q + epsilon / K. Entries of p below 1e-12 are floored;
// floored (when given) reports whether the guard fired.
double kl_loss(const Eigen::VectorXd& p_e, const Eigen::VectorXd& q_e,
               double epsilon, const std::string& direction = "forward",
               bool* floored = nullptr);

// lambda1 * lm + lambda2 * kl.
double total_loss(double lm, double kl, const GenLossConfig& config);

// Small recurrent LM trained from scratch. "causal" runs one tanh cell over
// the whole sequence; "enc-dec" encodes the input with its own cell and
// seeds the decoder state with the final encoder state. The emotion head
// mean-pools decoder states over the action span.
// Tensors: emb, w_xh, w_hh, b_h, w_out, b_out, w_emo, b_emo, and for
// "enc-dec" additionally enc_w_xh, enc_w_hh, enc_b_h.
struct RnnLm {
    std::string arch = "causal";  // or "enc-dec"
    int hidden_dim = 0;
    int embed_dim = 0;
    text::Vocab vocab;
    io::TensorMap tensors;
    bool with_motivation = true;  // template used at training time
};

RnnLm init_generator(const std::string& arch, int hidden_dim, int embed_dim,
                     const text::Vocab& vocab, uint64_t seed);

// Teacher-forced forward pass. token_log_probs is aligned with ids:
// entry j is log p(ids[j] | prefix); position 0 is unpredicted and 0.
struct GenForward {
    double lm = 0.0;
    double kl = 0.0;
    double total = 0.0;
    Eigen::VectorXd p_e;
    std::vector<double> token_log_probs;
};

GenForward example_loss(const RnnLm& model, const GenerationExample& example,
                        const GenLossConfig& config);

// Forward plus gradients of the total loss for every model tensor.
struct GenGradients {
    GenForward forward;
    io::TensorMap grads;
};

GenGradients example_backward(const RnnLm& model,
                              const GenerationExample& example,
                              const GenLossConfig& config);

struct GenHyper {
    int epochs = 5;
    int batch_size = 32;
    double lr = 0.05;  // from-scratch desk scale; pretrained setups use 1e-5
    double warmup_frac = 0.1;
    double grad_clip = 1.0;
    int hidden_dim = 64;
    int embed_dim = 32;
    int max_input_tokens = 200;
    int max_target_tokens = 60;
    int vocab_min_count = 1;
    int vocab_max = 20000;
    uint64_t seed = 7;
    std::string arch = "causal";
    bool with_motivation = true;  // false: "w/o M" template ablation
};

struct GenEpochLog {
    int epoch = 0;
    double train_total = 0.0;
    double train_lm = 0.0;
    double train_kl = 0.0;
    double dev_total = 0.0;
    double dev_lm = 0.0;
    double dev_kl = 0.0;
    double grad_norm_pre_max = 0.0;
    double grad_norm_post_max = 0.0;
};

struct GenTrainLog {
    std::vector<GenEpochLog> epochs;
    int selected_epoch = -1;
    double selected_dev_total = 0.0;
    bool aborted_non_finite = false;
    uint64_t seed = 0;
    nlohmann::json to_json() const;
};

struct GenTrainResult {
    RnnLm model;
    GenTrainLog log;
};

// Trains with Adam, global-norm clipping, and linear warm-up; selects the
// checkpoint with the best dev total loss. A non-finite loss aborts the run
// and returns the last good checkpoint.
GenTrainResult train_generator(const std::vector<corpus::Instance>& train,
                               const std::vector<corpus::Instance>& dev,
                               const GenHyper& hyper,
                               const GenLossConfig& loss_config);

struct DecodeConfig {
    std::string mode = "beam";  // "greedy" | "beam"
    int beam_width = 4;
    int max_tokens = 60;
    // When set, beam candidates are reranked by the emotion head's
    // probability of this label.
    std::optional<Emotion> rerank_emotion;
};

struct GeneratedAction {
    std::string action;
    bool untagged = false;
    std::vector<std::string> tokens;  // decoded target tokens
    Eigen::VectorXd p_e;              // emotion head over the generated span
    double score = 0.0;               // sum of token log-probabilities
    bool truncated_input = false;
};

GeneratedAction generate_action(const RnnLm& model,
                                const corpus::Instance& instance,
                                const DecodeConfig& decode,
                                int max_input_tokens = 200);

nlohmann::json generated_json(const corpus::Instance& instance,
                              const GeneratedAction& generated);

// Teacher-forced perplexity plus BLEU/ROUGE of greedy decodes against the
// reference actions; keys ppl, bleu_1, bleu_2, bleu_4, rouge_1, rouge_2,
// rouge_l.
nlohmann::json evaluate_generator(const RnnLm& model,
                                  const std::vector<corpus::Instance>& split,
                                  const GenLossConfig& loss_config,
                                  int max_input_tokens = 200,
                                  int max_target_tokens = 60);

// Artifact directory: weights.bin, vocab.json, and a model.json sidecar
// recording arch, loss weights, template lineage, and decode defaults.
void save_generator(const RnnLm& model, const GenLossConfig& loss_config,
                    const DecodeConfig& decode_defaults,
                    const std::string& dir);

struct LoadedGenerator {
    RnnLm model;
    GenLossConfig loss_config;
    DecodeConfig decode_defaults;
};

LoadedGenerator load_generator(const std::string& dir);

}  // namespace comma::generation
