#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "comma/concept_kb.hpp"
#include "comma/corpus.hpp"
#include "comma/labels.hpp"
#include "comma/metrics.hpp"
#include "comma/text.hpp"
#include "json.hpp"

namespace comma::understanding {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Classifier head over a sentence representation: softmax(W2 tanh(W1 h + b1)).
// The raw head emits logits; exponential normalization makes the voting
// mixture well defined on the simplex.
struct Head {
    MatrixXd w1;  // hidden x hidden
    MatrixXd b1;  // hidden x 1
    MatrixXd w2;  // labels x hidden
};

VectorXd classify(const VectorXd& h_s, const Head& head);

// aver/max/sum pool the vote set directly; gate mixes the classifier with
// the pooled concept vote; mlp scores the concatenation [p_z; K].
enum class VotingMode { aver, max, sum, mlp, gate };

std::string voting_mode_name(VotingMode mode);
VotingMode parse_voting_mode(const std::string& name);

struct MlpVoter {
    MatrixXd w1;  // hidden x 2N
    MatrixXd b1;  // hidden x 1
    MatrixXd w2;  // N x hidden
    MatrixXd b2;  // N x 1
};

struct VotingConfig {
    VotingMode mode = VotingMode::gate;
    // Pooling of the concept votes feeding gate/mlp combination.
    VotingMode pooling = VotingMode::aver;
    double alpha = 0.5;  // effective gate weight in [0, 1]
    int mlp_hidden = 16;

    nlohmann::json to_json() const;
    static VotingConfig from_json(const nlohmann::json& doc);
};

// Pooled concept vote K. max and sum are renormalized to the simplex.
VectorXd pool_dists(const std::vector<VectorXd>& dists, VotingMode pooling);

// Final distribution p_f. Empty vote sets fall back to p_z exactly; the mlp
// pointer is required only in mlp mode.
VectorXd vote(const VectorXd& p_z, const std::vector<VectorXd>& dists,
              const VotingConfig& config, const MlpVoter* mlp = nullptr);

// Distributional cross-entropy in KL form against the normalized gold
// indicator; exactly zero when the prediction equals the target.
double understanding_loss(const VectorXd& p_f, const VectorXd& gold);

// Gold label indices of the task (emotions for eu, motivations for mu).
std::set<int> gold_indices(const corpus::Instance& instance, Task task);

// Normalized indicator over the task's label space.
VectorXd gold_distribution(const corpus::Instance& instance, Task task);

struct Hyper {
    int epochs = 5;
    int batch_size = 32;
    double lr = 0.05;  // from-scratch desk encoder; far above fine-tune range
    double warmup_frac = 0.1;
    double grad_clip = 1.0;
    int hidden_dim = 32;
    int max_tokens = 200;
    int vocab_min_count = 1;
    std::size_t vocab_max = 20000;
    std::uint64_t seed = 7;
};

struct Model {
    Task task = Task::eu;
    std::vector<std::string> labels;
    text::Vocab vocab;
    MatrixXd embeddings;  // hidden x vocab
    Head head;
    VotingConfig voting;
    double alpha_raw = 0.0;  // gate logit; sigmoid gives voting.alpha
    MlpVoter mlp;            // populated only in mlp mode
    double threshold = 0.5;  // decision threshold tau
    std::string encoder_id = "tiny-boe-v1";
    std::string kb_fingerprint;
    std::map<std::string, double> dev_metrics;
};

// Mean of the prompt's token embeddings ("tiny-boe-v1" encoder contract:
// any deterministic text -> fixed-width vector map qualifies).
VectorXd encode(const Model& model, const std::string& prompt_text);

// Fresh seeded parameters with the vocabulary built from the train prompts.
Model init_model(Task task, const Hyper& hyper, const kb::ConceptKB& kb,
                 const VotingConfig& voting,
                 const std::vector<corpus::Instance>& train);

// Loss and parameter gradients of one (h_s, gold) pair through head and
// voting. `grad_h` feeds the encoder update; alpha/mlp gradients are zero
// outside their modes.
struct HeadGradients {
    double loss = 0.0;
    VectorXd p_z;
    VectorXd p_f;
    MatrixXd w1, b1, w2;
    VectorXd grad_h;
    double alpha_raw = 0.0;
    MlpVoter mlp;
};

HeadGradients head_backward(const VectorXd& h_s, const Head& head,
                            const MlpVoter* mlp, double alpha_raw,
                            const std::vector<VectorXd>& dists,
                            const VotingConfig& voting, const VectorXd& gold);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double dev_micro_f1 = 0.0;
    double dev_threshold = 0.5;
    double grad_norm_pre_max = 0.0;
    double grad_norm_post_max = 0.0;
    int clipped_steps = 0;
};

struct TrainLog {
    std::vector<EpochLog> epochs;
    int selected_epoch = 0;
    double selected_threshold = 0.5;
    double selected_dev_f1 = 0.0;
    std::uint64_t seed = 0;

    nlohmann::json to_json() const;
};

struct TrainResult {
    Model model;
    TrainLog log;
};

// Optimizes the distributional loss on p_f over train; checkpoint and tau
// are picked by dev micro-F1. Training supports the gate and mlp modes;
// pooling-only modes are inference options.
TrainResult train_understanding(const std::vector<corpus::Instance>& train,
                                const std::vector<corpus::Instance>& dev,
                                Task task, const Hyper& hyper,
                                const kb::ConceptKB& kb,
                                const VotingConfig& voting = {},
                                const kb::ExtractionConfig& extraction = {});

struct Prediction {
    std::set<int> decision;  // labels with p_f >= tau, argmax always included
    VectorXd p_z;
    VectorXd p_f;
    std::vector<kb::ConceptDist> concepts;
};

Prediction predict(const corpus::Instance& instance, const Model& model,
                   const kb::ConceptKB& kb,
                   const kb::ExtractionConfig& extraction = {});

// One prediction stream record.
nlohmann::json prediction_json(const corpus::Instance& instance,
                               const Prediction& prediction,
                               const Model& model);

// Micro PRF of thresholded decisions over a split.
metrics::Prf evaluate_understanding(const Model& model,
                                    const kb::ConceptKB& kb,
                                    const std::vector<corpus::Instance>& split,
                                    const kb::ExtractionConfig& extraction = {});

// Micro-F1 of always answering the most frequent train gold label.
double majority_label_f1(const std::vector<corpus::Instance>& train,
                         const std::vector<corpus::Instance>& eval,
                         Task task);

// Expected micro-F1 of a single uniformly random label guess per instance.
double uniform_random_expected_f1(const std::vector<corpus::Instance>& eval,
                                  Task task);

// Rows are motivations, columns emotions; entry = mean p_f(e) over pairs
// whose gold motivations include the row. Unpopulated rows become NaN.
MatrixXd joint_matrix(
    const std::vector<std::pair<std::set<Motivation>, VectorXd>>& outputs);

// weights.bin + model.json sidecar + vocab.json (+ train_log.json from the
// cli). load re-derives shapes and validates the label space.
void save_model(const Model& model, const std::string& dir);
Model load_model(const std::string& dir);

}  // namespace comma::understanding
