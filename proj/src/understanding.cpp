#include "comma/understanding.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>

#include "comma/errors.hpp"
#include "comma/io.hpp"
#include "comma/nn.hpp"
#include "comma/prompting.hpp"
#include "comma/rng.hpp"

namespace comma::understanding {
namespace {

constexpr double kProbFloor = 1e-12;
constexpr int kMaxPromptTokens = 200;

void check_finite(const VectorXd& v, const char* what) {
    if (!v.allFinite()) {
        throw numeric_error(std::string(what) + " contains non-finite values");
    }
}

void check_same_dim(const VectorXd& p_z, const std::vector<VectorXd>& dists) {
    for (const auto& d : dists) {
        if (d.size() != p_z.size()) {
            throw contract_error("vote distributions must share the label "
                                 "space dimension");
        }
    }
}

std::vector<int> prompt_ids(const text::Vocab& vocab,
                            const std::string& prompt) {
    const auto tokens = text::word_tokens(prompt, true);
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) {
        ids.push_back(vocab.id_of(t));
        if (static_cast<int>(ids.size()) >= kMaxPromptTokens) break;
    }
    if (ids.empty()) throw contract_error("prompt tokenized to nothing");
    return ids;
}

VectorXd mean_embedding(const MatrixXd& embeddings,
                        const std::vector<int>& ids) {
    VectorXd h = VectorXd::Zero(embeddings.rows());
    for (int id : ids) h += embeddings.col(id);
    return h / static_cast<double>(ids.size());
}

// dL/dlogits for p = softmax(logits) given dL/dp.
VectorXd softmax_backward(const VectorXd& p, const VectorXd& dp) {
    const double inner = p.dot(dp);
    return (p.array() * (dp.array() - inner)).matrix();
}

std::set<int> decide(const VectorXd& p_f, double threshold) {
    std::set<int> out;
    Eigen::Index argmax = 0;
    p_f.maxCoeff(&argmax);
    out.insert(static_cast<int>(argmax));
    for (Eigen::Index j = 0; j < p_f.size(); ++j) {
        if (p_f[j] >= threshold) out.insert(static_cast<int>(j));
    }
    return out;
}

const std::vector<double>& threshold_grid() {
    static const std::vector<double> grid = [] {
        std::vector<double> g;
        for (int i = 1; i <= 19; ++i) g.push_back(0.05 * i);
        return g;
    }();
    return grid;
}

std::string task_name(Task task) { return task == Task::eu ? "eu" : "mu"; }

Task parse_task_name(const std::string& name) {
    if (name == "eu") return Task::eu;
    if (name == "mu") return Task::mu;
    throw data_error("unknown understanding task '" + name + "'");
}

struct PreparedInstance {
    std::vector<int> ids;
    VectorXd gold;
    std::set<int> gold_set;
    std::vector<VectorXd> dists;
};

PreparedInstance prepare(const corpus::Instance& instance, Task task,
                         const text::Vocab& vocab, const kb::ConceptKB& kb_ref,
                         const kb::ExtractionConfig& extraction) {
    PreparedInstance out;
    out.ids = prompt_ids(vocab, prompting::render_understanding_prompt(
                                    instance, task));
    out.gold = gold_distribution(instance, task);
    out.gold_set = gold_indices(instance, task);
    for (auto& cd : kb::query_kb(kb_ref, instance.action, extraction)) {
        out.dists.push_back(std::move(cd.dist));
    }
    return out;
}

}  // namespace

VectorXd classify(const VectorXd& h_s, const Head& head) {
    check_finite(h_s, "encoder output");
    if (head.w1.cols() != h_s.size() || head.b1.rows() != head.w1.rows() ||
        head.w2.cols() != head.w1.rows()) {
        throw contract_error("classifier head shapes are inconsistent");
    }
    const VectorXd t = (head.w1 * h_s + head.b1.col(0)).array().tanh();
    return nn::softmax(head.w2 * t);
}

std::string voting_mode_name(VotingMode mode) {
    switch (mode) {
        case VotingMode::aver: return "aver";
        case VotingMode::max: return "max";
        case VotingMode::sum: return "sum";
        case VotingMode::mlp: return "mlp";
        case VotingMode::gate: return "gate";
    }
    throw contract_error("unreachable voting mode");
}

VotingMode parse_voting_mode(const std::string& name) {
    if (name == "aver") return VotingMode::aver;
    if (name == "max") return VotingMode::max;
    if (name == "sum") return VotingMode::sum;
    if (name == "mlp") return VotingMode::mlp;
    if (name == "gate") return VotingMode::gate;
    throw config_error("unknown voting mode '" + name + "'");
}

nlohmann::json VotingConfig::to_json() const {
    return {{"mode", voting_mode_name(mode)},
            {"pooling", voting_mode_name(pooling)},
            {"alpha", alpha},
            {"mlp_hidden", mlp_hidden}};
}

VotingConfig VotingConfig::from_json(const nlohmann::json& doc) {
    VotingConfig out;
    out.mode = parse_voting_mode(doc.at("mode").get<std::string>());
    out.pooling = parse_voting_mode(doc.at("pooling").get<std::string>());
    out.alpha = doc.at("alpha").get<double>();
    out.mlp_hidden = doc.at("mlp_hidden").get<int>();
    if (out.alpha < 0.0 || out.alpha > 1.0) {
        throw config_error("voting alpha must lie in [0, 1]");
    }
    return out;
}

VectorXd pool_dists(const std::vector<VectorXd>& dists, VotingMode pooling) {
    if (dists.empty()) throw contract_error("pooling over an empty vote set");
    VectorXd k = dists[0];
    switch (pooling) {
        case VotingMode::aver:
        case VotingMode::sum:
            for (size_t i = 1; i < dists.size(); ++i) k += dists[i];
            break;
        case VotingMode::max:
            for (size_t i = 1; i < dists.size(); ++i) {
                k = k.cwiseMax(dists[i]);
            }
            break;
        default:
            throw config_error("pooling must be aver, max, or sum");
    }
    const double z = k.sum();
    if (!(z > 0.0)) throw numeric_error("pooled vote has zero mass");
    return k / z;
}

VectorXd vote(const VectorXd& p_z, const std::vector<VectorXd>& dists,
              const VotingConfig& config, const MlpVoter* mlp) {
    check_same_dim(p_z, dists);
    if (dists.empty()) return p_z;
    switch (config.mode) {
        case VotingMode::aver:
        case VotingMode::max:
        case VotingMode::sum: {
            std::vector<VectorXd> all;
            all.reserve(dists.size() + 1);
            all.push_back(p_z);
            all.insert(all.end(), dists.begin(), dists.end());
            return pool_dists(all, config.mode);
        }
        case VotingMode::gate: {
            if (config.alpha < 0.0 || config.alpha > 1.0) {
                throw config_error("gate alpha must lie in [0, 1]");
            }
            const VectorXd k = pool_dists(dists, config.pooling);
            return config.alpha * p_z + (1.0 - config.alpha) * k;
        }
        case VotingMode::mlp: {
            if (mlp == nullptr) {
                throw contract_error("mlp voting needs the voter weights");
            }
            const VectorXd k = pool_dists(dists, config.pooling);
            VectorXd x(p_z.size() + k.size());
            x << p_z, k;
            const VectorXd t = (mlp->w1 * x + mlp->b1.col(0)).array().tanh();
            return nn::softmax(mlp->w2 * t + mlp->b2.col(0));
        }
    }
    throw contract_error("unreachable voting mode");
}

double understanding_loss(const VectorXd& p_f, const VectorXd& gold) {
    if (p_f.size() != gold.size()) {
        throw contract_error("loss needs matching label dimensions");
    }
    double loss = 0.0;
    for (Eigen::Index j = 0; j < gold.size(); ++j) {
        if (gold[j] <= 0.0) continue;
        loss += gold[j] * (std::log(gold[j]) -
                           std::log(std::max(p_f[j], kProbFloor)));
    }
    return loss;
}

std::set<int> gold_indices(const corpus::Instance& instance, Task task) {
    std::set<int> out;
    if (task == Task::eu) {
        for (Emotion e : instance.emotions) out.insert(static_cast<int>(e));
    } else {
        for (Motivation m : instance.motivations) {
            out.insert(static_cast<int>(m));
        }
    }
    if (out.empty()) {
        throw contract_error("instance " + corpus::instance_id(instance) +
                             " has no gold labels for the task");
    }
    return out;
}

VectorXd gold_distribution(const corpus::Instance& instance, Task task) {
    const auto idx = gold_indices(instance, task);
    VectorXd g = VectorXd::Zero(label_count(task));
    for (int j : idx) g[j] = 1.0 / static_cast<double>(idx.size());
    return g;
}

VectorXd encode(const Model& model, const std::string& prompt_text) {
    const VectorXd h =
        mean_embedding(model.embeddings, prompt_ids(model.vocab, prompt_text));
    check_finite(h, "encoder output");
    return h;
}

Model init_model(Task task, const Hyper& hyper, const kb::ConceptKB& kb_ref,
                 const VotingConfig& voting,
                 const std::vector<corpus::Instance>& train) {
    if (train.empty()) {
        throw config_error("model initialization needs training instances");
    }
    if (kb_ref.task != task) {
        throw config_error("concept KB task does not match the classifier "
                           "task");
    }
    if (hyper.hidden_dim <= 0) throw config_error("hidden_dim must be > 0");
    Model model;
    model.task = task;
    model.labels = label_ids(task);
    model.voting = voting;
    model.kb_fingerprint = io::json_fingerprint(kb::kb_json(kb_ref));

    std::vector<std::vector<std::string>> docs;
    docs.reserve(train.size());
    for (const auto& inst : train) {
        docs.push_back(text::word_tokens(
            prompting::render_understanding_prompt(inst, task), true));
    }
    model.vocab =
        text::Vocab::build(docs, hyper.vocab_max, hyper.vocab_min_count);

    Rng rng(hyper.seed);
    const int h = hyper.hidden_dim;
    const int n = label_count(task);
    model.embeddings = nn::glorot(h, static_cast<Eigen::Index>(
                                         model.vocab.size()), rng);
    model.head.w1 = nn::glorot(h, h, rng);
    model.head.b1 = MatrixXd::Zero(h, 1);
    model.head.w2 = nn::glorot(n, h, rng);
    model.alpha_raw = 0.0;  // sigmoid(0) = 0.5, the documented gate start
    model.voting.alpha = nn::sigmoid(model.alpha_raw);
    if (voting.mode == VotingMode::mlp) {
        model.mlp.w1 = nn::glorot(voting.mlp_hidden, 2 * n, rng);
        model.mlp.b1 = MatrixXd::Zero(voting.mlp_hidden, 1);
        model.mlp.w2 = nn::glorot(n, voting.mlp_hidden, rng);
        model.mlp.b2 = MatrixXd::Zero(n, 1);
    }
    return model;
}

HeadGradients head_backward(const VectorXd& h_s, const Head& head,
                            const MlpVoter* mlp, double alpha_raw,
                            const std::vector<VectorXd>& dists,
                            const VotingConfig& voting, const VectorXd& gold) {
    HeadGradients out;
    check_finite(h_s, "encoder output");
    const VectorXd a = head.w1 * h_s + head.b1.col(0);
    const VectorXd t = a.array().tanh();
    const VectorXd z = head.w2 * t;
    out.p_z = nn::softmax(z);
    check_same_dim(out.p_z, dists);

    VectorXd dp_z;
    out.alpha_raw = 0.0;
    if (dists.empty()) {
        out.p_f = out.p_z;
        VectorXd dp_f = VectorXd::Zero(out.p_f.size());
        for (Eigen::Index j = 0; j < gold.size(); ++j) {
            if (gold[j] > 0.0) {
                dp_f[j] = -gold[j] / std::max(out.p_f[j], kProbFloor);
            }
        }
        dp_z = dp_f;
    } else if (voting.mode == VotingMode::gate) {
        const double alpha = nn::sigmoid(alpha_raw);
        const VectorXd k = pool_dists(dists, voting.pooling);
        out.p_f = alpha * out.p_z + (1.0 - alpha) * k;
        VectorXd dp_f = VectorXd::Zero(out.p_f.size());
        for (Eigen::Index j = 0; j < gold.size(); ++j) {
            if (gold[j] > 0.0) {
                dp_f[j] = -gold[j] / std::max(out.p_f[j], kProbFloor);
            }
        }
        const double dalpha = dp_f.dot(out.p_z - k);
        out.alpha_raw = dalpha * alpha * (1.0 - alpha);
        dp_z = alpha * dp_f;
    } else if (voting.mode == VotingMode::mlp) {
        if (mlp == nullptr) {
            throw contract_error("mlp voting needs the voter weights");
        }
        const VectorXd k = pool_dists(dists, voting.pooling);
        VectorXd x(out.p_z.size() + k.size());
        x << out.p_z, k;
        const VectorXd am = mlp->w1 * x + mlp->b1.col(0);
        const VectorXd tm = am.array().tanh();
        const VectorXd zm = mlp->w2 * tm + mlp->b2.col(0);
        out.p_f = nn::softmax(zm);
        // For p_f = softmax(zm) and the KL-form loss, dL/dzm = p_f - gold.
        const VectorXd dzm = out.p_f - gold;
        out.mlp.w2 = dzm * tm.transpose();
        out.mlp.b2 = dzm;
        const VectorXd dtm = mlp->w2.transpose() * dzm;
        const VectorXd dam =
            ((1.0 - tm.array().square()) * dtm.array()).matrix();
        out.mlp.w1 = dam * x.transpose();
        out.mlp.b1 = dam;
        const VectorXd dx = mlp->w1.transpose() * dam;
        dp_z = dx.head(out.p_z.size());
    } else {
        throw config_error("training supports the gate and mlp voting modes; "
                           "pooling-only modes are inference options");
    }

    out.loss = understanding_loss(out.p_f, gold);
    const VectorXd dz = softmax_backward(out.p_z, dp_z);
    out.w2 = dz * t.transpose();
    const VectorXd dt = head.w2.transpose() * dz;
    const VectorXd da = ((1.0 - t.array().square()) * dt.array()).matrix();
    out.w1 = da * h_s.transpose();
    out.b1 = da;
    out.grad_h = head.w1.transpose() * da;
    return out;
}

nlohmann::json TrainLog::to_json() const {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& e : epochs) {
        rows.push_back({{"epoch", e.epoch},
                        {"train_loss", e.train_loss},
                        {"dev_micro_f1", e.dev_micro_f1},
                        {"dev_threshold", e.dev_threshold},
                        {"grad_norm_pre_max", e.grad_norm_pre_max},
                        {"grad_norm_post_max", e.grad_norm_post_max},
                        {"clipped_steps", e.clipped_steps}});
    }
    return {{"seed", seed},
            {"epochs", rows},
            {"selected", {{"epoch", selected_epoch},
                          {"threshold", selected_threshold},
                          {"dev_micro_f1", selected_dev_f1}}}};
}

TrainResult train_understanding(const std::vector<corpus::Instance>& train,
                                const std::vector<corpus::Instance>& dev,
                                Task task, const Hyper& hyper,
                                const kb::ConceptKB& kb_ref,
                                const VotingConfig& voting,
                                const kb::ExtractionConfig& extraction) {
    if (train.empty() || dev.empty()) {
        throw config_error("training needs nonempty train and dev splits");
    }
    if (hyper.epochs <= 0 || hyper.batch_size <= 0 || hyper.lr <= 0.0) {
        throw config_error("epochs, batch size, and lr must be positive");
    }
    if (voting.mode != VotingMode::gate && voting.mode != VotingMode::mlp) {
        throw config_error("training supports the gate and mlp voting modes; "
                           "pooling-only modes are inference options");
    }
    if (extraction.fingerprint() != kb_ref.config_fingerprint) {
        throw config_error("extraction config fingerprint does not match the "
                           "concept KB");
    }

    Model model = init_model(task, hyper, kb_ref, voting, train);
    std::vector<PreparedInstance> train_prep, dev_prep;
    train_prep.reserve(train.size());
    for (const auto& inst : train) {
        train_prep.push_back(prepare(inst, task, model.vocab, kb_ref,
                                     extraction));
    }
    dev_prep.reserve(dev.size());
    for (const auto& inst : dev) {
        dev_prep.push_back(prepare(inst, task, model.vocab, kb_ref,
                                   extraction));
    }
    std::vector<std::set<int>> dev_gold;
    dev_gold.reserve(dev_prep.size());
    for (const auto& p : dev_prep) dev_gold.push_back(p.gold_set);

    const bool is_mlp = voting.mode == VotingMode::mlp;
    const long long n = static_cast<long long>(train.size());
    const long long batches_per_epoch =
        (n + hyper.batch_size - 1) / hyper.batch_size;
    const long long total_steps = batches_per_epoch * hyper.epochs;

    Rng rng(hyper.seed + 1);
    nn::Adam adam(hyper.lr);
    MatrixXd alpha_param(1, 1);
    alpha_param(0, 0) = model.alpha_raw;

    TrainLog log;
    log.seed = hyper.seed;
    Model best = model;
    double best_f1 = -1.0;
    long long global_step = 0;

    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
        rng.shuffle(order);
        EpochLog elog;
        elog.epoch = epoch;
        double epoch_loss = 0.0;

        for (long long b = 0; b < batches_per_epoch; ++b) {
            const size_t lo = static_cast<size_t>(b) * hyper.batch_size;
            const size_t hi =
                std::min(train.size(), lo + static_cast<size_t>(
                                                hyper.batch_size));
            const double bsz = static_cast<double>(hi - lo);

            MatrixXd g_emb = MatrixXd::Zero(model.embeddings.rows(),
                                            model.embeddings.cols());
            MatrixXd g_w1 = MatrixXd::Zero(model.head.w1.rows(),
                                           model.head.w1.cols());
            MatrixXd g_b1 = MatrixXd::Zero(model.head.b1.rows(), 1);
            MatrixXd g_w2 = MatrixXd::Zero(model.head.w2.rows(),
                                           model.head.w2.cols());
            MatrixXd g_alpha = MatrixXd::Zero(1, 1);
            MlpVoter g_mlp;
            if (is_mlp) {
                g_mlp.w1 = MatrixXd::Zero(model.mlp.w1.rows(),
                                          model.mlp.w1.cols());
                g_mlp.b1 = MatrixXd::Zero(model.mlp.b1.rows(), 1);
                g_mlp.w2 = MatrixXd::Zero(model.mlp.w2.rows(),
                                          model.mlp.w2.cols());
                g_mlp.b2 = MatrixXd::Zero(model.mlp.b2.rows(), 1);
            }
            double batch_loss = 0.0;

            for (size_t i = lo; i < hi; ++i) {
                const PreparedInstance& p = train_prep[order[i]];
                const VectorXd h = mean_embedding(model.embeddings, p.ids);
                const HeadGradients hg = head_backward(
                    h, model.head, is_mlp ? &model.mlp : nullptr,
                    alpha_param(0, 0), p.dists, model.voting, p.gold);
                batch_loss += hg.loss;
                g_w1 += hg.w1;
                g_b1 += hg.b1;
                g_w2 += hg.w2;
                g_alpha(0, 0) += hg.alpha_raw;
                if (is_mlp) {
                    g_mlp.w1 += hg.mlp.w1;
                    g_mlp.b1 += hg.mlp.b1;
                    g_mlp.w2 += hg.mlp.w2;
                    g_mlp.b2 += hg.mlp.b2;
                }
                const VectorXd dh = hg.grad_h / static_cast<double>(
                                                    p.ids.size());
                for (int id : p.ids) g_emb.col(id) += dh;
            }

            batch_loss /= bsz;
            if (!std::isfinite(batch_loss)) {
                throw numeric_error(
                    "training diverged: non-finite loss at epoch " +
                    std::to_string(epoch) + " step " +
                    std::to_string(global_step));
            }
            epoch_loss += batch_loss;
            g_emb /= bsz;
            g_w1 /= bsz;
            g_b1 /= bsz;
            g_w2 /= bsz;
            g_alpha /= bsz;
            std::vector<MatrixXd*> grads = {&g_emb, &g_w1, &g_b1, &g_w2,
                                            &g_alpha};
            if (is_mlp) {
                g_mlp.w1 /= bsz;
                g_mlp.b1 /= bsz;
                g_mlp.w2 /= bsz;
                g_mlp.b2 /= bsz;
                grads.insert(grads.end(), {&g_mlp.w1, &g_mlp.b1, &g_mlp.w2,
                                           &g_mlp.b2});
            }
            const double pre = nn::clip_global_norm(grads, hyper.grad_clip);
            elog.grad_norm_pre_max = std::max(elog.grad_norm_pre_max, pre);
            double post_sq = 0.0;
            for (const auto* g : grads) post_sq += g->squaredNorm();
            elog.grad_norm_post_max =
                std::max(elog.grad_norm_post_max, std::sqrt(post_sq));
            if (pre > hyper.grad_clip) ++elog.clipped_steps;

            const double scale =
                nn::warmup_scale(global_step, total_steps, hyper.warmup_frac);
            adam.step("embeddings", model.embeddings, g_emb, scale);
            adam.step("head.w1", model.head.w1, g_w1, scale);
            adam.step("head.b1", model.head.b1, g_b1, scale);
            adam.step("head.w2", model.head.w2, g_w2, scale);
            adam.step("alpha_raw", alpha_param, g_alpha, scale);
            if (is_mlp) {
                adam.step("mlp.w1", model.mlp.w1, g_mlp.w1, scale);
                adam.step("mlp.b1", model.mlp.b1, g_mlp.b1, scale);
                adam.step("mlp.w2", model.mlp.w2, g_mlp.w2, scale);
                adam.step("mlp.b2", model.mlp.b2, g_mlp.b2, scale);
            }
            ++global_step;
        }

        model.alpha_raw = alpha_param(0, 0);
        model.voting.alpha = nn::sigmoid(model.alpha_raw);
        elog.train_loss = epoch_loss / static_cast<double>(batches_per_epoch);

        // Dev sweep: p_f once per instance, then the tau grid.
        std::vector<VectorXd> dev_pf;
        dev_pf.reserve(dev_prep.size());
        for (const auto& p : dev_prep) {
            const VectorXd h = mean_embedding(model.embeddings, p.ids);
            const VectorXd p_z = classify(h, model.head);
            dev_pf.push_back(vote(p_z, p.dists, model.voting,
                                  is_mlp ? &model.mlp : nullptr));
        }
        double epoch_best_f1 = -1.0;
        double epoch_best_tau = 0.5;
        for (double tau : threshold_grid()) {
            std::vector<std::set<int>> decisions;
            decisions.reserve(dev_pf.size());
            for (const auto& pf : dev_pf) decisions.push_back(decide(pf, tau));
            const double f1 = metrics::micro_prf(dev_gold, decisions).f1;
            if (f1 > epoch_best_f1) {
                epoch_best_f1 = f1;
                epoch_best_tau = tau;
            }
        }
        elog.dev_micro_f1 = epoch_best_f1;
        elog.dev_threshold = epoch_best_tau;
        log.epochs.push_back(elog);

        if (epoch_best_f1 > best_f1) {
            best_f1 = epoch_best_f1;
            best = model;
            best.threshold = epoch_best_tau;
            log.selected_epoch = epoch;
            log.selected_threshold = epoch_best_tau;
            log.selected_dev_f1 = epoch_best_f1;
        }
    }

    const metrics::Prf dev_prf =
        evaluate_understanding(best, kb_ref, dev, extraction);
    best.dev_metrics = {{"micro_f1", dev_prf.f1},
                        {"micro_p", dev_prf.precision},
                        {"micro_r", dev_prf.recall},
                        {"epoch", static_cast<double>(log.selected_epoch)},
                        {"threshold", best.threshold}};
    return {std::move(best), std::move(log)};
}

Prediction predict(const corpus::Instance& instance, const Model& model,
                   const kb::ConceptKB& kb_ref,
                   const kb::ExtractionConfig& extraction) {
    if (kb_ref.task != model.task) {
        throw config_error("concept KB task does not match the model task");
    }
    Prediction out;
    const VectorXd h = encode(model, prompting::render_understanding_prompt(
                                         instance, model.task));
    out.p_z = classify(h, model.head);
    out.concepts = kb::query_kb(kb_ref, instance.action, extraction);
    std::vector<VectorXd> dists;
    dists.reserve(out.concepts.size());
    for (const auto& c : out.concepts) dists.push_back(c.dist);
    out.p_f = vote(out.p_z, dists, model.voting,
                   model.voting.mode == VotingMode::mlp ? &model.mlp
                                                        : nullptr);
    out.decision = decide(out.p_f, model.threshold);
    return out;
}

nlohmann::json prediction_json(const corpus::Instance& instance,
                               const Prediction& prediction,
                               const Model& model) {
    nlohmann::json doc;
    doc["instance_id"] = corpus::instance_id(instance);
    nlohmann::json decision = nlohmann::json::array();
    for (int j : prediction.decision) decision.push_back(model.labels[j]);
    doc["decision"] = decision;
    doc["p_z"] = std::vector<double>(
        prediction.p_z.data(), prediction.p_z.data() + prediction.p_z.size());
    nlohmann::json concepts = nlohmann::json::array();
    for (const auto& c : prediction.concepts) {
        concepts.push_back(
            {{"lemma", c.lemma},
             {"dist", std::vector<double>(c.dist.data(),
                                          c.dist.data() + c.dist.size())}});
    }
    doc["concepts"] = concepts;
    doc["p_f"] = std::vector<double>(
        prediction.p_f.data(), prediction.p_f.data() + prediction.p_f.size());
    nlohmann::json gold_m = nlohmann::json::array();
    for (Motivation m : instance.motivations) gold_m.push_back(id(m));
    nlohmann::json gold_e = nlohmann::json::array();
    for (Emotion e : instance.emotions) gold_e.push_back(id(e));
    doc["gold"] = {{"motivations", gold_m}, {"emotions", gold_e}};
    return doc;
}

metrics::Prf evaluate_understanding(const Model& model,
                                    const kb::ConceptKB& kb_ref,
                                    const std::vector<corpus::Instance>& split,
                                    const kb::ExtractionConfig& extraction) {
    std::vector<std::set<int>> gold, pred;
    gold.reserve(split.size());
    pred.reserve(split.size());
    for (const auto& inst : split) {
        gold.push_back(gold_indices(inst, model.task));
        pred.push_back(predict(inst, model, kb_ref, extraction).decision);
    }
    return metrics::micro_prf(gold, pred);
}

double majority_label_f1(const std::vector<corpus::Instance>& train,
                         const std::vector<corpus::Instance>& eval,
                         Task task) {
    std::map<int, long long> counts;
    for (const auto& inst : train) {
        for (int j : gold_indices(inst, task)) ++counts[j];
    }
    int majority = 0;
    long long best = -1;
    for (const auto& [label, c] : counts) {
        if (c > best) {
            best = c;
            majority = label;
        }
    }
    std::vector<std::set<int>> gold, pred;
    for (const auto& inst : eval) {
        gold.push_back(gold_indices(inst, task));
        pred.push_back({majority});
    }
    return metrics::micro_prf(gold, pred).f1;
}

double uniform_random_expected_f1(const std::vector<corpus::Instance>& eval,
                                  Task task) {
    // One uniform single-label guess per instance, in expectation.
    const double n_labels = label_count(task);
    double tp = 0.0, fp = 0.0, fn = 0.0;
    for (const auto& inst : eval) {
        const double g = static_cast<double>(gold_indices(inst, task).size());
        const double hit = g / n_labels;
        tp += hit;
        fp += 1.0 - hit;
        fn += g - hit;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
}

MatrixXd joint_matrix(
    const std::vector<std::pair<std::set<Motivation>, VectorXd>>& outputs) {
    const int rows = label_count(Task::mu);
    const int cols = label_count(Task::eu);
    MatrixXd sums = MatrixXd::Zero(rows, cols);
    std::vector<long long> counts(rows, 0);
    for (const auto& [gold_m, p_f] : outputs) {
        if (p_f.size() != cols) {
            throw contract_error("joint matrix needs 8-dim emotion outputs");
        }
        for (Motivation m : gold_m) {
            const int r = static_cast<int>(m);
            sums.row(r) += p_f.transpose();
            ++counts[r];
        }
    }
    for (int r = 0; r < rows; ++r) {
        if (counts[r] == 0) {
            sums.row(r).setConstant(std::numeric_limits<double>::quiet_NaN());
        } else {
            sums.row(r) /= static_cast<double>(counts[r]);
        }
    }
    return sums;
}

void save_model(const Model& model, const std::string& dir) {
    std::filesystem::create_directories(dir);
    io::TensorMap tensors;
    tensors["embeddings"] = model.embeddings;
    tensors["head.w1"] = model.head.w1;
    tensors["head.b1"] = model.head.b1;
    tensors["head.w2"] = model.head.w2;
    MatrixXd alpha(1, 1);
    alpha(0, 0) = model.alpha_raw;
    tensors["alpha_raw"] = alpha;
    if (model.voting.mode == VotingMode::mlp) {
        tensors["mlp.w1"] = model.mlp.w1;
        tensors["mlp.b1"] = model.mlp.b1;
        tensors["mlp.w2"] = model.mlp.w2;
        tensors["mlp.b2"] = model.mlp.b2;
    }
    const auto base = std::filesystem::path(dir);
    io::write_weights((base / "weights.bin").string(), tensors);
    io::write_vocab(model.vocab, (base / "vocab.json").string());
    const nlohmann::json sidecar = {
        {"task", task_name(model.task)},
        {"label_space", model.labels},
        {"voting", model.voting.to_json()},
        {"threshold", model.threshold},
        {"encoder_id", model.encoder_id},
        {"kb_fingerprint", model.kb_fingerprint},
        {"dev_metrics", model.dev_metrics},
    };
    io::write_json_file((base / "model.json").string(), sidecar);
}

Model load_model(const std::string& dir) {
    const auto base = std::filesystem::path(dir);
    const nlohmann::json sidecar =
        io::read_json_file((base / "model.json").string());
    for (const char* key : {"task", "label_space", "voting", "threshold",
                            "encoder_id", "kb_fingerprint", "dev_metrics"}) {
        if (!sidecar.contains(key)) {
            throw data_error(std::string("model sidecar misses '") + key +
                             "': " + dir);
        }
    }
    Model model;
    model.task = parse_task_name(sidecar.at("task").get<std::string>());
    model.labels = sidecar.at("label_space").get<std::vector<std::string>>();
    if (model.labels != label_ids(model.task)) {
        throw data_error("model label space does not match its task: " + dir);
    }
    model.voting = VotingConfig::from_json(sidecar.at("voting"));
    model.threshold = sidecar.at("threshold").get<double>();
    if (!(model.threshold > 0.0 && model.threshold < 1.0)) {
        throw data_error("model threshold must lie in (0, 1): " + dir);
    }
    model.encoder_id = sidecar.at("encoder_id").get<std::string>();
    model.kb_fingerprint = sidecar.at("kb_fingerprint").get<std::string>();
    for (const auto& [k, v] : sidecar.at("dev_metrics").items()) {
        model.dev_metrics[k] = v.get<double>();
    }
    model.vocab = io::read_vocab((base / "vocab.json").string());
    io::TensorMap tensors = io::read_weights((base / "weights.bin").string());
    const auto take = [&](const char* name) -> MatrixXd {
        const auto it = tensors.find(name);
        if (it == tensors.end()) {
            throw data_error(std::string("model weights miss '") + name +
                             "': " + dir);
        }
        return it->second;
    };
    model.embeddings = take("embeddings");
    model.head.w1 = take("head.w1");
    model.head.b1 = take("head.b1");
    model.head.w2 = take("head.w2");
    model.alpha_raw = take("alpha_raw")(0, 0);
    model.voting.alpha = nn::sigmoid(model.alpha_raw);
    if (model.voting.mode == VotingMode::mlp) {
        model.mlp.w1 = take("mlp.w1");
        model.mlp.b1 = take("mlp.b1");
        model.mlp.w2 = take("mlp.w2");
        model.mlp.b2 = take("mlp.b2");
    }
    const auto n = static_cast<Eigen::Index>(model.labels.size());
    if (model.embeddings.cols() != static_cast<Eigen::Index>(
                                       model.vocab.size()) ||
        model.head.w1.rows() != model.embeddings.rows() ||
        model.head.w1.cols() != model.head.w1.rows() ||
        model.head.b1.rows() != model.head.w1.rows() ||
        model.head.w2.rows() != n ||
        model.head.w2.cols() != model.head.w1.rows()) {
        throw data_error("model weight shapes are inconsistent: " + dir);
    }
    return model;
}

}  // namespace comma::understanding
