#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "comma/corpus.hpp"
#include "comma/errors.hpp"
#include "comma/generation.hpp"
#include "comma/io.hpp"
#include "comma/metrics.hpp"
#include "comma/prompting.hpp"
#include "comma/rng.hpp"
#include "comma/text.hpp"
#include "doctest.h"

using namespace comma;
using namespace comma::generation;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

corpus::Instance basic_instance() {
    corpus::Instance inst;
    inst.story_id = "s0";
    inst.line_idx = 2;
    inst.character = "Anna";
    inst.history = {"Anna walked home."};
    inst.action = "Anna found the sandwich.";
    inst.motivations = {Motivation::physiological};
    inst.emotions = {Emotion::joy};
    return inst;
}

// Actions are a deterministic function of the motivation block, so a small
// decoder can learn the mapping; emotions supervise the head.
corpus::Instance fixture_instance(int i) {
    static const char* words[5] = {"sandwich", "helmet", "party", "trophy",
                                   "temple"};
    corpus::Instance inst;
    inst.story_id = "s" + std::to_string(i / 4);
    inst.line_idx = i % 4 + 1;
    inst.character = i % 2 == 0 ? "Anna" : "Ben";
    inst.history = {inst.character + " walked home."};
    inst.action = inst.character + " found the " + words[i % 5] + ".";
    inst.motivations = {static_cast<Motivation>(i % 5)};
    inst.emotions = {static_cast<Emotion>(i % 8)};
    return inst;
}

std::vector<corpus::Instance> fixture_split(int n, int offset) {
    std::vector<corpus::Instance> out;
    for (int i = 0; i < n; ++i) out.push_back(fixture_instance(offset + i));
    return out;
}

text::Vocab toy_vocab() {
    text::Vocab vocab;
    for (const char* tok : {"anna", "ben", "walked", "home", "found", "the",
                            "sandwich", "."}) {
        vocab.add(tok);
    }
    return vocab;
}

// Combined relative/absolute guard: central differences carry ~1e-10 of
// cancellation noise, which would swamp a pure ratio at true zeros.
void check_fd(double analytic, double plus, double minus, double step) {
    const double fd = (plus - minus) / (2.0 * step);
    const double err = std::abs(fd - analytic);
    CHECK(err <= std::max(1e-3 * (std::abs(fd) + std::abs(analytic)), 1e-7));
}

void fd_check_model(const RnnLm& model, const GenerationExample& example,
                    const GenLossConfig& config) {
    const double step = 1e-4;
    const auto gg = example_backward(model, example, config);
    for (const auto& [name, grad] : gg.grads) {
        for (Eigen::Index r = 0; r < grad.rows(); ++r) {
            for (Eigen::Index c = 0; c < grad.cols(); ++c) {
                RnnLm plus = model, minus = model;
                plus.tensors[name](r, c) += step;
                minus.tensors[name](r, c) -= step;
                check_fd(grad(r, c), example_loss(plus, example, config).total,
                         example_loss(minus, example, config).total, step);
            }
        }
    }
}

}  // namespace

TEST_CASE("emotion target normalizes the gold indicator") {
    corpus::Instance inst = basic_instance();
    const VectorXd one_hot = emotion_target(inst);
    CHECK(one_hot[static_cast<int>(Emotion::joy)] == 1.0);
    CHECK(one_hot.sum() == doctest::Approx(1.0));
    inst.emotions = {Emotion::joy, Emotion::trust};
    const VectorXd pair = emotion_target(inst);
    CHECK(pair[static_cast<int>(Emotion::joy)] == 0.5);
    CHECK(pair[static_cast<int>(Emotion::trust)] == 0.5);
    inst.emotions.clear();
    CHECK_THROWS_AS(emotion_target(inst), contract_error);
}

TEST_CASE("training examples mask exactly the target span") {
    const auto inst = basic_instance();
    const auto vocab = toy_vocab();
    const auto ex = build_training_example(inst, vocab, true, 0.0);
    const auto rendering = prompting::render_generation_prompt(inst);
    const auto target_tokens = text::word_tokens(rendering.target);
    const auto input_tokens = text::word_tokens(rendering.input);
    REQUIRE(ex.ids.size() == ex.mask.size());
    CHECK(ex.input_len == 1 + static_cast<int>(input_tokens.size()));
    int masked = 0;
    for (size_t j = 0; j < ex.mask.size(); ++j) {
        masked += ex.mask[j];
        const bool in_span =
            j >= static_cast<size_t>(ex.input_len) &&
            j < static_cast<size_t>(ex.input_len) + target_tokens.size();
        CHECK(ex.mask[j] == (in_span ? 1 : 0));
    }
    CHECK(masked == static_cast<int>(target_tokens.size()));
    CHECK(vocab.token_of(ex.ids[ex.input_len]) == "[act]");
    CHECK(ex.ids.front() == text::Vocab::kBos);
    CHECK(ex.ids.back() == text::Vocab::kEos);
    CHECK_FALSE(ex.truncated);
    CHECK(ex.q_e[static_cast<int>(Emotion::joy)] == 1.0);
}

TEST_CASE("smoothed targets mix in the uniform distribution") {
    const auto ex =
        build_training_example(basic_instance(), toy_vocab(), true, 0.1);
    CHECK(ex.q_e[static_cast<int>(Emotion::joy)] ==
          doctest::Approx(0.9 + 0.1 / 8.0));
    CHECK(ex.q_e[static_cast<int>(Emotion::fear)] ==
          doctest::Approx(0.1 / 8.0));
    CHECK(ex.q_e.sum() == doctest::Approx(1.0));
}

TEST_CASE("long histories are dropped oldest first") {
    corpus::Instance inst = basic_instance();
    inst.history.clear();
    for (int i = 0; i < 40; ++i) {
        inst.history.push_back("Anna kept walking around the old town once "
                               "more before dinner.");
    }
    const auto vocab = toy_vocab();
    const auto ex = build_training_example(inst, vocab, true, 0.0, 60, 60);
    CHECK(ex.truncated);
    CHECK(ex.input_len <= 61);
    // The action span survives untouched.
    const auto target_tokens = text::word_tokens(
        prompting::render_generation_prompt(inst).target);
    int masked = 0;
    for (int m : ex.mask) masked += m;
    CHECK(masked == static_cast<int>(target_tokens.size()));
}

TEST_CASE("over-long targets keep the closing tag") {
    corpus::Instance inst = basic_instance();
    inst.action = "Anna found the sandwich and the helmet and the trophy and "
                  "the party and the temple today.";
    const auto vocab = toy_vocab();
    const auto ex = build_training_example(inst, vocab, true, 0.0, 200, 8);
    CHECK(ex.truncated);
    int masked = 0;
    for (int m : ex.mask) masked += m;
    CHECK(masked == 8);
    CHECK(vocab.token_of(ex.ids[ex.input_len + 7]) == "[/act]");
}

TEST_CASE("lm loss averages masked negative log likelihoods") {
    CHECK(lm_loss({0.0, 0.0, 0.0}, {1, 1, 1}) == 0.0);
    const double ln10 = std::log(10.0);
    const double got = lm_loss({-ln10, -ln10, -ln10, -0.5}, {1, 1, 1, 0});
    CHECK(std::abs(got - ln10) <= 1e-9);
    CHECK_THROWS_AS(lm_loss({-1.0, -2.0}, {0, 0}), contract_error);
    CHECK_THROWS_AS(lm_loss({-1.0}, {1, 0}), contract_error);
}

TEST_CASE("lm loss depends only on masked positions") {
    const std::vector<int> mask = {0, 1, 0, 1, 0};
    const std::vector<double> a = {-9.0, -1.0, -7.0, -2.0, -3.0};
    const std::vector<double> b = {-0.1, -1.0, -55.0, -2.0, -0.0};
    CHECK(lm_loss(a, mask) == lm_loss(b, mask));
}

TEST_CASE("kl loss vanishes exactly at the smoothed target") {
    VectorXd q = VectorXd::Zero(8);
    q[2] = 1.0;
    CHECK(kl_loss(q, q, 0.0) == 0.0);
    const VectorXd q_s =
        0.9 * q + VectorXd::Constant(8, 0.1 / 8.0);
    CHECK(std::abs(kl_loss(q_s, q, 0.1)) <= 1e-9);
    const VectorXd uniform = VectorXd::Constant(8, 1.0 / 8.0);
    CHECK(kl_loss(uniform, q, 0.1) > 0.0);
}

TEST_CASE("kl of a smoothed one hot against uniform matches closed form") {
    VectorXd q = VectorXd::Zero(8);
    q[0] = 1.0;
    const VectorXd uniform = VectorXd::Constant(8, 1.0 / 8.0);
    const double q_hi = 0.9 + 0.1 / 8.0;
    const double q_lo = 0.1 / 8.0;
    const double want =
        q_hi * std::log(8.0 * q_hi) + 7.0 * q_lo * std::log(8.0 * q_lo);
    CHECK(kl_loss(uniform, q, 0.1) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("kl loss is nonnegative on random simplex pairs") {
    Rng rng(13);
    for (int trial = 0; trial < 25; ++trial) {
        VectorXd p(8), q(8);
        for (int i = 0; i < 8; ++i) {
            p[i] = rng.unit() + 1e-3;
            q[i] = rng.unit() + 1e-3;
        }
        p /= p.sum();
        q /= q.sum();
        CHECK(kl_loss(p, q, 0.1, "forward") >= 0.0);
        CHECK(kl_loss(p, q, 0.1, "reverse") >= 0.0);
    }
}

TEST_CASE("kl guards report the probability floor") {
    VectorXd p = VectorXd::Zero(8);
    p[0] = 1.0;
    VectorXd q = VectorXd::Constant(8, 1.0 / 8.0);
    bool floored = false;
    const double loss = kl_loss(p, q, 0.0, "forward", &floored);
    CHECK(floored);
    CHECK(std::isfinite(loss));
    bool clean = true;
    kl_loss(q, q, 0.1, "forward", &clean);
    CHECK_FALSE(clean);
    CHECK_THROWS_AS(kl_loss(p, q, 0.0, "sideways"), config_error);
    CHECK_THROWS_AS(kl_loss(VectorXd::Ones(3), q, 0.0), contract_error);
}

TEST_CASE("total loss combines the terms linearly") {
    GenLossConfig config;
    CHECK(std::abs(total_loss(2.0, 0.4, config) - 2.6) <= 1e-12);
    config.lambda2 = 0.0;
    CHECK(total_loss(2.0, 0.4, config) == 2.0);
    config.lambda1 = 0.0;
    // Both weights zero violates the config invariant.
    CHECK_THROWS_AS(total_loss(1.0, 1.0, config), config_error);
    config.lambda1 = 0.0;
    config.lambda2 = 1.5;
    CHECK(total_loss(5.0, 0.0, config) == 0.0);
    CHECK_THROWS_AS(
        total_loss(std::numeric_limits<double>::quiet_NaN(), 0.0,
                   GenLossConfig{}),
        numeric_error);
}

TEST_CASE("loss config round trips through json and validates") {
    GenLossConfig config;
    config.lambda2 = 0.5;
    config.kl_direction = "reverse";
    const auto doc = config.to_json();
    const auto back = GenLossConfig::from_json(doc);
    CHECK(back.lambda1 == config.lambda1);
    CHECK(back.lambda2 == config.lambda2);
    CHECK(back.epsilon == config.epsilon);
    CHECK(back.kl_direction == "reverse");
    auto bad = doc;
    bad.erase("lambda1");
    CHECK_THROWS_AS(GenLossConfig::from_json(bad), data_error);
    bad = doc;
    bad["epsilon"] = 1.0;
    CHECK_THROWS_AS(GenLossConfig::from_json(bad), config_error);
}

TEST_CASE("perplexity of a uniform dummy model over vocab 10 is 10") {
    text::Vocab vocab;
    vocab.add("anna");
    REQUIRE(vocab.size() == 10);
    RnnLm model = init_generator("causal", 4, 3, vocab, 1);
    model.tensors["w_out"].setZero();
    model.tensors["b_out"].setZero();
    corpus::Instance inst = basic_instance();
    inst.action = "anna";
    const auto ex = build_training_example(inst, vocab, true, 0.1);
    const auto fwd = example_loss(model, ex, GenLossConfig{});
    std::vector<double> nlls;
    for (size_t j = 0; j < ex.mask.size(); ++j) {
        if (ex.mask[j]) nlls.push_back(-fwd.token_log_probs[j]);
    }
    CHECK(metrics::perplexity(nlls) == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(std::abs(fwd.lm - std::log(10.0)) <= 1e-9);
}

TEST_CASE("causal gradients match central finite differences") {
    const auto vocab = toy_vocab();
    const RnnLm model = init_generator("causal", 4, 3, vocab, 3);
    const auto ex = build_training_example(basic_instance(), vocab, true, 0.1);
    fd_check_model(model, ex, GenLossConfig{});
}

TEST_CASE("encoder-decoder gradients match central finite differences") {
    const auto vocab = toy_vocab();
    const RnnLm model = init_generator("enc-dec", 4, 3, vocab, 4);
    const auto ex = build_training_example(basic_instance(), vocab, true, 0.1);
    fd_check_model(model, ex, GenLossConfig{});
}

TEST_CASE("reverse kl gradients match central finite differences") {
    const auto vocab = toy_vocab();
    const RnnLm model = init_generator("causal", 4, 3, vocab, 5);
    const auto ex = build_training_example(basic_instance(), vocab, true, 0.1);
    GenLossConfig config;
    config.kl_direction = "reverse";
    fd_check_model(model, ex, config);
}

TEST_CASE("ablated emotion weight reduces to the pure lm objective") {
    const auto vocab = toy_vocab();
    const RnnLm model = init_generator("causal", 4, 3, vocab, 6);
    const auto ex = build_training_example(basic_instance(), vocab, true, 0.1);
    GenLossConfig ablated;
    ablated.lambda2 = 0.0;
    const auto fwd = example_loss(model, ex, ablated);
    CHECK(fwd.total == fwd.lm);
}

TEST_CASE("desk scale training decreases the loss and checkpoints") {
    const auto train = fixture_split(120, 0);
    const auto dev = fixture_split(30, 120);
    GenHyper hyper;
    hyper.epochs = 3;
    hyper.batch_size = 16;
    hyper.hidden_dim = 24;
    hyper.embed_dim = 16;
    const auto result = train_generator(train, dev, hyper, GenLossConfig{});
    REQUIRE(result.log.epochs.size() == 3);
    CHECK(result.log.epochs[1].train_total <
          result.log.epochs[0].train_total);
    CHECK(result.log.epochs[2].train_total <
          result.log.epochs[1].train_total);
    for (const auto& e : result.log.epochs) {
        CHECK(e.grad_norm_post_max <= hyper.grad_clip + 1e-9);
    }
    CHECK(result.log.selected_epoch >= 1);
    CHECK_FALSE(result.log.aborted_non_finite);
    const auto doc = result.log.to_json();
    CHECK(doc.at("epochs").size() == 3);
    CHECK(doc.contains("selected_epoch"));
}

TEST_CASE("encoder-decoder shape also trains") {
    const auto train = fixture_split(60, 0);
    const auto dev = fixture_split(20, 60);
    GenHyper hyper;
    hyper.epochs = 2;
    hyper.batch_size = 16;
    hyper.hidden_dim = 16;
    hyper.embed_dim = 12;
    hyper.arch = "enc-dec";
    const auto result = train_generator(train, dev, hyper, GenLossConfig{});
    REQUIRE(result.log.epochs.size() == 2);
    CHECK(result.log.epochs[1].train_total <
          result.log.epochs[0].train_total);
    CHECK(result.model.arch == "enc-dec");
    CHECK(result.model.tensors.count("enc_w_hh") == 1);
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto train = fixture_split(40, 0);
    const auto dev = fixture_split(10, 40);
    GenHyper hyper;
    hyper.epochs = 2;
    hyper.batch_size = 8;
    hyper.hidden_dim = 8;
    hyper.embed_dim = 6;
    const auto a = train_generator(train, dev, hyper, GenLossConfig{});
    const auto b = train_generator(train, dev, hyper, GenLossConfig{});
    for (const auto& [name, value] : a.model.tensors) {
        CHECK(value == b.model.tensors.at(name));
    }
}

TEST_CASE("training validates its inputs") {
    const auto train = fixture_split(8, 0);
    const auto dev = fixture_split(4, 8);
    GenHyper hyper;
    hyper.epochs = 0;
    CHECK_THROWS_AS(train_generator(train, dev, hyper, GenLossConfig{}),
                    config_error);
    hyper.epochs = 1;
    CHECK_THROWS_AS(train_generator({}, dev, hyper, GenLossConfig{}),
                    contract_error);
    GenLossConfig bad;
    bad.lambda1 = 0.0;
    bad.lambda2 = 0.0;
    CHECK_THROWS_AS(train_generator(train, dev, hyper, bad), config_error);
    hyper.arch = "transformer";
    CHECK_THROWS_AS(train_generator(train, dev, hyper, GenLossConfig{}),
                    config_error);
}

TEST_CASE("greedy decoding is deterministic and parses") {
    const auto train = fixture_split(120, 0);
    const auto dev = fixture_split(30, 120);
    GenHyper hyper;
    hyper.epochs = 4;
    hyper.batch_size = 16;
    hyper.hidden_dim = 24;
    hyper.embed_dim = 16;
    const auto result = train_generator(train, dev, hyper, GenLossConfig{});
    DecodeConfig greedy;
    greedy.mode = "greedy";
    const auto inst = fixture_instance(3);
    const auto a = generate_action(result.model, inst, greedy);
    const auto b = generate_action(result.model, inst, greedy);
    CHECK(a.action == b.action);
    CHECK(a.tokens == b.tokens);
    CHECK(a.p_e.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(a.p_e.minCoeff() >= 0.0);
    CHECK_FALSE(a.action.empty());
    CHECK(std::isfinite(a.score));

    DecodeConfig beam;
    beam.mode = "beam";
    beam.beam_width = 4;
    const auto c = generate_action(result.model, inst, beam);
    CHECK_FALSE(c.action.empty());
    CHECK(c.p_e.sum() == doctest::Approx(1.0).epsilon(1e-9));

    beam.rerank_emotion = Emotion::joy;
    const auto d = generate_action(result.model, inst, beam);
    CHECK_FALSE(d.action.empty());

    const auto doc = generated_json(inst, a);
    CHECK(doc.contains("input"));
    CHECK(doc.at("input").contains("character"));
    CHECK(doc.contains("action"));
    CHECK(doc.at("p_e").size() == 8);
    CHECK(doc.contains("tagged"));

    const auto report = evaluate_generator(result.model, dev, GenLossConfig{});
    for (const char* key : {"ppl", "bleu_1", "bleu_2", "bleu_4", "rouge_1",
                            "rouge_2", "rouge_l"}) {
        REQUIRE(report.contains(key));
        CHECK(std::isfinite(report.at(key).get<double>()));
    }
    CHECK(report.size() == 7);
    CHECK(report.at("ppl").get<double>() >= 1.0);
    CHECK(report.at("bleu_1").get<double>() >= 0.0);
    CHECK(report.at("bleu_1").get<double>() <= 1.0);

    // Round trip through an artifact directory.
    const auto dir =
        (std::filesystem::temp_directory_path() / "comma_generator").string();
    std::filesystem::remove_all(dir);
    save_generator(result.model, GenLossConfig{}, beam, dir);
    const auto loaded = load_generator(dir);
    for (const auto& [name, value] : result.model.tensors) {
        CHECK(value == loaded.model.tensors.at(name));
    }
    CHECK(loaded.model.vocab.tokens() == result.model.vocab.tokens());
    CHECK(loaded.decode_defaults.beam_width == 4);
    CHECK(loaded.loss_config.lambda2 == 1.5);
    const auto e = generate_action(loaded.model, inst, greedy);
    CHECK(e.action == a.action);

    // Tampered artifacts are rejected.
    const auto sidecar_path = dir + "/model.json";
    auto sidecar = io::read_json_file(sidecar_path);
    sidecar["template_version"] = "someone-else";
    io::write_json_file(sidecar_path, sidecar);
    CHECK_THROWS_AS(load_generator(dir), data_error);
}

TEST_CASE("a decoder that immediately stops raises the empty error") {
    const auto vocab = toy_vocab();
    RnnLm model = init_generator("causal", 4, 3, vocab, 9);
    model.tensors["b_out"].setZero();
    model.tensors["b_out"](text::Vocab::kEos, 0) = 100.0;
    DecodeConfig greedy;
    greedy.mode = "greedy";
    CHECK_THROWS_AS(generate_action(model, basic_instance(), greedy), error);
}
