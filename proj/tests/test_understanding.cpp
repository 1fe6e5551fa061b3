#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "comma/concept_kb.hpp"
#include "comma/corpus.hpp"
#include "comma/errors.hpp"
#include "comma/io.hpp"
#include "comma/nn.hpp"
#include "comma/understanding.hpp"
#include "doctest.h"

using namespace comma;
using namespace comma::understanding;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec2(double a, double b) {
    VectorXd v(2);
    v << a, b;
    return v;
}

// Signature nouns tying each label to the action text, so both the encoder
// and the concept KB can learn the mapping.
const char* kEmotionWord[8] = {"cake",   "storm",  "gift",   "cliff",
                               "reunion", "spider", "puzzle", "letter"};
const char* kMotivationWord[5] = {"sandwich", "helmet", "party", "trophy",
                                  "temple"};

corpus::Instance fixture_instance(int i, Task task) {
    corpus::Instance inst;
    inst.story_id = "s" + std::to_string(i / 4);
    inst.line_idx = i % 4 + 1;
    inst.character = i % 2 == 0 ? "Anna" : "Ben";
    static const char* verbs[3] = {"found", "grabbed", "noticed"};
    const char* word = task == Task::eu ? kEmotionWord[i % 8]
                                        : kMotivationWord[i % 5];
    inst.action = inst.character + " " + verbs[i % 3] + " the " + word +
                  " yesterday.";
    inst.motivations = {static_cast<Motivation>(i % 5)};
    inst.emotions = {static_cast<Emotion>(i % 8)};
    return inst;
}

std::vector<corpus::Instance> fixture_split(int n, int offset, Task task) {
    std::vector<corpus::Instance> out;
    for (int i = 0; i < n; ++i) out.push_back(fixture_instance(offset + i, task));
    return out;
}

kb::ExtractionConfig fixture_extraction() {
    kb::ExtractionConfig cfg;
    // The default df cutoff would drop the signature words on a fixture this
    // small; only the every-document filler should fall to the filter.
    cfg.high_freq_threshold = 0.5;
    return cfg;
}

Head toy_head() {
    Head head;
    head.w1 = MatrixXd(3, 3);
    head.w1 << 0.2, -0.1, 0.3, 0.05, 0.4, -0.2, -0.3, 0.1, 0.25;
    head.b1 = MatrixXd(3, 1);
    head.b1 << 0.1, -0.2, 0.05;
    head.w2 = MatrixXd(2, 3);
    head.w2 << 0.5, -0.4, 0.2, -0.1, 0.3, 0.6;
    return head;
}

double loss_at(const VectorXd& h, const Head& head, const MlpVoter* mlp,
               double alpha_raw, const std::vector<VectorXd>& dists,
               const VotingConfig& vc, const VectorXd& gold) {
    return head_backward(h, head, mlp, alpha_raw, dists, vc, gold).loss;
}

void check_fd(double analytic, double plus, double minus, double step) {
    const double fd = (plus - minus) / (2.0 * step);
    const double denom = std::max(1e-8, std::abs(fd) + std::abs(analytic));
    CHECK(std::abs(fd - analytic) / denom <= 1e-3);
}

}  // namespace

TEST_CASE("zero representation and bias give the uniform distribution") {
    Head head;
    head.w1 = MatrixXd::Random(4, 4);
    head.b1 = MatrixXd::Zero(4, 1);
    head.w2 = MatrixXd::Random(3, 4);
    const VectorXd p = classify(VectorXd::Zero(4), head);
    for (int j = 0; j < 3; ++j) CHECK(p[j] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("hand computed two label logits") {
    // w1 = 0 makes t = tanh(b1) = [0.5, 0.5]; w2 rows then give logits [1, 0].
    Head head;
    head.w1 = MatrixXd::Zero(2, 2);
    head.b1 = MatrixXd(2, 1);
    head.b1 << std::atanh(0.5), std::atanh(0.5);
    head.w2 = MatrixXd(2, 2);
    head.w2 << 1.0, 1.0, 0.0, 0.0;
    const VectorXd p = classify(VectorXd::Zero(2), head);
    const double e = std::exp(1.0);
    CHECK(p[0] == doctest::Approx(e / (e + 1.0)).epsilon(1e-9));
    CHECK(p[1] == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-9));
}

TEST_CASE("classifier outputs stay on the simplex for random inputs") {
    Rng rng(3);
    Head head;
    head.w1 = nn::glorot(5, 5, rng);
    head.b1 = nn::glorot(5, 1, rng);
    head.w2 = nn::glorot(4, 5, rng);
    for (int trial = 0; trial < 20; ++trial) {
        VectorXd h(5);
        for (int i = 0; i < 5; ++i) h[i] = rng.gaussian(0.0, 3.0);
        const VectorXd p = classify(h, head);
        CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(p.minCoeff() >= 0.0);
    }
}

TEST_CASE("non finite representations are rejected") {
    Head head = toy_head();
    VectorXd h(3);
    h << 1.0, std::numeric_limits<double>::infinity(), 0.0;
    CHECK_THROWS_AS(classify(h, head), numeric_error);
}

TEST_CASE("empty vote set falls back to the classifier exactly") {
    const VectorXd p_z = vec2(0.6, 0.4);
    const VectorXd got = vote(p_z, {}, VotingConfig{});
    CHECK(got[0] == 0.6);
    CHECK(got[1] == 0.4);
}

TEST_CASE("documented gate worked example") {
    const VectorXd p_z = vec2(0.6, 0.4);
    const std::vector<VectorXd> dists = {vec2(0.9, 0.1), vec2(0.5, 0.5)};
    const VectorXd k = pool_dists(dists, VotingMode::aver);
    CHECK(std::abs(k[0] - 0.7) <= 1e-12);
    CHECK(std::abs(k[1] - 0.3) <= 1e-12);
    VotingConfig vc;
    vc.mode = VotingMode::gate;
    vc.pooling = VotingMode::aver;
    vc.alpha = 0.5;
    const VectorXd p_f = vote(p_z, dists, vc);
    CHECK(std::abs(p_f[0] - 0.65) <= 1e-12);
    CHECK(std::abs(p_f[1] - 0.35) <= 1e-12);
}

TEST_CASE("gate endpoints are exact") {
    const VectorXd p_z = vec2(0.6, 0.4);
    const std::vector<VectorXd> dists = {vec2(0.9, 0.1), vec2(0.5, 0.5)};
    VotingConfig vc;
    vc.mode = VotingMode::gate;
    vc.alpha = 1.0;
    const VectorXd at_one = vote(p_z, dists, vc);
    CHECK(at_one[0] == 0.6);
    CHECK(at_one[1] == 0.4);
    vc.alpha = 0.0;
    const VectorXd at_zero = vote(p_z, dists, vc);
    const VectorXd k = pool_dists(dists, VotingMode::aver);
    CHECK(at_zero[0] == k[0]);
    CHECK(at_zero[1] == k[1]);
}

TEST_CASE("max and sum pooling renormalize") {
    const std::vector<VectorXd> dists = {vec2(0.9, 0.1), vec2(0.5, 0.5)};
    const VectorXd mx = pool_dists(dists, VotingMode::max);
    CHECK(mx[0] == doctest::Approx(9.0 / 14.0));
    CHECK(mx[1] == doctest::Approx(5.0 / 14.0));
    const VectorXd sm = pool_dists(dists, VotingMode::sum);
    CHECK(sm[0] == doctest::Approx(0.7));
    CHECK(sm[1] == doctest::Approx(0.3));
}

TEST_CASE("pooling-only modes include the classifier vote") {
    const VectorXd p_z = vec2(0.6, 0.4);
    const std::vector<VectorXd> dists = {vec2(0.9, 0.1), vec2(0.5, 0.5)};
    VotingConfig vc;
    vc.mode = VotingMode::aver;
    const VectorXd got = vote(p_z, dists, vc);
    CHECK(got[0] == doctest::Approx(2.0 / 3.0));
    CHECK(got[1] == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("pooled argmax is invariant to vote order") {
    const VectorXd p_z = vec2(0.3, 0.7);
    std::vector<VectorXd> dists = {vec2(0.9, 0.1), vec2(0.6, 0.4),
                                   vec2(0.25, 0.75)};
    for (VotingMode mode :
         {VotingMode::aver, VotingMode::max, VotingMode::sum}) {
        VotingConfig vc;
        vc.mode = mode;
        const VectorXd a = vote(p_z, dists, vc);
        std::vector<VectorXd> shuffled = {dists[2], dists[0], dists[1]};
        const VectorXd b = vote(p_z, shuffled, vc);
        Eigen::Index ia = 0, ib = 0;
        a.maxCoeff(&ia);
        b.maxCoeff(&ib);
        CHECK(ia == ib);
    }
}

TEST_CASE("uniform classifier with a one hot concept is decided by the kb") {
    VectorXd p_z = VectorXd::Constant(8, 1.0 / 8.0);
    VectorXd onehot = VectorXd::Zero(8);
    onehot[3] = 1.0;
    VotingConfig vc;
    vc.mode = VotingMode::gate;
    vc.alpha = 0.5;
    const VectorXd p_f = vote(p_z, {onehot}, vc);
    Eigen::Index argmax = 0;
    p_f.maxCoeff(&argmax);
    CHECK(argmax == 3);
    CHECK(p_f.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("vote rejects mismatched label dimensions") {
    VectorXd p_z = vec2(0.5, 0.5);
    VectorXd bad(3);
    bad << 0.2, 0.3, 0.5;
    CHECK_THROWS_AS(vote(p_z, {bad}, VotingConfig{}), contract_error);
}

TEST_CASE("mlp voting needs weights and emits a simplex vector") {
    VectorXd p_z = vec2(0.6, 0.4);
    const std::vector<VectorXd> dists = {vec2(0.9, 0.1)};
    VotingConfig vc;
    vc.mode = VotingMode::mlp;
    vc.mlp_hidden = 4;
    CHECK_THROWS_AS(vote(p_z, dists, vc), contract_error);
    Rng rng(5);
    MlpVoter mlp;
    mlp.w1 = nn::glorot(4, 4, rng);
    mlp.b1 = MatrixXd::Zero(4, 1);
    mlp.w2 = nn::glorot(2, 4, rng);
    mlp.b2 = MatrixXd::Zero(2, 1);
    const VectorXd got = vote(p_z, dists, vc, &mlp);
    CHECK(got.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(got.minCoeff() >= 0.0);
}

TEST_CASE("loss floor is zero exactly at the target") {
    const VectorXd g = vec2(0.5, 0.5);
    CHECK(understanding_loss(g, g) == 0.0);
    CHECK(understanding_loss(vec2(0.5, 0.5), vec2(1.0, 0.0)) ==
          doctest::Approx(std::log(2.0)));
    CHECK(understanding_loss(vec2(0.9, 0.1), g) > 0.0);
}

TEST_CASE("gold distributions normalize the label indicator") {
    corpus::Instance inst = fixture_instance(0, Task::eu);
    inst.emotions = {Emotion::joy, Emotion::trust};
    const VectorXd g = gold_distribution(inst, Task::eu);
    CHECK(g.sum() == doctest::Approx(1.0));
    CHECK(g[static_cast<int>(Emotion::joy)] == doctest::Approx(0.5));
    CHECK(g[static_cast<int>(Emotion::trust)] == doctest::Approx(0.5));
    CHECK(g[static_cast<int>(Emotion::anger)] == 0.0);
}

TEST_CASE("head gradients match central finite differences under the gate") {
    const Head head = toy_head();
    VectorXd h(3);
    h << 0.4, -0.7, 0.2;
    const VectorXd gold = vec2(0.5, 0.5);
    const std::vector<VectorXd> dists = {vec2(0.8, 0.2)};
    VotingConfig vc;
    vc.mode = VotingMode::gate;
    const double alpha_raw = 0.3;
    const double step = 1e-4;
    const HeadGradients hg =
        head_backward(h, head, nullptr, alpha_raw, dists, vc, gold);

    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            Head hp = head, hm = head;
            hp.w1(r, c) += step;
            hm.w1(r, c) -= step;
            check_fd(hg.w1(r, c),
                     loss_at(h, hp, nullptr, alpha_raw, dists, vc, gold),
                     loss_at(h, hm, nullptr, alpha_raw, dists, vc, gold),
                     step);
        }
        Head hp = head, hm = head;
        hp.b1(r, 0) += step;
        hm.b1(r, 0) -= step;
        check_fd(hg.b1(r, 0),
                 loss_at(h, hp, nullptr, alpha_raw, dists, vc, gold),
                 loss_at(h, hm, nullptr, alpha_raw, dists, vc, gold), step);
    }
    for (int r = 0; r < 2; ++r) {
        for (int c = 0; c < 3; ++c) {
            Head hp = head, hm = head;
            hp.w2(r, c) += step;
            hm.w2(r, c) -= step;
            check_fd(hg.w2(r, c),
                     loss_at(h, hp, nullptr, alpha_raw, dists, vc, gold),
                     loss_at(h, hm, nullptr, alpha_raw, dists, vc, gold),
                     step);
        }
    }
    for (int i = 0; i < 3; ++i) {
        VectorXd hp = h, hm = h;
        hp[i] += step;
        hm[i] -= step;
        check_fd(hg.grad_h[i],
                 loss_at(hp, head, nullptr, alpha_raw, dists, vc, gold),
                 loss_at(hm, head, nullptr, alpha_raw, dists, vc, gold), step);
    }
    check_fd(hg.alpha_raw,
             loss_at(h, head, nullptr, alpha_raw + step, dists, vc, gold),
             loss_at(h, head, nullptr, alpha_raw - step, dists, vc, gold),
             step);
}

TEST_CASE("mlp voter gradients match central finite differences") {
    const Head head = toy_head();
    VectorXd h(3);
    h << 0.1, 0.5, -0.3;
    const VectorXd gold = vec2(1.0, 0.0);
    const std::vector<VectorXd> dists = {vec2(0.3, 0.7)};
    VotingConfig vc;
    vc.mode = VotingMode::mlp;
    vc.mlp_hidden = 3;
    Rng rng(11);
    MlpVoter mlp;
    mlp.w1 = nn::glorot(3, 4, rng);
    mlp.b1 = nn::glorot(3, 1, rng);
    mlp.w2 = nn::glorot(2, 3, rng);
    mlp.b2 = nn::glorot(2, 1, rng);
    const double step = 1e-4;
    const HeadGradients hg = head_backward(h, head, &mlp, 0.0, dists, vc, gold);

    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 4; ++c) {
            MlpVoter mp = mlp, mm = mlp;
            mp.w1(r, c) += step;
            mm.w1(r, c) -= step;
            check_fd(hg.mlp.w1(r, c),
                     loss_at(h, head, &mp, 0.0, dists, vc, gold),
                     loss_at(h, head, &mm, 0.0, dists, vc, gold), step);
        }
    }
    for (int r = 0; r < 2; ++r) {
        MlpVoter mp = mlp, mm = mlp;
        mp.b2(r, 0) += step;
        mm.b2(r, 0) -= step;
        check_fd(hg.mlp.b2(r, 0), loss_at(h, head, &mp, 0.0, dists, vc, gold),
                 loss_at(h, head, &mm, 0.0, dists, vc, gold), step);
    }
    // Head gradients still flow through the mlp path.
    Head hp = head, hm = head;
    hp.w2(0, 0) += step;
    hm.w2(0, 0) -= step;
    check_fd(hg.w2(0, 0), loss_at(h, hp, &mlp, 0.0, dists, vc, gold),
             loss_at(h, hm, &mlp, 0.0, dists, vc, gold), step);
}

TEST_CASE("desk scale training beats the majority baseline") {
    const auto train = fixture_split(320, 0, Task::eu);
    const auto dev = fixture_split(80, 320, Task::eu);
    const auto extraction = fixture_extraction();
    const auto kb_ref = kb::build_kb(train, Task::eu, extraction);

    Hyper hyper;
    hyper.epochs = 3;
    hyper.batch_size = 32;
    hyper.hidden_dim = 16;
    hyper.seed = 7;
    const auto result = train_understanding(train, dev, Task::eu, hyper,
                                            kb_ref, VotingConfig{},
                                            extraction);
    const double baseline = majority_label_f1(train, dev, Task::eu);
    CHECK(result.model.dev_metrics.at("micro_f1") > baseline);
    REQUIRE(result.log.epochs.size() == 3);
    CHECK(result.log.epochs.back().train_loss <
          result.log.epochs.front().train_loss);
    for (const auto& e : result.log.epochs) {
        CHECK(e.grad_norm_post_max <= hyper.grad_clip + 1e-9);
    }
    CHECK(result.model.voting.alpha >= 0.0);
    CHECK(result.model.voting.alpha <= 1.0);
}

TEST_CASE("motivation task trains on the five label space") {
    const auto train = fixture_split(200, 0, Task::mu);
    const auto dev = fixture_split(50, 200, Task::mu);
    const auto extraction = fixture_extraction();
    const auto kb_ref = kb::build_kb(train, Task::mu, extraction);
    Hyper hyper;
    hyper.epochs = 3;
    hyper.hidden_dim = 12;
    const auto result = train_understanding(train, dev, Task::mu, hyper,
                                            kb_ref, VotingConfig{},
                                            extraction);
    CHECK(result.model.labels.size() == 5);
    CHECK(result.model.dev_metrics.at("micro_f1") >
          majority_label_f1(train, dev, Task::mu));
}

TEST_CASE("training is deterministic for a fixed seed") {
    const auto train = fixture_split(64, 0, Task::eu);
    const auto dev = fixture_split(16, 64, Task::eu);
    const auto extraction = fixture_extraction();
    const auto kb_ref = kb::build_kb(train, Task::eu, extraction);
    Hyper hyper;
    hyper.epochs = 2;
    hyper.hidden_dim = 8;
    const auto a = train_understanding(train, dev, Task::eu, hyper, kb_ref,
                                       VotingConfig{}, extraction);
    const auto b = train_understanding(train, dev, Task::eu, hyper, kb_ref,
                                       VotingConfig{}, extraction);
    CHECK(a.model.embeddings == b.model.embeddings);
    CHECK(a.model.head.w2 == b.model.head.w2);
    CHECK(a.model.alpha_raw == b.model.alpha_raw);
    CHECK(a.model.threshold == b.model.threshold);
}

TEST_CASE("training rejects pooling-only modes and config mismatches") {
    const auto train = fixture_split(32, 0, Task::eu);
    const auto dev = fixture_split(8, 32, Task::eu);
    const auto extraction = fixture_extraction();
    const auto kb_ref = kb::build_kb(train, Task::eu, extraction);
    Hyper hyper;
    hyper.epochs = 1;
    VotingConfig pooled;
    pooled.mode = VotingMode::aver;
    CHECK_THROWS_AS(train_understanding(train, dev, Task::eu, hyper, kb_ref,
                                        pooled, extraction),
                    config_error);
    CHECK_THROWS_AS(train_understanding(train, dev, Task::eu, hyper, kb_ref,
                                        VotingConfig{}, kb::ExtractionConfig{}),
                    config_error);
    CHECK_THROWS_AS(train_understanding(train, dev, Task::mu, hyper, kb_ref,
                                        VotingConfig{}, extraction),
                    config_error);
}

TEST_CASE("prediction includes the argmax and is deterministic") {
    const auto train = fixture_split(96, 0, Task::eu);
    const auto dev = fixture_split(24, 96, Task::eu);
    const auto extraction = fixture_extraction();
    const auto kb_ref = kb::build_kb(train, Task::eu, extraction);
    Hyper hyper;
    hyper.epochs = 2;
    hyper.hidden_dim = 8;
    auto result = train_understanding(train, dev, Task::eu, hyper, kb_ref,
                                      VotingConfig{}, extraction);
    const auto inst = fixture_instance(7, Task::eu);
    const auto a = predict(inst, result.model, kb_ref, extraction);
    const auto b = predict(inst, result.model, kb_ref, extraction);
    CHECK(a.p_f == b.p_f);
    CHECK(a.decision == b.decision);
    Eigen::Index argmax = 0;
    a.p_f.maxCoeff(&argmax);
    CHECK(a.decision.count(static_cast<int>(argmax)) == 1);
    CHECK(a.p_z.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(a.p_f.sum() == doctest::Approx(1.0).epsilon(1e-9));

    // Gate pinned to the classifier ignores the kb.
    result.model.voting.alpha = 1.0;
    const auto c = predict(inst, result.model, kb_ref, extraction);
    CHECK(c.p_f == c.p_z);

    const auto doc = prediction_json(inst, a, result.model);
    CHECK(doc.contains("instance_id"));
    CHECK(doc.contains("decision"));
    CHECK(doc.contains("p_z"));
    CHECK(doc.contains("concepts"));
    CHECK(doc.contains("p_f"));
    CHECK(doc.at("p_f").size() == 8);
}

TEST_CASE("joint matrix averages by gold motivation with nan for empty rows") {
    VectorXd joy = VectorXd::Zero(8);
    joy[static_cast<int>(Emotion::joy)] = 1.0;
    VectorXd trust = VectorXd::Zero(8);
    trust[static_cast<int>(Emotion::trust)] = 1.0;
    VectorXd uniform = VectorXd::Constant(8, 1.0 / 8.0);
    std::vector<std::pair<std::set<Motivation>, VectorXd>> outputs = {
        {{Motivation::physiological}, joy},
        {{Motivation::physiological}, trust},
        {{Motivation::love}, uniform},
        {{Motivation::love, Motivation::esteem}, joy},
        {{Motivation::esteem}, trust},
        {{Motivation::stability}, joy},
    };
    const MatrixXd m = joint_matrix(outputs);
    REQUIRE(m.rows() == 5);
    REQUIRE(m.cols() == 8);
    const int r_phys = static_cast<int>(Motivation::physiological);
    CHECK(m(r_phys, static_cast<int>(Emotion::joy)) == doctest::Approx(0.5));
    CHECK(m(r_phys, static_cast<int>(Emotion::trust)) == doctest::Approx(0.5));
    const int r_love = static_cast<int>(Motivation::love);
    CHECK(m(r_love, static_cast<int>(Emotion::joy)) ==
          doctest::Approx(0.5 * (1.0 / 8.0) + 0.5));
    const int r_esteem = static_cast<int>(Motivation::esteem);
    CHECK(m(r_esteem, static_cast<int>(Emotion::joy)) == doctest::Approx(0.5));
    const int r_spirit = static_cast<int>(Motivation::spiritual_growth);
    CHECK(std::isnan(m(r_spirit, 0)));
    for (int r = 0; r < 5; ++r) {
        if (r == r_spirit) continue;
        CHECK(m.row(r).sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("degenerate one hot outputs give a single nonzero column") {
    VectorXd joy = VectorXd::Zero(8);
    joy[static_cast<int>(Emotion::joy)] = 1.0;
    std::vector<std::pair<std::set<Motivation>, VectorXd>> outputs;
    for (int m = 0; m < 5; ++m) {
        outputs.push_back({{static_cast<Motivation>(m)}, joy});
    }
    const MatrixXd got = joint_matrix(outputs);
    for (int r = 0; r < 5; ++r) {
        for (int c = 0; c < 8; ++c) {
            const double want = c == static_cast<int>(Emotion::joy) ? 1.0 : 0.0;
            CHECK(got(r, c) == doctest::Approx(want));
        }
    }
}

TEST_CASE("baseline helpers compute hand checked values") {
    std::vector<corpus::Instance> train, eval;
    for (int i = 0; i < 4; ++i) {
        auto inst = fixture_instance(i, Task::eu);
        inst.emotions = i < 3 ? std::set<Emotion>{Emotion::joy}
                              : std::set<Emotion>{Emotion::fear};
        train.push_back(inst);
    }
    eval = train;
    // Majority = joy; predicting it scores 3 hits of 4 singleton golds.
    CHECK(majority_label_f1(train, eval, Task::eu) == doctest::Approx(0.75));
    // Singleton golds: E[TP] = n/8, FP = n - n/8, FN = n - n/8 -> F1 = 1/8.
    CHECK(uniform_random_expected_f1(eval, Task::eu) ==
          doctest::Approx(1.0 / 8.0));
}

TEST_CASE("model save and load round trip bit exact") {
    const auto train = fixture_split(48, 0, Task::eu);
    const auto dev = fixture_split(16, 48, Task::eu);
    const auto extraction = fixture_extraction();
    const auto kb_ref = kb::build_kb(train, Task::eu, extraction);
    Hyper hyper;
    hyper.epochs = 1;
    hyper.hidden_dim = 8;
    const auto result = train_understanding(train, dev, Task::eu, hyper,
                                            kb_ref, VotingConfig{},
                                            extraction);
    const auto dir = (std::filesystem::temp_directory_path() /
                      "comma_understanding_model")
                         .string();
    std::filesystem::remove_all(dir);
    save_model(result.model, dir);
    const Model loaded = load_model(dir);
    CHECK(loaded.embeddings == result.model.embeddings);
    CHECK(loaded.head.w1 == result.model.head.w1);
    CHECK(loaded.head.b1 == result.model.head.b1);
    CHECK(loaded.head.w2 == result.model.head.w2);
    CHECK(loaded.alpha_raw == result.model.alpha_raw);
    CHECK(loaded.threshold == result.model.threshold);
    CHECK(loaded.kb_fingerprint == result.model.kb_fingerprint);
    CHECK(loaded.vocab.tokens() == result.model.vocab.tokens());

    const auto inst = fixture_instance(3, Task::eu);
    const auto a = predict(inst, result.model, kb_ref, extraction);
    const auto b = predict(inst, loaded, kb_ref, extraction);
    CHECK(a.p_f == b.p_f);
    CHECK(a.decision == b.decision);
}

TEST_CASE("loading rejects tampered sidecars") {
    const auto train = fixture_split(32, 0, Task::eu);
    const auto dev = fixture_split(8, 32, Task::eu);
    const auto extraction = fixture_extraction();
    const auto kb_ref = kb::build_kb(train, Task::eu, extraction);
    Hyper hyper;
    hyper.epochs = 1;
    hyper.hidden_dim = 8;
    const auto result = train_understanding(train, dev, Task::eu, hyper,
                                            kb_ref, VotingConfig{},
                                            extraction);
    const auto dir = (std::filesystem::temp_directory_path() /
                      "comma_understanding_tamper")
                         .string();
    std::filesystem::remove_all(dir);
    save_model(result.model, dir);
    const auto sidecar_path = dir + "/model.json";
    auto doc = io::read_json_file(sidecar_path);
    doc["task"] = "mu";
    io::write_json_file(sidecar_path, doc);
    CHECK_THROWS_AS(load_model(dir), data_error);
    doc["task"] = "eu";
    doc.erase("threshold");
    io::write_json_file(sidecar_path, doc);
    CHECK_THROWS_AS(load_model(dir), data_error);
}
