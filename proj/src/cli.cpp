#include "comma/cli.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "comma/concept_kb.hpp"
#include "comma/corpus.hpp"
#include "comma/errors.hpp"
#include "comma/generation.hpp"
#include "comma/io.hpp"
#include "comma/labels.hpp"
#include "comma/metrics.hpp"
#include "comma/understanding.hpp"
#include "json.hpp"

namespace comma::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

void print_error_line(const std::string& category, const std::string& message) {
    const json doc = {{"error", {{"category", category}, {"message", message}}}};
    std::cerr << doc.dump() << "\n";
}

std::string comma_home() {
    const char* env = std::getenv("COMMA_HOME");
    return env == nullptr ? std::string() : std::string(env);
}

// Empty values fall back to COMMA_HOME/<fallback>; without the env var the
// flag becomes mandatory.
std::string resolve_path(const std::string& value, const std::string& fallback,
                         const std::string& flag) {
    if (!value.empty()) return value;
    const std::string home = comma_home();
    if (home.empty()) {
        throw config_error("missing " + flag + "; pass it or set COMMA_HOME to use " +
                           fallback + " under it");
    }
    return (fs::path(home) / fallback).string();
}

void guard_output_file(const std::string& path, bool force) {
    if (!force && fs::exists(path)) {
        throw config_error("output already exists: " + path +
                           "; pass --force to overwrite");
    }
    const fs::path parent = fs::path(path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
}

void guard_output_dir(const std::string& dir, bool force) {
    if (!force && fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir)) {
        throw config_error("output directory is not empty: " + dir +
                           "; pass --force to overwrite");
    }
    fs::create_directories(dir);
}

// Hyperparameters outside the documented ranges need an explicit override.
struct RangeChecker {
    bool allow = false;

    void operator()(const std::string& name, double value, double lo, double hi,
                    bool lo_open = false, bool hi_open = false) const {
        const bool below = lo_open ? value <= lo : value < lo;
        const bool above = hi_open ? value >= hi : value > hi;
        if (!(below || above) || allow) return;
        char buf[192];
        std::snprintf(buf, sizeof(buf),
                      "%s=%g is outside the documented range %c%g, %g%c; rerun "
                      "with --allow-out-of-range to accept it",
                      name.c_str(), value, lo_open ? '(' : '[', lo, hi,
                      hi_open ? ')' : ']');
        throw config_error(buf);
    }
};

Task parse_understanding_task(const std::string& raw) {
    if (raw == "eu" || raw == "emotion") return Task::eu;
    if (raw == "mu" || raw == "motivation") return Task::mu;
    throw config_error("unknown task '" + raw +
                       "' (expected eu|mu, aliases emotion|motivation)");
}

std::string canonical_task(const std::string& raw) {
    if (raw == "cag") return "cag";
    return parse_understanding_task(raw) == Task::eu ? "eu" : "mu";
}

template <typename T>
void apply_limit(std::vector<T>& items, long long limit) {
    if (limit < 0) throw config_error("--limit must be nonnegative");
    if (limit > 0 && static_cast<long long>(items.size()) > limit) {
        items.resize(static_cast<std::size_t>(limit));
    }
}

// Shared concept-extraction flags; query-time settings must reproduce the
// fingerprint stored in the kb file.
struct ExtractionOpts {
    double high_freq_threshold = 0.05;
    double epsilon = 0.0;
    bool keep_stop_words = false;
    bool keep_case = false;
    std::string allowed_pos = "noun,verb,adjective";
};

void add_extraction_flags(CLI::App* sub, ExtractionOpts& opts) {
    sub->add_option("--high-freq-threshold", opts.high_freq_threshold,
                    "drop lemmas seen in more than this share of train actions")
        ->capture_default_str();
    sub->add_option("--concept-epsilon", opts.epsilon,
                    "floor applied to stored concept scores")
        ->capture_default_str();
    sub->add_flag("--keep-stop-words", opts.keep_stop_words,
                  "keep stop words as concepts");
    sub->add_flag("--keep-case", opts.keep_case,
                  "skip lowercasing during extraction");
    sub->add_option("--allowed-pos", opts.allowed_pos,
                    "comma separated pos classes kept as concepts")
        ->capture_default_str();
}

text::Pos parse_pos(const std::string& raw) {
    if (raw == "noun") return text::Pos::noun;
    if (raw == "verb") return text::Pos::verb;
    if (raw == "adjective") return text::Pos::adjective;
    throw config_error("unknown pos class '" + raw +
                       "' (expected noun|verb|adjective)");
}

kb::ExtractionConfig to_extraction(const ExtractionOpts& opts) {
    if (opts.high_freq_threshold <= 0.0 || opts.high_freq_threshold > 1.0) {
        throw config_error("--high-freq-threshold must be in (0, 1]");
    }
    if (opts.epsilon < 0.0) throw config_error("--concept-epsilon must be >= 0");
    kb::ExtractionConfig config;
    config.lowercase = !opts.keep_case;
    config.remove_stop_words = !opts.keep_stop_words;
    config.high_freq_threshold = opts.high_freq_threshold;
    config.epsilon = opts.epsilon;
    config.allowed_pos.clear();
    std::istringstream in(opts.allowed_pos);
    std::string part;
    while (std::getline(in, part, ',')) {
        if (!part.empty()) config.allowed_pos.insert(parse_pos(part));
    }
    if (config.allowed_pos.empty()) {
        throw config_error("--allowed-pos selects no pos class");
    }
    return config;
}

// Loads the kb and enforces both lineage links: the extraction fingerprint
// recorded in the kb file and, when a model is present, the kb fingerprint
// recorded in its sidecar.
kb::ConceptKB load_kb_checked(const std::string& path,
                              const kb::ExtractionConfig& extraction,
                              const std::string& model_kb_fingerprint,
                              bool allow_mismatch) {
    std::optional<std::string> expected;
    if (!allow_mismatch) expected = extraction.fingerprint();
    kb::ConceptKB kb_ref = kb::load_kb(path, expected);
    if (!model_kb_fingerprint.empty() && !allow_mismatch) {
        const std::string actual = io::json_fingerprint(kb::kb_json(kb_ref));
        if (actual != model_kb_fingerprint) {
            throw config_error(
                "kb fingerprint " + actual + " does not match the model lineage " +
                model_kb_fingerprint + "; pass --allow-mismatch to proceed anyway");
        }
    }
    return kb_ref;
}

// Index-parallel map with results stored by position, so the reduction is
// identical for any job count.
void run_jobs(int jobs, std::size_t n,
              const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = next.fetch_add(1); i < n;
                     i = next.fetch_add(1)) {
                    fn(i);
                }
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    for (const auto& err : errors) {
        if (err) std::rethrow_exception(err);
    }
}

// ---------------------------------------------------------------------------
// build-corpus

struct BuildCorpusOpts {
    std::string input;
    std::string out;
    std::uint64_t seed = 7;
    int agreement_min = 2;
    std::vector<double> ratios{9.0 / 13.0, 2.0 / 13.0, 2.0 / 13.0};
    bool force = false;
};

void cmd_build_corpus(const BuildCorpusOpts& opts) {
    const std::string out = resolve_path(opts.out, "corpus", "--out");
    if (opts.agreement_min < 1 || opts.agreement_min > 3) {
        throw config_error("--agreement-min must be in [1, 3]");
    }
    if (opts.ratios.size() != 3) {
        throw config_error("--ratios needs the train, dev, and test shares");
    }
    const json cfg = {{"command", "build-corpus"},
                      {"seed", opts.seed},
                      {"agreement_min", opts.agreement_min},
                      {"ratios", opts.ratios}};
    const std::string config_hash = io::json_fingerprint(cfg);

    const corpus::ParseResult parsed = corpus::parse_release_dir(opts.input);
    const corpus::Aligned aligned =
        corpus::align_instances(parsed.lines, opts.agreement_min);
    const std::array<double, 3> ratios{opts.ratios[0], opts.ratios[1],
                                       opts.ratios[2]};
    const corpus::CorpusSplits splits =
        corpus::split_corpus(aligned.instances, ratios, opts.seed);

    guard_output_dir(out, opts.force);
    const fs::path base(out);
    corpus::write_jsonl((base / "train.jsonl").string(), splits.train);
    corpus::write_jsonl((base / "dev.jsonl").string(), splits.dev);
    corpus::write_jsonl((base / "test.jsonl").string(), splits.test);
    corpus::write_manifest((base / "manifest.json").string(), splits);

    const corpus::LabelStats stats = corpus::corpus_stats(aligned.instances);
    json doc;
    doc["config"] = cfg;
    doc["config_hash"] = config_hash;
    doc["total"] = aligned.stats.emitted;
    doc["align"] = {
        {"candidates", aligned.stats.candidates},
        {"emitted", aligned.stats.emitted},
        {"rejected_no_motivation", aligned.stats.rejected_no_motivation},
        {"rejected_no_emotion", aligned.stats.rejected_no_emotion},
        {"rejected_no_labels", aligned.stats.rejected_no_labels}};
    doc["parse_issues"] = parsed.issues.size();
    doc["splits"] = {{"train", splits.train.size()},
                     {"dev", splits.dev.size()},
                     {"test", splits.test.size()}};
    doc["labels"] = {{"motivations", stats.motivation_counts},
                     {"emotions", stats.emotion_counts}};
    doc["gender"] = {{"male", stats.male},
                     {"female", stats.female},
                     {"unknown", stats.unknown}};
    doc["n_stories"] = stats.n_stories;
    io::write_json_file((base / "stats.json").string(), doc);

    std::cout << "corpus: total=" << aligned.stats.emitted
              << " train=" << splits.train.size()
              << " dev=" << splits.dev.size()
              << " test=" << splits.test.size() << " -> " << out << "\n";
}

// ---------------------------------------------------------------------------
// build-kb

struct BuildKbOpts {
    std::string corpus;
    std::string task;
    std::string out;
    ExtractionOpts extraction;
    bool force = false;
};

void cmd_build_kb(const BuildKbOpts& opts) {
    const Task task = parse_understanding_task(opts.task);
    const std::string task_token = task == Task::eu ? "eu" : "mu";
    const std::string corpus_dir = resolve_path(opts.corpus, "corpus", "--corpus");
    const std::string out =
        resolve_path(opts.out, "kb_" + task_token + ".json", "--out");
    const kb::ExtractionConfig extraction = to_extraction(opts.extraction);

    const json cfg = {{"command", "build-kb"},
                      {"task", task_token},
                      {"extraction", extraction.to_json()}};
    const std::string config_hash = io::json_fingerprint(cfg);

    const std::vector<corpus::Instance> train =
        corpus::read_jsonl((fs::path(corpus_dir) / "train.jsonl").string());
    // An empty post-filter vocabulary raises a data error naming the
    // extraction config inside build_kb.
    const kb::ConceptKB kb_ref = kb::build_kb(train, task, extraction);

    guard_output_file(out, opts.force);
    json doc = kb::kb_json(kb_ref);
    doc["config_hash"] = config_hash;
    io::write_json_file(out, doc);

    for (std::size_t j = 0; j < kb_ref.labels.size(); ++j) {
        std::cout << kb_ref.labels[j] << ": V=" << kb_ref.vocab_size[j]
                  << " N=" << kb_ref.total_count[j] << "\n";
    }
    std::cout << "kb: " << kb_ref.concepts.size() << " concepts -> " << out
              << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    std::string task;
    std::string corpus;
    std::string kb;
    std::string out;
    std::uint64_t seed = 7;
    int epochs = 5;
    int batch_size = 32;
    double lr = 0.05;
    double warmup_frac = 0.1;
    double grad_clip = 1.0;
    int hidden_dim = 0;  // 0 picks the per-task default
    long long limit = 0;
    long long dev_limit = 0;
    int vocab_min_count = 1;
    std::uint64_t vocab_max = 20000;
    bool allow_out_of_range = false;
    bool force = false;
    // understanding
    std::string voting = "gate";
    std::string pooling = "aver";
    int mlp_hidden = 16;
    int max_tokens = 200;
    ExtractionOpts extraction;
    // generation
    std::string arch = "causal";
    int embed_dim = 32;
    double lambda1 = 1.0;
    double lambda2 = 1.5;
    double kl_epsilon = 0.1;
    std::string kl_direction = "forward";
    int max_input_tokens = 200;
    int max_output_tokens = 60;
    bool without_motivation = false;
};

void cmd_train(const TrainOpts& opts) {
    const std::string task_token = canonical_task(opts.task);
    const bool cag = task_token == "cag";
    const std::string corpus_dir = resolve_path(opts.corpus, "corpus", "--corpus");
    const std::string out =
        resolve_path(opts.out, "models/" + task_token, "--out");
    const int hidden = opts.hidden_dim > 0 ? opts.hidden_dim : (cag ? 64 : 32);

    const RangeChecker check{opts.allow_out_of_range};
    check("epochs", opts.epochs, 1, 30);
    check("batch-size", opts.batch_size, 1, 256);
    check("lr", opts.lr, 0.0, 0.1, true, false);
    check("warmup-frac", opts.warmup_frac, 0.0, 0.5);
    check("grad-clip", opts.grad_clip, 0.0, 10.0, true, false);
    check("hidden-dim", hidden, 1, 1024);
    check("vocab-min-count", opts.vocab_min_count, 1, 100);
    check("vocab-max", static_cast<double>(opts.vocab_max), 100, 1000000);

    std::vector<corpus::Instance> train =
        corpus::read_jsonl((fs::path(corpus_dir) / "train.jsonl").string());
    std::vector<corpus::Instance> dev =
        corpus::read_jsonl((fs::path(corpus_dir) / "dev.jsonl").string());
    apply_limit(train, opts.limit);
    apply_limit(dev, opts.dev_limit);

    json cfg = {{"command", "train"},       {"task", task_token},
                {"seed", opts.seed},        {"epochs", opts.epochs},
                {"batch_size", opts.batch_size}, {"lr", opts.lr},
                {"warmup_frac", opts.warmup_frac}, {"grad_clip", opts.grad_clip},
                {"hidden_dim", hidden},     {"limit", opts.limit},
                {"dev_limit", opts.dev_limit}, {"vocab_min_count", opts.vocab_min_count},
                {"vocab_max", opts.vocab_max}};

    if (cag) {
        check("embed-dim", opts.embed_dim, 1, 1024);
        check("lambda1", opts.lambda1, 0.0, 10.0);
        check("lambda2", opts.lambda2, 0.0, 10.0);
        check("max-input-tokens", opts.max_input_tokens, 8, 200);
        check("max-output-tokens", opts.max_output_tokens, 4, 60);

        generation::GenHyper hyper;
        hyper.epochs = opts.epochs;
        hyper.batch_size = opts.batch_size;
        hyper.lr = opts.lr;
        hyper.warmup_frac = opts.warmup_frac;
        hyper.grad_clip = opts.grad_clip;
        hyper.hidden_dim = hidden;
        hyper.embed_dim = opts.embed_dim;
        hyper.max_input_tokens = opts.max_input_tokens;
        hyper.max_target_tokens = opts.max_output_tokens;
        hyper.vocab_min_count = opts.vocab_min_count;
        hyper.vocab_max = static_cast<std::size_t>(opts.vocab_max);
        hyper.seed = opts.seed;
        hyper.arch = opts.arch;
        hyper.with_motivation = !opts.without_motivation;

        generation::GenLossConfig loss;
        loss.lambda1 = opts.lambda1;
        loss.lambda2 = opts.lambda2;
        loss.epsilon = opts.kl_epsilon;
        loss.kl_direction = opts.kl_direction;

        cfg["arch"] = opts.arch;
        cfg["embed_dim"] = opts.embed_dim;
        cfg["loss"] = loss.to_json();
        cfg["max_input_tokens"] = opts.max_input_tokens;
        cfg["max_output_tokens"] = opts.max_output_tokens;
        cfg["with_motivation"] = hyper.with_motivation;
        const std::string config_hash = io::json_fingerprint(cfg);

        const generation::GenTrainResult result =
            generation::train_generator(train, dev, hyper, loss);

        guard_output_dir(out, opts.force);
        generation::DecodeConfig decode;
        decode.max_tokens = opts.max_output_tokens;
        generation::save_generator(result.model, loss, decode, out);
        json log = result.log.to_json();
        log["task"] = task_token;
        log["config"] = cfg;
        log["config_hash"] = config_hash;
        io::write_json_file((fs::path(out) / "train_log.json").string(), log);

        std::cout << "cag: selected epoch " << result.log.selected_epoch
                  << " dev_total=" << result.log.selected_dev_total << " -> "
                  << out << "\n";
        return;
    }

    const Task task = parse_understanding_task(opts.task);
    check("mlp-hidden", opts.mlp_hidden, 1, 1024);
    check("max-tokens", opts.max_tokens, 8, 200);
    const kb::ExtractionConfig extraction = to_extraction(opts.extraction);
    const std::string kb_path =
        resolve_path(opts.kb, "kb_" + task_token + ".json", "--kb");
    const kb::ConceptKB kb_ref = kb::load_kb(kb_path, extraction.fingerprint());

    understanding::Hyper hyper;
    hyper.epochs = opts.epochs;
    hyper.batch_size = opts.batch_size;
    hyper.lr = opts.lr;
    hyper.warmup_frac = opts.warmup_frac;
    hyper.grad_clip = opts.grad_clip;
    hyper.hidden_dim = hidden;
    hyper.max_tokens = opts.max_tokens;
    hyper.vocab_min_count = opts.vocab_min_count;
    hyper.vocab_max = static_cast<std::size_t>(opts.vocab_max);
    hyper.seed = opts.seed;

    understanding::VotingConfig voting;
    voting.mode = understanding::parse_voting_mode(opts.voting);
    voting.pooling = understanding::parse_voting_mode(opts.pooling);
    voting.mlp_hidden = opts.mlp_hidden;

    cfg["voting"] = opts.voting;
    cfg["pooling"] = opts.pooling;
    cfg["mlp_hidden"] = opts.mlp_hidden;
    cfg["max_tokens"] = opts.max_tokens;
    cfg["extraction"] = extraction.to_json();
    const std::string config_hash = io::json_fingerprint(cfg);

    const understanding::TrainResult result = understanding::train_understanding(
        train, dev, task, hyper, kb_ref, voting, extraction);

    guard_output_dir(out, opts.force);
    understanding::save_model(result.model, out);
    json log = result.log.to_json();
    log["task"] = task_token;
    log["config"] = cfg;
    log["config_hash"] = config_hash;
    io::write_json_file((fs::path(out) / "train_log.json").string(), log);

    std::cout << task_token << ": selected epoch " << result.log.selected_epoch
              << " dev_micro_f1=" << result.log.selected_dev_f1
              << " threshold=" << result.log.selected_threshold << " -> " << out
              << "\n";
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
    std::string task;
    std::string corpus;
    std::string split = "dev";
    std::string model;
    std::string kb;
    std::string out;
    bool allow_mismatch = false;
    int jobs = 1;
    long long limit = 0;
    ExtractionOpts extraction;
    int max_input_tokens = 200;
    int max_output_tokens = 60;
    bool force = false;
};

void cmd_eval(const EvalOpts& opts) {
    const std::string task_token = canonical_task(opts.task);
    if (opts.split != "train" && opts.split != "dev" && opts.split != "test") {
        throw config_error("--split must be train|dev|test");
    }
    if (opts.jobs < 1 || opts.jobs > 64) {
        throw config_error("--jobs must be in [1, 64]");
    }
    const std::string corpus_dir = resolve_path(opts.corpus, "corpus", "--corpus");
    const std::string model_dir =
        resolve_path(opts.model, "models/" + task_token, "--model");
    const std::string out = resolve_path(
        opts.out, "reports/" + task_token + "_" + opts.split + ".json", "--out");

    std::vector<corpus::Instance> instances = corpus::read_jsonl(
        (fs::path(corpus_dir) / (opts.split + ".jsonl")).string());
    apply_limit(instances, opts.limit);

    // --jobs is excluded from the hash: it must not influence any result.
    json cfg = {{"command", "eval"},
                {"task", task_token},
                {"split", opts.split},
                {"limit", opts.limit}};

    metrics::EvalReport report;
    report.task = task_token;
    for (const auto& inst : instances) {
        report.per_instance.push_back(corpus::instance_id(inst));
    }

    if (task_token == "cag") {
        cfg["max_input_tokens"] = opts.max_input_tokens;
        cfg["max_output_tokens"] = opts.max_output_tokens;
        const std::string config_hash = io::json_fingerprint(cfg);
        const generation::LoadedGenerator loaded =
            generation::load_generator(model_dir);
        const json measured = generation::evaluate_generator(
            loaded.model, instances, loaded.loss_config, opts.max_input_tokens,
            opts.max_output_tokens);
        for (const auto& [key, value] : measured.items()) {
            report.metrics[key] = value.get<double>();
        }
        report.smoothing =
            "bleu zero precisions floored at 1e-9; failed decodes scored as "
            "empty hypotheses";
        report.config_fingerprint = config_hash;

        guard_output_file(out, opts.force);
        json doc = report.to_json();
        doc["config_hash"] = config_hash;
        doc["split"] = opts.split;
        io::write_json_file(out, doc);
        std::cout << doc.at("metrics").dump() << "\n";
        return;
    }

    const Task task = parse_understanding_task(opts.task);
    const kb::ExtractionConfig extraction = to_extraction(opts.extraction);
    const std::string kb_path =
        resolve_path(opts.kb, "kb_" + task_token + ".json", "--kb");
    const understanding::Model model = understanding::load_model(model_dir);
    const kb::ConceptKB kb_ref = load_kb_checked(
        kb_path, extraction, model.kb_fingerprint, opts.allow_mismatch);

    cfg["extraction"] = extraction.to_json();
    cfg["allow_mismatch"] = opts.allow_mismatch;
    const std::string config_hash = io::json_fingerprint(cfg);

    std::vector<understanding::Prediction> preds(instances.size());
    run_jobs(opts.jobs, instances.size(), [&](std::size_t i) {
        preds[i] = understanding::predict(instances[i], model, kb_ref, extraction);
    });
    std::vector<std::set<int>> gold, decided;
    gold.reserve(instances.size());
    decided.reserve(instances.size());
    for (std::size_t i = 0; i < instances.size(); ++i) {
        gold.push_back(understanding::gold_indices(instances[i], task));
        decided.push_back(preds[i].decision);
    }
    const metrics::Prf prf = metrics::micro_prf(gold, decided);
    report.metrics = {{"micro_precision", prf.precision},
                      {"micro_recall", prf.recall},
                      {"micro_f1", prf.f1},
                      {"threshold", model.threshold}};
    report.smoothing = "";
    report.config_fingerprint = config_hash;

    guard_output_file(out, opts.force);
    json doc = report.to_json();
    doc["config_hash"] = config_hash;
    doc["split"] = opts.split;
    io::write_json_file(out, doc);
    std::cout << doc.at("metrics").dump() << "\n";
}

// ---------------------------------------------------------------------------
// predict

struct PredictOpts {
    std::string task;
    std::string model;
    std::string kb;
    std::string input;
    std::string corpus;
    std::string split = "test";
    std::string out = "-";
    bool explain = false;
    bool allow_mismatch = false;
    long long limit = 0;
    ExtractionOpts extraction;
    std::string decode;
    int beam_width = 0;
    int max_output_tokens = 0;
    int max_input_tokens = 200;
    std::string rerank_emotion;
    bool force = false;
};

void cmd_predict(const PredictOpts& opts) {
    const std::string task_token = canonical_task(opts.task);
    std::string input = opts.input;
    if (input.empty()) {
        const std::string corpus_dir =
            resolve_path(opts.corpus, "corpus", "--input (or --corpus)");
        input = (fs::path(corpus_dir) / (opts.split + ".jsonl")).string();
    }
    std::vector<corpus::Instance> instances = corpus::read_jsonl(input);
    apply_limit(instances, opts.limit);
    const std::string model_dir =
        resolve_path(opts.model, "models/" + task_token, "--model");

    // All inputs are loaded before the output file is claimed, so a failed
    // run leaves nothing behind.
    std::function<void(std::ostream&)> emit;

    if (task_token == "cag") {
        const generation::LoadedGenerator loaded =
            generation::load_generator(model_dir);
        generation::DecodeConfig decode = loaded.decode_defaults;
        if (!opts.decode.empty()) decode.mode = opts.decode;
        if (opts.beam_width > 0) decode.beam_width = opts.beam_width;
        if (opts.max_output_tokens > 0) decode.max_tokens = opts.max_output_tokens;
        if (!opts.rerank_emotion.empty()) {
            const auto label = parse_emotion(opts.rerank_emotion);
            if (!label) {
                throw config_error("unknown emotion label: " + opts.rerank_emotion);
            }
            decode.rerank_emotion = *label;
        }
        // A degenerate decode marks its own line instead of aborting the
        // stream, keeping output rows 1:1 with input rows (the eval command
        // scores such decodes as empty hypotheses for the same reason).
        emit = [&instances, loaded, decode,
                max_input = opts.max_input_tokens](std::ostream& os) {
            std::size_t failed = 0;
            for (const auto& inst : instances) {
                json doc;
                try {
                    const generation::GeneratedAction generated =
                        generation::generate_action(loaded.model, inst, decode,
                                                    max_input);
                    doc = generation::generated_json(inst, generated);
                } catch (const error& e) {
                    generation::GeneratedAction empty;
                    empty.untagged = true;
                    empty.p_e = Eigen::VectorXd::Zero(kNumEmotions);
                    doc = generation::generated_json(inst, empty);
                    doc["error"] = e.what();
                    ++failed;
                }
                os << doc.dump() << "\n";
            }
            if (failed > 0) {
                std::cerr << failed << " of " << instances.size()
                          << " decodes failed; their lines carry an error key\n";
            }
        };
    } else {
        const kb::ExtractionConfig extraction = to_extraction(opts.extraction);
        const std::string kb_path =
            resolve_path(opts.kb, "kb_" + task_token + ".json", "--kb");
        const understanding::Model model = understanding::load_model(model_dir);
        const kb::ConceptKB kb_ref = load_kb_checked(
            kb_path, extraction, model.kb_fingerprint, opts.allow_mismatch);
        emit = [&instances, model, kb_ref, extraction,
                explain = opts.explain](std::ostream& os) {
            for (const auto& inst : instances) {
                const understanding::Prediction pred =
                    understanding::predict(inst, model, kb_ref, extraction);
                json doc = understanding::prediction_json(inst, pred, model);
                if (!explain) doc.erase("concepts");
                os << doc.dump() << "\n";
            }
        };
    }

    if (opts.out == "-" || opts.out.empty()) {
        emit(std::cout);
        return;
    }
    guard_output_file(opts.out, opts.force);
    std::ofstream file(opts.out, std::ios::binary | std::ios::trunc);
    if (!file) throw data_error("cannot write file: " + opts.out);
    emit(file);
    file.close();
    if (!file) throw data_error("write failed: " + opts.out);
    std::cout << "wrote " << instances.size() << " predictions -> " << opts.out
              << "\n";
}

// ---------------------------------------------------------------------------
// visualize-matrix

struct MatrixOpts {
    std::string predictions;
    std::string out;
    std::string image;
    bool force = false;
};

std::string matrix_csv(const Eigen::MatrixXd& m) {
    std::ostringstream out;
    char buf[48];
    const auto header = [&](const char* first) {
        out << first;
        for (Emotion e : all_emotions()) out << ',' << id(e);
        out << '\n';
    };
    const auto block = [&](double scale) {
        for (int i = 0; i < kNumMotivations; ++i) {
            out << id(static_cast<Motivation>(i));
            for (int j = 0; j < kNumEmotions; ++j) {
                std::snprintf(buf, sizeof(buf), "%.17g", m(i, j) * scale);
                out << ',' << buf;
            }
            out << '\n';
        }
    };
    header("motivation");
    block(1.0);
    out << '\n';
    header("motivation_x1000");
    block(1000.0);
    return out.str();
}

// Portable pixmap heatmap: blue (0) to red (1), gray for unpopulated rows.
std::string matrix_ppm(const Eigen::MatrixXd& m) {
    constexpr int cell = 40;
    const int width = kNumEmotions * cell;
    const int height = kNumMotivations * cell;
    std::string img =
        "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    img.reserve(img.size() + static_cast<std::size_t>(3 * width * height));
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const double v = m(y / cell, x / cell);
            unsigned char rgb[3];
            if (!std::isfinite(v)) {
                rgb[0] = rgb[1] = rgb[2] = 128;
            } else {
                const double t = std::clamp(v, 0.0, 1.0);
                rgb[0] = static_cast<unsigned char>(std::lround(255.0 * t));
                rgb[1] = 64;
                rgb[2] = static_cast<unsigned char>(std::lround(255.0 * (1.0 - t)));
            }
            img.append(reinterpret_cast<const char*>(rgb), 3);
        }
    }
    return img;
}

void cmd_visualize_matrix(const MatrixOpts& opts) {
    const std::string out = resolve_path(opts.out, "reports/matrix.csv", "--out");
    const std::string content = io::read_file(opts.predictions);

    std::vector<std::pair<std::set<Motivation>, Eigen::VectorXd>> outputs;
    std::istringstream in(content);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const json doc = json::parse(line, nullptr, false);
        if (doc.is_discarded()) {
            throw data_error("predictions line " + std::to_string(line_no) +
                             " is not valid json");
        }
        if (!doc.contains("p_f") || !doc.contains("gold") ||
            !doc.at("gold").contains("motivations")) {
            throw data_error("predictions line " + std::to_string(line_no) +
                             " misses p_f or gold.motivations; the matrix needs "
                             "emotion prediction output");
        }
        const auto& p_f = doc.at("p_f");
        if (static_cast<int>(p_f.size()) != kNumEmotions) {
            throw data_error("predictions line " + std::to_string(line_no) +
                             " has " + std::to_string(p_f.size()) +
                             " p_f entries, expected the 8 emotion labels");
        }
        Eigen::VectorXd v(kNumEmotions);
        for (int j = 0; j < kNumEmotions; ++j) v[j] = p_f.at(j).get<double>();
        std::set<Motivation> gold;
        for (const auto& raw : doc.at("gold").at("motivations")) {
            const auto parsed = parse_motivation(raw.get<std::string>());
            if (!parsed) {
                throw data_error("predictions line " + std::to_string(line_no) +
                                 " carries unknown motivation label '" +
                                 raw.get<std::string>() + "'");
            }
            gold.insert(*parsed);
        }
        outputs.emplace_back(std::move(gold), std::move(v));
    }
    if (outputs.empty()) {
        throw data_error("no predictions found in " + opts.predictions);
    }

    const Eigen::MatrixXd m = understanding::joint_matrix(outputs);
    guard_output_file(out, opts.force);
    io::write_file(out, matrix_csv(m));
    if (!opts.image.empty()) {
        guard_output_file(opts.image, opts.force);
        io::write_file(opts.image, matrix_ppm(m));
    }
    std::cout << "matrix over " << outputs.size() << " predictions -> " << out
              << "\n";
}

// ---------------------------------------------------------------------------
// human eval

struct ExportHumanEvalOpts {
    std::string pairs;
    std::string sheet;
    std::string key;
    std::uint64_t seed = 7;
    bool force = false;
};

void cmd_export_human_eval(const ExportHumanEvalOpts& opts) {
    const std::string sheet =
        resolve_path(opts.sheet, "human_eval/sheet.csv", "--sheet");
    const std::string key =
        resolve_path(opts.key, "human_eval/key.json", "--key");
    const json doc = io::read_json_file(opts.pairs);
    if (!doc.is_array()) {
        throw data_error("pairs file must hold a json array: " + opts.pairs);
    }
    std::vector<metrics::EvalPair> pairs;
    pairs.reserve(doc.size());
    for (const auto& item : doc) {
        for (const char* field :
             {"id", "context", "system_action", "baseline_action"}) {
            if (!item.contains(field)) {
                throw data_error(std::string("pair entry misses '") + field +
                                 "' in " + opts.pairs);
            }
        }
        pairs.push_back({item.at("id").get<std::string>(),
                         item.at("context").get<std::string>(),
                         item.at("system_action").get<std::string>(),
                         item.at("baseline_action").get<std::string>()});
    }
    guard_output_file(sheet, opts.force);
    guard_output_file(key, opts.force);
    metrics::export_human_eval(pairs, opts.seed, sheet, key);
    std::cout << "exported " << pairs.size() << " pairs -> " << sheet << "\n";
}

struct ImportHumanEvalOpts {
    std::vector<std::string> sheets;
    std::string key;
    std::string out = "-";
    bool force = false;
};

void cmd_import_human_eval(const ImportHumanEvalOpts& opts) {
    const metrics::HumanEvalSummary summary =
        metrics::import_human_eval(opts.sheets, opts.key);
    const json doc = summary.to_json();
    if (opts.out == "-" || opts.out.empty()) {
        std::cout << doc.dump() << "\n";
        return;
    }
    guard_output_file(opts.out, opts.force);
    io::write_json_file(opts.out, doc);
    std::cout << "summary of " << summary.n_annotators << " sheets -> "
              << opts.out << "\n";
}

void add_config_flag(CLI::App* sub) {
    // Documentation only: --config is expanded into option tokens before
    // CLI11 parses, so explicit flags always win over file entries.
    static std::string sink;
    sub->add_option("--config", sink,
                    "flat key=value config file; explicit flags win");
}

std::string trim(const std::string& raw) {
    const auto begin = raw.find_first_not_of(" \t\r");
    if (begin == std::string::npos) return "";
    const auto end = raw.find_last_not_of(" \t\r");
    return raw.substr(begin, end - begin + 1);
}

// Replaces `--config FILE` with `--key=value` tokens for every file entry
// whose option is not already given on the command line.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::vector<std::string> merged = args;
    std::string config_path;
    for (std::size_t i = 0; i < merged.size(); ++i) {
        const std::string& arg = merged[i];
        if (arg == "--config") {
            if (i + 1 >= merged.size()) {
                throw config_error("--config needs a file path");
            }
            config_path = merged[i + 1];
            merged.erase(merged.begin() + static_cast<std::ptrdiff_t>(i),
                         merged.begin() + static_cast<std::ptrdiff_t>(i + 2));
            break;
        }
        if (arg.rfind("--config=", 0) == 0) {
            config_path = arg.substr(9);
            merged.erase(merged.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (config_path.empty()) return merged;
    if (merged.empty()) {
        throw config_error("--config needs a subcommand to configure");
    }

    const std::string content = io::read_file(config_path);
    std::istringstream in(content);
    std::string line;
    std::vector<std::string> injected;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        const std::string key = eq == std::string::npos ? "" : trim(line.substr(0, eq));
        if (key.empty()) {
            throw config_error("config file line " + std::to_string(line_no) +
                               " is not key=value: " + config_path);
        }
        const std::string flag = "--" + key;
        const bool overridden =
            std::any_of(merged.begin(), merged.end(), [&](const std::string& a) {
                return a == flag || a.rfind(flag + "=", 0) == 0;
            });
        if (!overridden) injected.push_back(flag + "=" + trim(line.substr(eq + 1)));
    }
    merged.insert(merged.begin() + 1, injected.begin(), injected.end());
    return merged;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    CLI::App app{"corpus, concept kb, classifier, and generator toolkit"};
    app.require_subcommand(1);

    BuildCorpusOpts bc;
    CLI::App* sub_bc = app.add_subcommand(
        "build-corpus", "align the upstream release into corpus splits");
    sub_bc->add_option("--input", bc.input, "upstream release directory")
        ->required();
    sub_bc->add_option("--out", bc.out, "corpus output directory");
    sub_bc->add_option("--seed", bc.seed, "split seed")->capture_default_str();
    sub_bc->add_option("--agreement-min", bc.agreement_min,
                       "annotators required per label")
        ->capture_default_str();
    sub_bc->add_option("--ratios", bc.ratios, "train dev test shares")
        ->expected(3);
    sub_bc->add_flag("--force", bc.force, "overwrite existing output");
    add_config_flag(sub_bc);
    sub_bc->callback([&bc] { cmd_build_corpus(bc); });

    BuildKbOpts bk;
    CLI::App* sub_bk = app.add_subcommand(
        "build-kb", "count concept statistics from the train split");
    sub_bk->add_option("--corpus", bk.corpus, "corpus directory");
    sub_bk->add_option("--task", bk.task, "eu|mu (emotion|motivation)")
        ->required();
    sub_bk->add_option("--out", bk.out, "kb output file");
    add_extraction_flags(sub_bk, bk.extraction);
    sub_bk->add_flag("--force", bk.force, "overwrite existing output");
    add_config_flag(sub_bk);
    sub_bk->callback([&bk] { cmd_build_kb(bk); });

    TrainOpts tr;
    CLI::App* sub_tr =
        app.add_subcommand("train", "train a classifier or the generator");
    sub_tr->add_option("--task", tr.task, "eu|mu|cag")->required();
    sub_tr->add_option("--corpus", tr.corpus, "corpus directory");
    sub_tr->add_option("--kb", tr.kb, "concept kb file (eu/mu)");
    sub_tr->add_option("--out", tr.out, "model output directory");
    sub_tr->add_option("--seed", tr.seed, "init and shuffle seed")
        ->capture_default_str();
    sub_tr->add_option("--epochs", tr.epochs, "training epochs")
        ->capture_default_str();
    sub_tr->add_option("--batch-size", tr.batch_size, "minibatch size")
        ->capture_default_str();
    sub_tr->add_option("--lr", tr.lr, "adam learning rate")
        ->capture_default_str();
    sub_tr->add_option("--warmup-frac", tr.warmup_frac,
                       "linear warm-up share of total steps")
        ->capture_default_str();
    sub_tr->add_option("--grad-clip", tr.grad_clip, "global gradient norm cap")
        ->capture_default_str();
    sub_tr->add_option("--hidden-dim", tr.hidden_dim,
                       "hidden width (0 = per-task default)")
        ->capture_default_str();
    sub_tr->add_option("--limit", tr.limit, "cap train instances (0 = all)")
        ->capture_default_str();
    sub_tr->add_option("--dev-limit", tr.dev_limit, "cap dev instances (0 = all)")
        ->capture_default_str();
    sub_tr->add_option("--vocab-min-count", tr.vocab_min_count,
                       "min token count kept in the vocabulary")
        ->capture_default_str();
    sub_tr->add_option("--vocab-max", tr.vocab_max, "max vocabulary size")
        ->capture_default_str();
    sub_tr->add_flag("--allow-out-of-range", tr.allow_out_of_range,
                     "accept hyperparameters outside the documented ranges");
    sub_tr->add_option("--voting", tr.voting, "gate|mlp combination mode")
        ->capture_default_str();
    sub_tr->add_option("--pooling", tr.pooling, "aver|max|sum concept pooling")
        ->capture_default_str();
    sub_tr->add_option("--mlp-hidden", tr.mlp_hidden, "mlp voter hidden width")
        ->capture_default_str();
    sub_tr->add_option("--max-tokens", tr.max_tokens,
                       "prompt token cap (eu/mu)")
        ->capture_default_str();
    add_extraction_flags(sub_tr, tr.extraction);
    sub_tr->add_option("--arch", tr.arch, "causal|enc-dec generator layout")
        ->capture_default_str();
    sub_tr->add_option("--embed-dim", tr.embed_dim, "generator embedding width")
        ->capture_default_str();
    sub_tr->add_option("--lambda1", tr.lambda1, "language-model loss weight")
        ->capture_default_str();
    sub_tr->add_option("--lambda2", tr.lambda2, "emotion loss weight")
        ->capture_default_str();
    sub_tr->add_option("--kl-epsilon", tr.kl_epsilon,
                       "emotion target smoothing")
        ->capture_default_str();
    sub_tr->add_option("--kl-direction", tr.kl_direction, "forward|reverse")
        ->capture_default_str();
    sub_tr->add_option("--max-input-tokens", tr.max_input_tokens,
                       "generator input token cap")
        ->capture_default_str();
    sub_tr->add_option("--max-output-tokens", tr.max_output_tokens,
                       "generator target token cap")
        ->capture_default_str();
    sub_tr->add_flag("--without-motivation", tr.without_motivation,
                     "drop the motivation block from generator prompts");
    sub_tr->add_flag("--force", tr.force, "overwrite existing output");
    add_config_flag(sub_tr);
    sub_tr->callback([&tr] { cmd_train(tr); });

    EvalOpts ev;
    CLI::App* sub_ev = app.add_subcommand("eval", "score a model on a split");
    sub_ev->add_option("--task", ev.task, "eu|mu|cag")->required();
    sub_ev->add_option("--corpus", ev.corpus, "corpus directory");
    sub_ev->add_option("--split", ev.split, "train|dev|test")
        ->capture_default_str();
    sub_ev->add_option("--model", ev.model, "model directory");
    sub_ev->add_option("--kb", ev.kb, "concept kb file (eu/mu)");
    sub_ev->add_option("--out", ev.out, "report output file");
    sub_ev->add_flag("--allow-mismatch", ev.allow_mismatch,
                     "evaluate despite kb/model lineage mismatch");
    sub_ev->add_option("--jobs", ev.jobs, "worker threads for eu/mu scoring")
        ->capture_default_str();
    sub_ev->add_option("--limit", ev.limit, "cap instances (0 = all)")
        ->capture_default_str();
    add_extraction_flags(sub_ev, ev.extraction);
    sub_ev->add_option("--max-input-tokens", ev.max_input_tokens,
                       "generator input token cap")
        ->capture_default_str();
    sub_ev->add_option("--max-output-tokens", ev.max_output_tokens,
                       "generator target token cap")
        ->capture_default_str();
    sub_ev->add_flag("--force", ev.force, "overwrite existing output");
    add_config_flag(sub_ev);
    sub_ev->callback([&ev] { cmd_eval(ev); });

    PredictOpts pr;
    CLI::App* sub_pr =
        app.add_subcommand("predict", "stream per-instance prediction lines");
    sub_pr->add_option("--task", pr.task, "eu|mu|cag")->required();
    sub_pr->add_option("--model", pr.model, "model directory");
    sub_pr->add_option("--kb", pr.kb, "concept kb file (eu/mu)");
    sub_pr->add_option("--input", pr.input, "corpus jsonl file");
    sub_pr->add_option("--corpus", pr.corpus,
                       "corpus directory (with --split) when --input is unset");
    sub_pr->add_option("--split", pr.split, "train|dev|test")
        ->capture_default_str();
    sub_pr->add_option("--out", pr.out, "output file, - for stdout")
        ->capture_default_str();
    sub_pr->add_flag("--explain", pr.explain,
                     "include per-concept label distributions");
    sub_pr->add_flag("--allow-mismatch", pr.allow_mismatch,
                     "predict despite kb/model lineage mismatch");
    sub_pr->add_option("--limit", pr.limit, "cap instances (0 = all)")
        ->capture_default_str();
    add_extraction_flags(sub_pr, pr.extraction);
    sub_pr->add_option("--decode", pr.decode,
                       "greedy|beam (default from the model sidecar)");
    sub_pr->add_option("--beam-width", pr.beam_width,
                       "beam width (0 = sidecar default)")
        ->capture_default_str();
    sub_pr->add_option("--max-output-tokens", pr.max_output_tokens,
                       "decode token cap (0 = sidecar default)")
        ->capture_default_str();
    sub_pr->add_option("--max-input-tokens", pr.max_input_tokens,
                       "generator input token cap")
        ->capture_default_str();
    sub_pr->add_option("--rerank-emotion", pr.rerank_emotion,
                       "rerank beam candidates toward this emotion");
    sub_pr->add_flag("--force", pr.force, "overwrite existing output");
    add_config_flag(sub_pr);
    sub_pr->callback([&pr] { cmd_predict(pr); });

    MatrixOpts mx;
    CLI::App* sub_mx = app.add_subcommand(
        "visualize-matrix",
        "export the motivation x emotion mean-probability matrix");
    sub_mx->add_option("--predictions", mx.predictions,
                       "emotion prediction jsonl from predict")
        ->required();
    sub_mx->add_option("--out", mx.out, "csv output file");
    sub_mx->add_option("--image", mx.image, "optional ppm heatmap file");
    sub_mx->add_flag("--force", mx.force, "overwrite existing output");
    add_config_flag(sub_mx);
    sub_mx->callback([&mx] { cmd_visualize_matrix(mx); });

    ExportHumanEvalOpts he;
    CLI::App* sub_he = app.add_subcommand(
        "export-human-eval", "write a blinded annotation sheet and its key");
    sub_he->add_option("--pairs", he.pairs,
                       "json array of {id, context, system_action, "
                       "baseline_action}")
        ->required();
    sub_he->add_option("--sheet", he.sheet, "annotator sheet output");
    sub_he->add_option("--key", he.key, "unblinding key output");
    sub_he->add_option("--seed", he.seed, "a/b shuffle seed")
        ->capture_default_str();
    sub_he->add_flag("--force", he.force, "overwrite existing output");
    add_config_flag(sub_he);
    sub_he->callback([&he] { cmd_export_human_eval(he); });

    ImportHumanEvalOpts ih;
    CLI::App* sub_ih = app.add_subcommand(
        "import-human-eval", "summarize completed annotation sheets");
    sub_ih->add_option("--sheets", ih.sheets, "completed sheet files")
        ->required()
        ->expected(-1);
    sub_ih->add_option("--key", ih.key, "unblinding key file")->required();
    sub_ih->add_option("--out", ih.out, "summary file, - for stdout")
        ->capture_default_str();
    sub_ih->add_flag("--force", ih.force, "overwrite existing output");
    add_config_flag(sub_ih);
    sub_ih->callback([&ih] { cmd_import_human_eval(ih); });

    try {
        const std::vector<std::string> merged = expand_config(args);
        std::vector<std::string> reversed(merged.rbegin(), merged.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        print_error_line("config", e.what());
        return 2;
    } catch (const error& e) {
        print_error_line(e.category(), e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        print_error_line("runtime", e.what());
        return 4;
    }
    return 0;
}

}  // namespace comma::cli
