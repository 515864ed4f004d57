// Command-line front end: synthesize data, train, build the sentence
// dictionary, classify, generate reports, segment, and run the verification
// suites. Exit codes: 0 success, 1 user error, 2 internal error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "json.hpp"
#include "mga/corpus.hpp"
#include "mga/error.hpp"
#include "mga/evaluation.hpp"
#include "mga/io.hpp"
#include "mga/knowledge.hpp"
#include "mga/segmap.hpp"
#include "mga/selfcheck.hpp"
#include "mga/trainer.hpp"

namespace {

using namespace mga;

std::vector<std::string> resolve_class_names(const std::string& spec) {
    static const std::vector<std::string> pool = {
        "atelectasis", "edema",         "effusion",     "pneumonia",
        "cardiomegaly", "consolidation", "pneumothorax", "fracture"};
    if (spec.empty()) {
        return {pool.begin(), pool.begin() + 4};
    }
    // either a count into the built-in pool or a comma-separated name list
    if (spec.find(',') == std::string::npos &&
        spec.find_first_not_of("0123456789") == std::string::npos) {
        std::size_t n = std::stoul(spec);
        if (n < 2 || n > pool.size()) {
            throw ConfigError("--classes count must lie in [2, " + std::to_string(pool.size()) +
                              "]");
        }
        return {pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n)};
    }
    std::vector<std::string> names;
    std::string current;
    for (char ch : spec + ",") {
        if (ch == ',') {
            if (!current.empty()) names.push_back(current);
            current.clear();
        } else {
            current.push_back(ch);
        }
    }
    if (names.empty()) {
        throw ConfigError("--classes: no class names given");
    }
    return names;
}

struct SynthArgs {
    std::string out;
    std::string test_out;
    std::size_t n = 2400;
    std::string classes;
    std::uint64_t seed = 0;
    std::size_t side = 64;
    int radius_min = 5;
    int radius_max = 9;
    double noise = 0.2;
    double present_rate = 0.4;
    bool free_placement = false;
    double test_fraction = 1.0 / 6.0;
    std::uint64_t split_seed = 0;
};

int run_synth(const SynthArgs& args) {
    SyntheticConfig config;
    config.classes = resolve_class_names(args.classes);
    config.image_side = args.side;
    config.blob_radius_min = args.radius_min;
    config.blob_radius_max = args.radius_max;
    config.noise_amplitude = args.noise;
    config.present_rate = args.present_rate;
    config.fixed_quadrant = !args.free_placement;

    auto corpus = synth_generate(config, args.n, args.seed);
    if (args.test_out.empty()) {
        save_corpus(corpus, args.out);
        std::printf("wrote %zu examples to %s\n", corpus.size(), args.out.c_str());
    } else {
        auto [train_set, test_set] = split(corpus, args.test_fraction, args.split_seed);
        save_corpus(train_set, args.out);
        save_corpus(test_set, args.test_out);
        std::printf("wrote %zu train examples to %s and %zu test examples to %s\n",
                    train_set.size(), args.out.c_str(), test_set.size(), args.test_out.c_str());
    }
    return 0;
}

struct TrainArgs {
    std::string data;
    std::string out;
    TrainConfig config;
    std::string classes;
};

int run_train(const TrainArgs& args) {
    auto corpus = load_corpus(args.data);
    TrainConfig config = args.config;
    if (!args.classes.empty()) {
        config.class_names = resolve_class_names(args.classes);
    }
    Checkpoint ckpt = train(config, corpus);
    for (std::size_t e = 0; e < ckpt.history.size(); ++e) {
        const auto& h = ckpt.history[e];
        std::printf("epoch %zu: basic %.4f cls %.4f seg %.4f total %.4f\n", e + 1, h.basic,
                    h.cls, h.seg, h.total);
    }
    save_checkpoint(ckpt, args.out);
    std::printf("checkpoint written to %s\n", args.out.c_str());
    return 0;
}

struct BuildDictArgs {
    std::string data;
    std::string ckpt;
    std::string out;
    std::size_t k = 0;
    std::uint64_t seed = 0;
    std::size_t max_iter = 100;
};

int run_build_dict(const BuildDictArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.ckpt);
    auto corpus = load_corpus(args.data);
    std::vector<std::string> reports;
    reports.reserve(corpus.size());
    for (const auto& ex : corpus) reports.push_back(ex.report);
    SentenceDictionary dict = build_dictionary(reports, args.k, ckpt.params.config,
                                               ckpt.params.text, args.seed, args.max_iter);
    save_dictionary(dict, args.out);
    std::printf("dictionary with %zu sentences in %zu clusters written to %s\n",
                dict.sentences.size(), dict.nonempty_cluster_count(), args.out.c_str());
    return 0;
}

struct ClassifyArgs {
    std::string ckpt;
    std::string data;
    std::string classes;
    std::string out;
    double threshold = 0.5;
};

int run_classify(const ClassifyArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.ckpt);
    auto dataset = load_corpus(args.data);
    std::vector<std::string> class_names =
        args.classes.empty() ? ckpt.config.class_names : resolve_class_names(args.classes);
    PromptPairSet prompts =
        make_prompt_pairs(class_names, ckpt.config.positive_prompt_template,
                          ckpt.config.negative_prompt_template, ckpt.params.config,
                          ckpt.params.text);
    MetricsReport report = eval_classification(ckpt.params, dataset, prompts, args.threshold);
    std::fputs(metrics_table(report).c_str(), stdout);
    std::string json = metrics_to_json(report);
    if (args.out.empty()) {
        std::puts(json.c_str());
    } else {
        atomic_write_text(args.out, json);
        std::printf("metrics written to %s\n", args.out.c_str());
    }
    return 0;
}

struct ReportArgs {
    std::string ckpt;
    std::string dict;
    std::string data;
    std::size_t top = 5;
    std::size_t limit = 4;
    std::string out;
};

int run_report(const ReportArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.ckpt);
    SentenceDictionary dict = load_dictionary(args.dict);
    auto dataset = load_corpus(args.data);

    nlohmann::json all = nlohmann::json::array();
    std::size_t shown = 0;
    for (const auto& ex : dataset) {
        auto enc = encode_image(ex.image, ckpt.params.config, ckpt.params.visual);
        auto retrieved = generate_report(enc.global, dict, args.top);

        nlohmann::json entry;
        entry["id"] = ex.id;
        entry["reference"] = ex.report;
        nlohmann::json generated = nlohmann::json::array();
        for (const auto& r : retrieved) generated.push_back(r.sentence);
        entry["generated"] = std::move(generated);
        all.push_back(std::move(entry));

        if (args.limit == 0 || shown < args.limit) {
            ++shown;
            auto reference = split_report(ex.report);
            std::printf("%s\n", ex.id.c_str());
            std::printf("  %-55s | %s\n", "reference", "generated");
            std::size_t rows = std::max(reference.size(), retrieved.size());
            for (std::size_t r = 0; r < rows; ++r) {
                std::string left = r < reference.size() ? reference[r] : "";
                std::string right = r < retrieved.size() ? retrieved[r].sentence : "";
                std::printf("  %-55s | %s\n", left.c_str(), right.c_str());
            }
            std::printf("\n");
        }
    }
    if (!args.out.empty()) {
        atomic_write_text(args.out, all.dump(2));
        std::printf("reports written to %s\n", args.out.c_str());
    }
    return 0;
}

struct SegmentArgs {
    std::string ckpt;
    std::string data;
    std::string sentence;
    std::string out;
    double quantile = 0.95;
    std::size_t limit = 0;
};

int run_segment(const SegmentArgs& args) {
    Checkpoint ckpt = load_checkpoint(args.ckpt);
    auto dataset = load_corpus(args.data);
    std::filesystem::create_directories(args.out);

    // when the sentence names a known class, score against that class's boxes
    std::string sentence_class;
    for (const auto& cls : ckpt.config.class_names) {
        for (const auto& tok : tokenize(args.sentence)) {
            if (tok == cls) {
                sentence_class = cls;
                break;
            }
        }
    }

    nlohmann::json eval = nlohmann::json::array();
    std::size_t processed = 0;
    for (const auto& ex : dataset) {
        if (args.limit != 0 && processed >= args.limit) break;
        ++processed;
        Heatmap hm = sentence_heatmap(args.sentence, ex.image, ckpt.params);
        std::filesystem::path base = std::filesystem::path(args.out) / ex.id;
        write_heatmap_csv(hm, base.string() + ".csv");
        write_heatmap_pgm(hm, base.string() + ".pgm");

        nlohmann::json entry;
        entry["id"] = ex.id;
        std::vector<BoundingBox> boxes;
        for (const auto& b : ex.boxes) {
            if (sentence_class.empty() || b.cls == sentence_class) boxes.push_back(b);
        }
        if (!boxes.empty()) {
            HeatmapEval he = evaluate_heatmap(hm, boxes, args.quantile);
            entry["pointing_hit"] = he.pointing_hit;
            entry["iou"] = he.iou;
        }
        eval.push_back(std::move(entry));
    }
    nlohmann::json doc;
    doc["sentence"] = args.sentence;
    doc["quantile"] = args.quantile;
    doc["examples"] = std::move(eval);
    atomic_write_text((std::filesystem::path(args.out) / "eval.json").string(), doc.dump(2));
    std::printf("wrote %zu heatmaps to %s\n", processed, args.out.c_str());
    return 0;
}

int run_verify() {
    auto results = selfcheck::run_all();
    for (const auto& r : results) {
        std::printf("%s  %s%s%s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.empty() ? "" : ": ", r.detail.c_str());
    }
    bool ok = selfcheck::all_passed(results);
    std::printf("%zu checks, %s\n", results.size(), ok ? "all passed" : "FAILURES present");
    return ok ? 0 : 2;
}

} // namespace

int main(int argc, char** argv) {
    if (const char* env = std::getenv("MGA_THREADS")) {
        int n = std::atoi(env);
#ifdef _OPENMP
        if (n >= 1) omp_set_num_threads(n);
#else
        (void)n;
#endif
    }

    CLI::App app{"MGA: dual-encoder model for zero-shot classification, retrieval-based "
                 "report generation and similarity-heatmap segmentation"};
    app.require_subcommand(1);

    SynthArgs synth_args;
    auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic paired corpus");
    synth_cmd->add_option("--out", synth_args.out, "output corpus (jsonl)")->required();
    synth_cmd->add_option("--n", synth_args.n, "number of examples");
    synth_cmd->add_option("--classes", synth_args.classes, "class count or comma-separated names");
    synth_cmd->add_option("--seed", synth_args.seed, "generator seed");
    synth_cmd->add_option("--side", synth_args.side, "image side length");
    synth_cmd->add_option("--radius-min", synth_args.radius_min, "smallest blob radius");
    synth_cmd->add_option("--radius-max", synth_args.radius_max, "largest blob radius");
    synth_cmd->add_option("--noise", synth_args.noise, "uniform noise amplitude");
    synth_cmd->add_option("--present-rate", synth_args.present_rate, "per-class presence rate");
    synth_cmd->add_flag("--free-placement", synth_args.free_placement,
                        "place blobs anywhere instead of fixed quadrants");
    synth_cmd->add_option("--test-out", synth_args.test_out,
                          "also write a held-out test split to this path");
    synth_cmd->add_option("--test-fraction", synth_args.test_fraction,
                          "fraction for --test-out");
    synth_cmd->add_option("--split-seed", synth_args.split_seed, "seed for the split shuffle");

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "train the dual encoder");
    train_cmd->add_option("--data", train_args.data, "training corpus (jsonl)")->required();
    train_cmd->add_option("--out", train_args.out, "checkpoint output path")->required();
    train_cmd->add_option("--epochs", train_args.config.epochs, "training epochs");
    train_cmd->add_option("--batch", train_args.config.batch_size, "batch size (>= 2)");
    train_cmd->add_option("--lr", train_args.config.learning_rate, "Adam learning rate");
    train_cmd->add_option("--tau1", train_args.config.weights.tau1, "contrastive weight");
    train_cmd->add_option("--tau2", train_args.config.weights.tau2, "classification weight");
    train_cmd->add_option("--tau3", train_args.config.weights.tau3, "alignment weight");
    train_cmd->add_option("--sentences", train_args.config.sentence_count,
                          "sentence slots per report");
    train_cmd->add_option("--seed", train_args.config.seed, "initialization/shuffle seed");
    train_cmd->add_option("--dim", train_args.config.encoder.dim, "embedding dimension");
    train_cmd->add_option("--hidden", train_args.config.encoder.hidden, "mixer hidden width");
    train_cmd->add_option("--patch", train_args.config.encoder.patch_side, "patch side length");
    train_cmd->add_option("--buckets", train_args.config.encoder.buckets, "token hash buckets");
    train_cmd->add_option("--lambda1", train_args.config.temperatures.lambda1,
                          "attention temperature");
    train_cmd->add_option("--lambda2", train_args.config.temperatures.lambda2,
                          "match-score temperature");
    train_cmd->add_option("--temp-init", train_args.config.temperatures.temperature_init,
                          "initial contrastive temperature");
    train_cmd->add_flag(
        "--asymmetric",
        [&train_args](std::size_t) { train_args.config.symmetric_contrastive = false; },
        "use the one-directional (image to text) contrastive loss");
    train_cmd->add_option("--classes", train_args.classes,
                          "class count or names (default: derived from labels)");
    train_cmd->add_option("--pos-template", train_args.config.positive_prompt_template,
                          "positive prompt template");
    train_cmd->add_option("--neg-template", train_args.config.negative_prompt_template,
                          "negative prompt template");

    BuildDictArgs dict_args;
    auto* dict_cmd = app.add_subcommand("build-dict", "build the sentence dictionary");
    dict_cmd->add_option("--data", dict_args.data, "report corpus (jsonl)")->required();
    dict_cmd->add_option("--ckpt", dict_args.ckpt, "checkpoint path")->required();
    dict_cmd->add_option("--k", dict_args.k, "cluster count (0 = automatic)");
    dict_cmd->add_option("--out", dict_args.out, "dictionary output path")->required();
    dict_cmd->add_option("--kmeans-seed", dict_args.seed, "k-means seeding");
    dict_cmd->add_option("--max-iter", dict_args.max_iter, "k-means iteration cap");

    ClassifyArgs classify_args;
    auto* classify_cmd = app.add_subcommand("classify", "zero-shot prompt-pair classification");
    classify_cmd->add_option("--ckpt", classify_args.ckpt, "checkpoint path")->required();
    classify_cmd->add_option("--data", classify_args.data, "labeled corpus (jsonl)")->required();
    classify_cmd->add_option("--classes", classify_args.classes,
                             "class count or names (default: checkpoint classes)");
    classify_cmd->add_option("--out", classify_args.out, "metrics JSON output path");
    classify_cmd->add_option("--threshold", classify_args.threshold,
                             "decision threshold for Acc/F1");

    ReportArgs report_args;
    auto* report_cmd = app.add_subcommand("report", "retrieval-based report generation");
    report_cmd->add_option("--ckpt", report_args.ckpt, "checkpoint path")->required();
    report_cmd->add_option("--dict", report_args.dict, "sentence dictionary path")->required();
    report_cmd->add_option("--data", report_args.data, "corpus (jsonl)")->required();
    report_cmd->add_option("--top", report_args.top, "sentences per generated report");
    report_cmd->add_option("--limit", report_args.limit,
                           "examples printed side by side (0 = all)");
    report_cmd->add_option("--out", report_args.out, "JSON output path");

    SegmentArgs segment_args;
    auto* segment_cmd = app.add_subcommand("segment", "sentence-conditioned similarity heatmaps");
    segment_cmd->add_option("--ckpt", segment_args.ckpt, "checkpoint path")->required();
    segment_cmd->add_option("--data", segment_args.data, "corpus (jsonl)")->required();
    segment_cmd->add_option("--sentence", segment_args.sentence, "query sentence")->required();
    segment_cmd->add_option("--out", segment_args.out, "output directory")->required();
    segment_cmd->add_option("--quantile", segment_args.quantile, "IoU region quantile");
    segment_cmd->add_option("--limit", segment_args.limit, "max examples (0 = all)");

    auto* verify_cmd =
        app.add_subcommand("verify", "run the gradient checks and oracle suites");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (synth_cmd->parsed()) return run_synth(synth_args);
        if (train_cmd->parsed()) return run_train(train_args);
        if (dict_cmd->parsed()) return run_build_dict(dict_args);
        if (classify_cmd->parsed()) return run_classify(classify_args);
        if (report_cmd->parsed()) return run_report(report_args);
        if (segment_cmd->parsed()) return run_segment(segment_args);
        if (verify_cmd->parsed()) return run_verify();
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const IoError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
    return 1;
}
