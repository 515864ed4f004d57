#include <cmath>
#include <filesystem>
#include <set>
#include <vector>

#include "doctest.h"
#include "mga/error.hpp"
#include "mga/evaluation.hpp"
#include "mga/io.hpp"
#include "mga/knowledge.hpp"
#include "mga/trainer.hpp"

using namespace mga;

namespace {

TrainConfig tiny_train_config() {
    TrainConfig config;
    config.batch_size = 4;
    config.epochs = 1;
    config.learning_rate = 1e-3;
    config.sentence_count = 3;
    config.seed = 5;
    config.encoder.dim = 8;
    config.encoder.hidden = 16;
    config.encoder.patch_side = 4;
    config.encoder.buckets = 64;
    return config;
}

SyntheticConfig tiny_corpus_config() {
    SyntheticConfig cfg;
    cfg.classes = {"edema", "pneumonia"};
    cfg.image_side = 16;
    cfg.blob_radius_min = 2;
    cfg.blob_radius_max = 3;
    return cfg;
}

std::vector<const PairedExample*> pointers(const std::vector<PairedExample>& examples,
                                           std::size_t count) {
    std::vector<const PairedExample*> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(&examples[i]);
    return out;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
    auto na = a.named();
    auto nb = b.named();
    for (std::size_t i = 0; i < na.size(); ++i) {
        if (na[i].second->values() != nb[i].second->values()) return false;
    }
    return true;
}

} // namespace

TEST_CASE("prepare_batch stacks, splits and masks") {
    TrainConfig config = tiny_train_config();
    config.class_names = {"edema", "pneumonia"};
    auto corpus = synth_generate(tiny_corpus_config(), 4, 1);
    Batch batch = prepare_batch(pointers(corpus, 4), config);

    CHECK(batch.pixels.extent(0) == 4);
    CHECK(batch.pixels.extent(1) == 16 * 16);
    REQUIRE(batch.sentences.size() == 4);
    REQUIRE(batch.masks.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        // two classes -> two sentences, sentence_count 3 -> one padded slot
        CHECK(batch.sentences[i].size() == 2);
        CHECK(batch.masks[i] == std::vector<std::uint8_t>{1, 1, 0});
        CHECK(batch.labels[i].size() == 2);
        for (int v : batch.labels[i]) {
            CHECK((v == 0 || v == 1));
        }
    }

    PairedExample empty_report = corpus[0];
    empty_report.report = "   ";
    std::vector<const PairedExample*> bad = {&empty_report, &corpus[1]};
    CHECK_THROWS_AS(prepare_batch(bad, config), ConfigError);
    CHECK_THROWS_AS(prepare_batch(pointers(corpus, 1), config), ContractError);
}

TEST_CASE("train_step is deterministic and pads with zero effect") {
    TrainConfig config = tiny_train_config();
    config.class_names = {"edema", "pneumonia"};
    auto corpus = synth_generate(tiny_corpus_config(), 4, 2);

    // identical runs give identical parameters and losses
    config.sentence_count = 2; // reports have exactly two sentences
    Batch tight = prepare_batch(pointers(corpus, 4), config);
    ModelParams p1 = ModelParams::init(config.encoder, config.seed);
    ModelParams p2 = ModelParams::init(config.encoder, config.seed);
    AdamState o1 = AdamState::init(p1);
    AdamState o2 = AdamState::init(p2);
    LossComponents l1 = train_step(tight, p1, o1, config);
    LossComponents l2 = train_step(tight, p2, o2, config);
    CHECK(l1.total == l2.total);
    CHECK(params_equal(p1, p2));

    // appending blank padded sentence slots changes nothing at all
    TrainConfig padded_config = config;
    padded_config.sentence_count = 4;
    Batch padded = prepare_batch(pointers(corpus, 4), padded_config);
    ModelParams p3 = ModelParams::init(config.encoder, config.seed);
    AdamState o3 = AdamState::init(p3);
    LossComponents l3 = train_step(padded, p3, o3, padded_config);
    CHECK(l3.basic == l1.basic);
    CHECK(l3.cls == l1.cls);
    CHECK(l3.seg == l1.seg);
    CHECK(l3.total == l1.total);
    CHECK(params_equal(p1, p3));
}

TEST_CASE("zeroed loss weights contribute exactly nothing to gradients") {
    TrainConfig config = tiny_train_config();
    config.class_names = {"edema", "pneumonia"};
    config.weights = LossWeights(1, 0, 0);
    auto corpus = synth_generate(tiny_corpus_config(), 4, 3);
    Batch batch = prepare_batch(pointers(corpus, 4), config);

    ModelParams full = ModelParams::init(config.encoder, config.seed);
    AdamState of = AdamState::init(full);
    train_step(batch, full, of, config);

    // reference: basic loss alone through the same machinery
    ModelParams ref = ModelParams::init(config.encoder, config.seed);
    {
        Tape tape;
        ModelParams graph = ref;
        std::vector<int> nodes;
        for (auto& [name, tensor] : graph.named()) {
            (void)name;
            *tensor = tape.watch(*tensor);
            nodes.push_back(tensor->node());
        }
        std::vector<Tensor> rows;
        for (const PairedExample* ex : batch.examples) {
            rows.push_back(encode_image(ex->image, config.encoder, graph.visual).global);
        }
        Tensor v = concat(rows, 0);
        auto text = encode_sentence_batch(batch.sentences, {}, config.encoder, graph.text,
                                          config.sentence_count);
        Tensor basic = contrastive_loss(v, text.report_embeddings, graph.temperature, true);
        auto grads = tape.backward(basic);

        AdamState optimizer = AdamState::init(ref);
        optimizer.step = 1;
        double bc1 = 1.0 - optimizer.beta1;
        double bc2 = 1.0 - optimizer.beta2;
        auto named = ref.named();
        for (std::size_t pi = 0; pi < named.size(); ++pi) {
            auto it = grads.find(nodes[pi]);
            auto& values = named[pi].second->mutable_values();
            for (std::size_t j = 0; j < values.size(); ++j) {
                double g = it != grads.end() ? it->second.at(j) : 0.0;
                double m = (1.0 - optimizer.beta1) * g / bc1;
                double s = (1.0 - optimizer.beta2) * g * g / bc2;
                values[j] -= config.learning_rate * m / (std::sqrt(s) + optimizer.epsilon);
            }
        }
        auto& temp = ref.temperature.mutable_values();
        temp[0] = std::clamp(temp[0], config.temperatures.temperature_min,
                             config.temperatures.temperature_max);
    }
    CHECK(params_equal(full, ref));
}

TEST_CASE("Adam leaves parameters with zero gradient unchanged") {
    TrainConfig config = tiny_train_config();
    config.class_names = {"edema", "pneumonia"};
    auto corpus = synth_generate(tiny_corpus_config(), 4, 4);
    Batch batch = prepare_batch(pointers(corpus, 4), config);

    ModelParams params = ModelParams::init(config.encoder, config.seed);
    // buckets never touched by any batch token keep their initial rows
    std::set<std::size_t> used;
    auto note = [&](const std::string& text) {
        for (const auto& tok : tokenize(text)) used.insert(token_bucket(tok, config.encoder.buckets));
    };
    for (const auto& sentences : batch.sentences) {
        for (const auto& s : sentences) note(s);
    }
    for (const auto& cls : config.class_names) {
        note("There is " + cls + ".");
        note("There is no " + cls + ".");
    }
    std::vector<double> before = params.text.table.values();
    AdamState optimizer = AdamState::init(params);
    train_step(batch, params, optimizer, config);
    const auto& after = params.text.table.values();
    std::size_t untouched = 0;
    for (std::size_t b = 0; b < config.encoder.buckets; ++b) {
        if (used.count(b)) continue;
        ++untouched;
        for (std::size_t d = 0; d < config.encoder.dim; ++d) {
            CHECK(after[b * config.encoder.dim + d] == before[b * config.encoder.dim + d]);
        }
    }
    CHECK(untouched > 0);
}

TEST_CASE("total loss decreases over the first 50 steps") {
    TrainConfig config = tiny_train_config();
    config.class_names = {"edema", "pneumonia"};
    config.learning_rate = 3e-3;
    auto corpus = synth_generate(tiny_corpus_config(), 16, 6);

    ModelParams params = ModelParams::init(config.encoder, config.seed);
    AdamState optimizer = AdamState::init(params);
    std::vector<double> totals;
    for (int step = 0; step < 50; ++step) {
        std::vector<const PairedExample*> examples;
        for (std::size_t i = 0; i < config.batch_size; ++i) {
            examples.push_back(&corpus[(step * config.batch_size + i) % corpus.size()]);
        }
        Batch batch = prepare_batch(examples, config);
        totals.push_back(train_step(batch, params, optimizer, config, step).total);
    }
    double first = (totals[0] + totals[1] + totals[2] + totals[3]) / 4.0;
    double last = (totals[46] + totals[47] + totals[48] + totals[49]) / 4.0;
    CHECK(last < first);
}

TEST_CASE("train bookkeeping: epochs, history, class derivation") {
    TrainConfig config = tiny_train_config();
    auto corpus = synth_generate(tiny_corpus_config(), 12, 7);

    SUBCASE("zero epochs returns the initialization") {
        config.epochs = 0;
        Checkpoint ckpt = train(config, corpus);
        ModelParams fresh = ModelParams::init(config.encoder, config.seed,
                                              config.temperatures.temperature_init);
        CHECK(params_equal(ckpt.params, fresh));
        CHECK(ckpt.history.empty());
        CHECK(ckpt.config.class_names == std::vector<std::string>{"edema", "pneumonia"});
    }
    SUBCASE("history length equals the epoch count") {
        config.epochs = 3;
        Checkpoint ckpt = train(config, corpus);
        CHECK(ckpt.history.size() == 3);
    }
    SUBCASE("unlabeled corpora need explicit class names") {
        auto unlabeled = corpus;
        for (auto& ex : unlabeled) ex.labels.clear();
        CHECK_THROWS_AS(train(config, unlabeled), ConfigError);
    }
}

TEST_CASE("training is reproducible bitwise") {
    TrainConfig config = tiny_train_config();
    config.epochs = 2;
    auto corpus = synth_generate(tiny_corpus_config(), 12, 8);
    Checkpoint a = train(config, corpus);
    Checkpoint b = train(config, corpus);
    CHECK(checkpoint_to_json(a) == checkpoint_to_json(b));
}

TEST_CASE("checkpoints round-trip bitwise and validate versions") {
    TrainConfig config = tiny_train_config();
    config.epochs = 1;
    auto corpus = synth_generate(tiny_corpus_config(), 8, 9);
    Checkpoint ckpt = train(config, corpus);

    std::string path = temp_path("mga_ckpt_test.json");
    save_checkpoint(ckpt, path);
    Checkpoint loaded = load_checkpoint(path);
    CHECK(params_equal(ckpt.params, loaded.params));
    CHECK(loaded.history.size() == ckpt.history.size());
    CHECK(loaded.config.class_names == ckpt.config.class_names);
    CHECK(checkpoint_to_json(loaded) == checkpoint_to_json(ckpt));

    // evaluation metrics are identical before save and after load
    auto test_set = synth_generate(tiny_corpus_config(), 10, 10);
    PromptPairSet prompts_a =
        make_prompt_pairs(ckpt.config.class_names, ckpt.config.positive_prompt_template,
                          ckpt.config.negative_prompt_template, ckpt.params.config,
                          ckpt.params.text);
    PromptPairSet prompts_b =
        make_prompt_pairs(loaded.config.class_names, loaded.config.positive_prompt_template,
                          loaded.config.negative_prompt_template, loaded.params.config,
                          loaded.params.text);
    MetricsReport ra = eval_classification(ckpt.params, test_set, prompts_a);
    MetricsReport rb = eval_classification(loaded.params, test_set, prompts_b);
    CHECK(ra.macro_accuracy == rb.macro_accuracy);
    CHECK(ra.macro_f1 == rb.macro_f1);
    CHECK(ra.macro_auc == rb.macro_auc);

    // truncated file
    std::string truncated = read_text_file(path).substr(0, 60);
    atomic_write_text(path, truncated);
    CHECK_THROWS_AS(load_checkpoint(path), IoError);

    // version mismatch
    atomic_write_text(path, R"({"version":2})");
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), IoError);
    std::filesystem::remove(path);
}
