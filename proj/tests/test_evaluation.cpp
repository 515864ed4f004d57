#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "mga/corpus.hpp"
#include "mga/error.hpp"
#include "mga/evaluation.hpp"
#include "mga/rng.hpp"

using namespace mga;

namespace {

ModelParams tiny_model(std::uint64_t seed) {
    EncoderConfig cfg;
    cfg.dim = 8;
    cfg.hidden = 16;
    cfg.patch_side = 4;
    cfg.buckets = 64;
    return ModelParams::init(cfg, seed);
}

} // namespace

TEST_CASE("auc on perfect, inverted and tied rankings") {
    CHECK(auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
    CHECK(auc({0.9, 0.1}, {0, 1}) == 0.0);
    CHECK(auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
    CHECK_THROWS_AS(auc({0.5, 0.4}, {1, 1}), DomainError);
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
    Rng rng(3);
    std::vector<double> scores(50);
    std::vector<int> labels(50);
    for (std::size_t i = 0; i < 50; ++i) {
        scores[i] = rng.uniform();
        labels[i] = rng.uniform() < 0.4 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    std::vector<double> warped(50);
    for (std::size_t i = 0; i < 50; ++i) warped[i] = std::exp(4.0 * scores[i]) - 2.0;
    CHECK(auc(scores, labels) == auc(warped, labels));
}

TEST_CASE("random scores give AUC near one half over 1000 examples") {
    Rng rng(5);
    std::vector<double> scores(1000);
    std::vector<int> labels(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        scores[i] = rng.uniform();
        labels[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    double value = auc(scores, labels);
    CHECK(value > 0.45);
    CHECK(value < 0.55);
}

TEST_CASE("accuracy and F1 on the trivial cases") {
    AccF1 perfect = accuracy_f1({0.9, 0.8, 0.1, 0.2}, {1, 1, 0, 0});
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.f1 == 1.0);

    AccF1 nothing = accuracy_f1({0.1, 0.2, 0.3}, {1, 1, 1});
    CHECK(nothing.accuracy == 0.0);
    CHECK(nothing.f1 == 0.0);
}

TEST_CASE("accuracy and F1 match a hand-tallied confusion matrix") {
    // preds: 1 1 0 1 0 0 1 0 vs labels 1 0 0 1 1 0 1 1
    // tp=3 fp=1 tn=2 fn=2 -> acc 5/8, P=3/4, R=3/5, F1=2PR/(P+R)=2/3
    std::vector<double> probs = {0.8, 0.7, 0.2, 0.9, 0.4, 0.1, 0.6, 0.3};
    std::vector<int> labels = {1, 0, 0, 1, 1, 0, 1, 1};
    AccF1 result = accuracy_f1(probs, labels);
    CHECK(result.tp == 3);
    CHECK(result.fp == 1);
    CHECK(result.tn == 2);
    CHECK(result.fn == 2);
    CHECK(result.accuracy == doctest::Approx(5.0 / 8.0));
    CHECK(result.f1 == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("complementary probabilities invert the predictions exactly") {
    Rng rng(7);
    std::vector<double> probs(40);
    std::vector<int> labels(40);
    for (std::size_t i = 0; i < 40; ++i) {
        do {
            probs[i] = rng.uniform();
        } while (probs[i] == 0.5);
        labels[i] = rng.uniform() < 0.5 ? 1 : 0;
    }
    std::vector<double> flipped(40);
    std::vector<int> inverted(40);
    for (std::size_t i = 0; i < 40; ++i) {
        flipped[i] = 1.0 - probs[i];
        inverted[i] = 1 - labels[i];
    }
    AccF1 a = accuracy_f1(probs, labels);
    AccF1 b = accuracy_f1(flipped, inverted);
    CHECK(a.accuracy == doctest::Approx(b.accuracy));
    CHECK(a.tp == b.tn + (std::count(probs.begin(), probs.end(), 0.5) ? 0 : 0));
}

TEST_CASE("eval_classification aggregates per class and excludes degenerate ones") {
    ModelParams model = tiny_model(1);
    SyntheticConfig cfg;
    cfg.classes = {"edema", "pneumonia"};
    cfg.image_side = 16;
    cfg.blob_radius_min = 2;
    cfg.blob_radius_max = 3;
    auto dataset = synth_generate(cfg, 30, 3);
    // make one class degenerate: all labels positive
    for (auto& ex : dataset) {
        ex.labels["pneumonia"] = 1;
    }
    PromptPairSet prompts = make_prompt_pairs(cfg.classes, "There is {class}.",
                                              "There is no {class}.", model.config, model.text);
    MetricsReport report = eval_classification(model, dataset, prompts);
    CHECK(report.n_examples == 30);
    CHECK(report.n_evaluable_classes == 1);
    REQUIRE(report.per_class.size() == 2);
    CHECK(report.per_class[0].evaluable);
    CHECK(!report.per_class[1].evaluable);
    CHECK(report.per_class[1].n_positive == 30);
    CHECK(report.macro_auc == report.per_class[0].auc);

    std::string table = metrics_table(report);
    CHECK(table.find("excluded") != std::string::npos);
    CHECK(table.find("macro") != std::string::npos);

    // shuffle invariance of the macro metrics
    std::vector<PairedExample> shuffled(dataset.rbegin(), dataset.rend());
    MetricsReport again = eval_classification(model, shuffled, prompts);
    CHECK(again.macro_auc == report.macro_auc);
    CHECK(again.macro_accuracy == report.macro_accuracy);
    CHECK(again.macro_f1 == report.macro_f1);
}

TEST_CASE("eval_classification fails when no class is evaluable") {
    ModelParams model = tiny_model(2);
    SyntheticConfig cfg;
    cfg.classes = {"edema", "pneumonia"};
    cfg.image_side = 16;
    cfg.blob_radius_min = 2;
    cfg.blob_radius_max = 3;
    auto dataset = synth_generate(cfg, 6, 5);
    for (auto& ex : dataset) {
        ex.labels["edema"] = 1;
        ex.labels["pneumonia"] = 0;
    }
    PromptPairSet prompts = make_prompt_pairs(cfg.classes, "There is {class}.",
                                              "There is no {class}.", model.config, model.text);
    CHECK_THROWS_AS(eval_classification(model, dataset, prompts), DomainError);
}

TEST_CASE("eval_segmentation aggregates pointing and IoU per class") {
    ModelParams model = tiny_model(4);
    SyntheticConfig cfg;
    cfg.classes = {"edema", "pneumonia"};
    cfg.image_side = 16;
    cfg.blob_radius_min = 2;
    cfg.blob_radius_max = 3;
    auto dataset = synth_generate(cfg, 25, 7);
    PromptPairSet prompts = make_prompt_pairs(cfg.classes, "There is {class}.",
                                              "There is no {class}.", model.config, model.text);
    SegReport report = eval_segmentation(model, dataset, prompts, 0.9);
    std::size_t boxes_expected = 0;
    for (const auto& ex : dataset) boxes_expected += ex.boxes.size();
    CHECK(report.n_queries == boxes_expected); // one box per present class
    CHECK(report.macro_pointing >= 0.0);
    CHECK(report.macro_pointing <= 1.0);
    CHECK(report.macro_iou >= 0.0);
    CHECK(report.macro_iou <= 1.0);

    // no boxes anywhere -> error
    for (auto& ex : dataset) ex.boxes.clear();
    CHECK_THROWS_AS(eval_segmentation(model, dataset, prompts, 0.9), DomainError);
}
