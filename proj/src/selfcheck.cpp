#include "mga/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>

#include "mga/corpus.hpp"
#include "mga/encoders.hpp"
#include "mga/error.hpp"
#include "mga/evaluation.hpp"
#include "mga/io.hpp"
#include "mga/knowledge.hpp"
#include "mga/objectives.hpp"
#include "mga/rng.hpp"
#include "mga/tensor.hpp"
#include "mga/trainer.hpp"

namespace mga::selfcheck {

namespace {

CheckResult make_result(const std::string& name, bool pass, const std::string& detail) {
    return CheckResult{name, pass, detail};
}

CheckResult bound_check(const std::string& name, double value, double bound) {
    std::ostringstream detail;
    detail << value << " (bound " << bound << ")";
    return make_result(name, value <= bound, detail.str());
}

Tensor random_unit_rows(std::size_t rows, std::size_t dim, Rng& rng) {
    Tensor t({rows, dim});
    auto& v = t.mutable_values();
    for (std::size_t r = 0; r < rows; ++r) {
        double sq = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            double x = rng.uniform(-1.0, 1.0);
            v[r * dim + d] = x;
            sq += x * x;
        }
        double norm = std::sqrt(sq);
        for (std::size_t d = 0; d < dim; ++d) v[r * dim + d] /= norm;
    }
    return t;
}

// Random loss instances at the acceptance scale: batch 4, D = 8, S = 3 with
// one padded sentence, 4 patches per image, 2 prompt-pair classes.
struct LossInstance {
    static constexpr std::size_t n = 4, dim = 8, sentences = 3, patches = 4, classes = 2;
    std::vector<Tensor> inputs; // v, t, sent x4, patch x4, pos, neg, temp
    std::vector<std::vector<std::uint8_t>> masks;
    LabelMatrix labels;

    explicit LossInstance(Rng& rng) {
        inputs.push_back(random_unit_rows(n, dim, rng));
        inputs.push_back(random_unit_rows(n, dim, rng));
        for (std::size_t i = 0; i < n; ++i) {
            inputs.push_back(random_unit_rows(sentences, dim, rng));
            masks.push_back({1, 1, 0}); // one padded slot
        }
        for (std::size_t i = 0; i < n; ++i) {
            inputs.push_back(random_unit_rows(patches, dim, rng));
        }
        inputs.push_back(random_unit_rows(classes, dim, rng));
        inputs.push_back(random_unit_rows(classes, dim, rng));
        inputs.push_back(Tensor({1, 1}, {0.07}));
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<int> row;
            for (std::size_t c = 0; c < classes; ++c) {
                double u = rng.uniform();
                row.push_back(u < 0.2 ? -1 : (u < 0.6 ? 0 : 1));
            }
            labels.push_back(std::move(row));
        }
        labels[0][0] = 1;
        labels[1][1] = 0;
    }

    // xs layout must match `inputs`: 0 v, 1 t, 2..5 sentences, 6..9 patches,
    // 10 pos, 11 neg, 12 temperature. Rows are re-normalized in-graph so the
    // finite differences probe a well-defined function.
    static Tensor basic(std::vector<Tensor>& xs) {
        return contrastive_loss(l2_normalize(xs[0], 1), l2_normalize(xs[1], 1), xs[12], true);
    }
    Tensor cls(std::vector<Tensor>& xs) const {
        return classification_loss_logits(l2_normalize(xs[0], 1), l2_normalize(xs[10], 1),
                                          l2_normalize(xs[11], 1), xs[12], labels);
    }
    Tensor seg(std::vector<Tensor>& xs) const {
        std::vector<Tensor> sent, patch;
        for (std::size_t i = 0; i < n; ++i) sent.push_back(l2_normalize(xs[2 + i], 1));
        for (std::size_t i = 0; i < n; ++i) patch.push_back(l2_normalize(xs[6 + i], 1));
        return alignment_loss(sent, masks, patch, 0.1, 0.1);
    }
    Tensor all(std::vector<Tensor>& xs) const {
        return total_loss(basic(xs), cls(xs), seg(xs), LossWeights{});
    }
};

} // namespace

std::vector<CheckResult> gradient_fidelity() {
    std::vector<CheckResult> out;
    Rng rng(2024);
    LossInstance instance(rng);
    const double eps = 1e-6, bound = 1e-4;

    out.push_back(bound_check(
        "grad: contrastive loss vs central differences",
        grad_check([](Tape&, std::vector<Tensor>& xs) { return LossInstance::basic(xs); },
                   instance.inputs, eps),
        bound));
    out.push_back(bound_check(
        "grad: classification loss vs central differences",
        grad_check([&instance](Tape&, std::vector<Tensor>& xs) { return instance.cls(xs); },
                   instance.inputs, eps),
        bound));
    out.push_back(bound_check(
        "grad: alignment loss vs central differences",
        grad_check([&instance](Tape&, std::vector<Tensor>& xs) { return instance.seg(xs); },
                   instance.inputs, eps),
        bound));
    out.push_back(bound_check(
        "grad: combined loss vs central differences",
        grad_check([&instance](Tape&, std::vector<Tensor>& xs) { return instance.all(xs); },
                   instance.inputs, eps),
        bound));

    // padded sentence slots receive exactly zero gradient from the alignment loss
    {
        Tape tape;
        std::vector<Tensor> watched;
        for (const Tensor& x : instance.inputs) watched.push_back(tape.watch(x));
        Tensor loss = instance.seg(watched);
        auto grads = tape.backward(loss);
        double padded_abs = 0.0;
        for (std::size_t i = 0; i < LossInstance::n; ++i) {
            const Tensor& g = grads.at(watched[2 + i].node());
            for (std::size_t d = 0; d < LossInstance::dim; ++d) {
                padded_abs = std::max(padded_abs, std::abs(g.at2(2, d))); // masked row
            }
        }
        out.push_back(make_result("grad: padded sentence slots stay at exactly zero",
                                  padded_abs == 0.0, "max |grad| = " + std::to_string(padded_abs)));
    }
    return out;
}

std::vector<CheckResult> analytic_loss_values() {
    std::vector<CheckResult> out;
    {
        std::size_t n = 4, dim = 6;
        Tensor v({n, dim}), t({n, dim});
        for (std::size_t i = 0; i < n; ++i) {
            v.mutable_values()[i * dim] = 1.0;
            t.mutable_values()[i * dim + 1] = 1.0;
        }
        double value = contrastive_loss(v, t, Tensor({1, 1}, {0.25}), true).item();
        double err = std::abs(value - std::log(4.0));
        out.push_back(bound_check("analytic: uniform contrastive loss equals ln 4", err, 1e-9));
    }
    {
        Rng rng(7);
        Tensor sent = random_unit_rows(2, 6, rng);
        Tensor patch = random_unit_rows(3, 6, rng);
        double value = alignment_loss({sent}, {{1, 1}}, {patch}, 0.1, 0.1).item();
        out.push_back(bound_check("analytic: single-example alignment loss equals 0",
                                  std::abs(value), 0.0));
    }
    {
        double value = classification_loss(Tensor({1, 1}, {0.5}), {{1}}).item();
        double err = std::abs(value - std::log(2.0));
        out.push_back(bound_check("analytic: cross-entropy at p = 0.5 equals ln 2", err, 1e-12));
    }
    return out;
}

namespace {

// The full three-objective graph at a fixed sentence capacity; returns loss
// components and every parameter gradient.
std::pair<LossComponents, std::map<std::string, std::vector<double>>>
loss_and_gradients(const std::vector<PairedExample>& examples, const ModelParams& params,
                   std::size_t sentence_count, const std::vector<std::string>& class_names) {
    Tape tape;
    ModelParams graph = params;
    std::vector<std::pair<std::string, int>> nodes;
    for (auto& [name, tensor] : graph.named()) {
        *tensor = tape.watch(*tensor);
        nodes.emplace_back(name, tensor->node());
    }

    std::vector<Tensor> locals, globals_rows;
    for (const auto& ex : examples) {
        auto enc = encode_image(ex.image, graph.config, graph.visual);
        locals.push_back(enc.locals);
        globals_rows.push_back(enc.global);
    }
    Tensor v = concat(globals_rows, 0);

    std::vector<std::vector<std::string>> reports;
    LabelMatrix labels;
    for (const auto& ex : examples) {
        reports.push_back(split_report(ex.report));
        std::vector<int> row;
        for (const auto& cls : class_names) {
            auto it = ex.labels.find(cls);
            row.push_back(it == ex.labels.end() ? -1 : it->second);
        }
        labels.push_back(std::move(row));
    }
    std::vector<std::string> pos_texts, neg_texts, pool;
    for (const auto& cls : class_names) {
        pos_texts.push_back("There is " + cls + ".");
        neg_texts.push_back("There is no " + cls + ".");
        pool.push_back(pos_texts.back());
        pool.push_back(neg_texts.back());
    }
    auto text = encode_sentence_batch(reports, pool, graph.config, graph.text, sentence_count);

    std::vector<Tensor> sent_features;
    std::vector<std::vector<std::uint8_t>> masks;
    for (auto& r : text.reports) {
        sent_features.push_back(r.features);
        masks.push_back(r.mask);
    }
    Tensor basic = contrastive_loss(v, text.report_embeddings, graph.temperature, true);
    Tensor cls = classification_loss_logits(v, select_sentence_rows(text, pos_texts),
                                            select_sentence_rows(text, neg_texts),
                                            graph.temperature, labels);
    Tensor seg = alignment_loss(sent_features, masks, locals, 0.1, 0.1);
    Tensor total = total_loss(basic, cls, seg, LossWeights{});

    auto grads = tape.backward(total);
    std::map<std::string, std::vector<double>> by_name;
    for (auto& [name, node] : nodes) {
        auto it = grads.find(node);
        by_name[name] = it != grads.end() ? it->second.values() : std::vector<double>();
    }
    LossComponents components{basic.item(), cls.item(), seg.item(), total.item()};
    return {components, std::move(by_name)};
}

} // namespace

std::vector<CheckResult> masking_contract() {
    EncoderConfig cfg;
    cfg.dim = 16;
    cfg.hidden = 32;
    cfg.patch_side = 4;
    cfg.buckets = 256;
    ModelParams params = ModelParams::init(cfg, 11);

    SyntheticConfig synth;
    synth.classes = {"edema", "pneumonia"};
    synth.image_side = 16;
    synth.blob_radius_min = 2;
    synth.blob_radius_max = 3;
    auto examples = synth_generate(synth, 4, 13);

    // reports hold exactly two sentences: capacity 2 vs 4 appends two blanks
    auto [tight_losses, tight_grads] =
        loss_and_gradients(examples, params, 2, synth.classes);
    auto [padded_losses, padded_grads] =
        loss_and_gradients(examples, params, 4, synth.classes);

    std::vector<CheckResult> out;
    double loss_delta = std::max({std::abs(tight_losses.basic - padded_losses.basic),
                                  std::abs(tight_losses.cls - padded_losses.cls),
                                  std::abs(tight_losses.seg - padded_losses.seg),
                                  std::abs(tight_losses.total - padded_losses.total)});
    out.push_back(bound_check("masking: blank padding changes no loss value", loss_delta, 1e-12));

    double grad_delta = 0.0;
    for (auto& [name, grad] : tight_grads) {
        const auto& other = padded_grads.at(name);
        if (grad.size() != other.size()) {
            grad_delta = 1.0;
            break;
        }
        for (std::size_t i = 0; i < grad.size(); ++i) {
            grad_delta = std::max(grad_delta, std::abs(grad[i] - other[i]));
        }
    }
    out.push_back(make_result("masking: blank padding changes no parameter gradient",
                              grad_delta == 0.0,
                              "max |delta| = " + std::to_string(grad_delta)));
    return out;
}

std::vector<CheckResult> tfidf_oracle() {
    std::vector<CheckResult> out;
    std::vector<std::string> corpus = {"no pleural effusion", "small pleural effusion",
                                       "clear lungs"};
    Vocabulary vocab = tfidf_fit(corpus);
    auto weight = [&vocab](const SparseVec& vec, const std::string& term) {
        auto it = vocab.terms.find(term);
        if (it == vocab.terms.end()) return 0.0;
        for (auto [index, value] : vec) {
            if (index == it->second.index) return value;
        }
        return 0.0;
    };
    SparseVec first = tfidf_vector(corpus[0], vocab);
    SparseVec third = tfidf_vector(corpus[2], vocab);
    out.push_back(bound_check("tfidf: 'pleural' weight matches hand evaluation (0.135155)",
                              std::abs(weight(first, "pleural") - 0.1351550360360548), 1e-9));
    out.push_back(bound_check("tfidf: 'clear' weight matches hand evaluation (0.549306)",
                              std::abs(weight(third, "clear") - 0.5493061443340548), 1e-9));

    Vocabulary everywhere = tfidf_fit({"a b", "a c", "a d"});
    double ubiquitous = 0.0;
    for (auto [index, value] : tfidf_vector("a b", everywhere)) {
        if (index == everywhere.terms.at("a").index) ubiquitous = value;
    }
    out.push_back(make_result("tfidf: ubiquitous terms score exactly 0", ubiquitous == 0.0,
                              std::to_string(ubiquitous)));
    return out;
}

std::vector<CheckResult> clustering_retrieval() {
    std::vector<CheckResult> out;

    // objective monotone over 100 random runs
    {
        Rng rng(17);
        bool monotone = true;
        for (int run = 0; run < 100 && monotone; ++run) {
            std::size_t n = 20 + rng.index(40);
            std::size_t dim = 2 + rng.index(6);
            std::vector<SparseVec> points;
            for (std::size_t i = 0; i < n; ++i) {
                SparseVec v;
                for (std::uint32_t d = 0; d < dim; ++d) v.emplace_back(d, rng.uniform(-1, 1));
                points.push_back(std::move(v));
            }
            auto result = kmeans(points, dim, 2 + rng.index(5), 60, rng.next());
            for (std::size_t i = 1; i < result.objective_history.size(); ++i) {
                if (result.objective_history[i] > result.objective_history[i - 1]) {
                    monotone = false;
                    break;
                }
            }
        }
        out.push_back(make_result("kmeans: objective non-increasing over 100 random runs",
                                  monotone, monotone ? "all monotone" : "an increase occurred"));
    }

    // K = N distinct points
    {
        std::vector<SparseVec> points;
        for (std::uint32_t i = 0; i < 8; ++i) {
            points.push_back({{0, static_cast<double>(i)}, {1, 0.5 * i}});
        }
        auto result = kmeans(points, 2, 8, 40, 3);
        out.push_back(bound_check("kmeans: K = N distinct points gives objective 0",
                                  result.objective_history.back(), 0.0));
    }

    // retrieval against the exhaustive per-cluster argmax on a 200-sentence dictionary
    {
        EncoderConfig cfg;
        cfg.dim = 16;
        cfg.hidden = 32;
        cfg.patch_side = 4;
        cfg.buckets = 256;
        ModelParams params = ModelParams::init(cfg, 19);
        Rng rng(23);
        std::vector<std::string> words = {"heart", "lung",  "pleural", "edema", "clear",
                                          "mild",  "acute", "chronic", "right", "left"};
        std::vector<std::string> reports;
        for (int i = 0; i < 200; ++i) {
            std::string s;
            for (int w = 0; w < 4; ++w) {
                if (w) s += " ";
                s += words[rng.index(words.size())];
            }
            s += " s" + std::to_string(i) + ".";
            reports.push_back(s);
        }
        SentenceDictionary dict = build_dictionary(reports, 10, cfg, params.text, 29);
        bool match = true;
        for (int q = 0; q < 50 && match; ++q) {
            Tensor query = random_unit_rows(1, cfg.dim, rng);
            auto retrieved = generate_report(query, dict, 5);
            std::vector<double> sims(dict.sentences.size());
            for (std::size_t i = 0; i < sims.size(); ++i) {
                double dot = 0.0;
                for (std::size_t d = 0; d < cfg.dim; ++d) {
                    dot += query.at(d) * dict.embeddings.at2(i, d);
                }
                sims[i] = dot;
            }
            std::map<std::uint32_t, std::size_t> winner;
            for (std::size_t i = 0; i < sims.size(); ++i) {
                auto c = dict.cluster_of[i];
                if (!winner.count(c) || sims[i] > sims[winner[c]]) winner[c] = i;
            }
            std::vector<std::size_t> expected;
            for (auto [c, i] : winner) expected.push_back(i);
            std::sort(expected.begin(), expected.end(),
                      [&sims](std::size_t a, std::size_t b) {
                          if (sims[a] != sims[b]) return sims[a] > sims[b];
                          return a < b;
                      });
            expected.resize(std::min<std::size_t>(5, expected.size()));
            if (retrieved.size() != expected.size()) {
                match = false;
                break;
            }
            for (std::size_t r = 0; r < expected.size(); ++r) {
                if (retrieved[r].sentence_index != expected[r]) {
                    match = false;
                    break;
                }
            }
        }
        out.push_back(make_result(
            "retrieval: equals the brute-force per-cluster argmax on 50 queries", match,
            match ? "50/50 queries identical" : "divergence from the oracle"));
    }
    return out;
}

std::vector<CheckResult> metric_oracles() {
    std::vector<CheckResult> out;
    bool perfect = auc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0;
    bool inverted = auc({0.9, 0.1}, {0, 1}) == 0.0;
    bool tied = auc({0.3, 0.3, 0.3, 0.3}, {1, 0, 1, 0}) == 0.5;
    out.push_back(make_result("auc: perfect / inverted / tied rankings give 1, 0, 0.5",
                              perfect && inverted && tied,
                              perfect && inverted && tied ? "all exact" : "mismatch"));

    Rng rng(31);
    double macro = 0.0;
    const std::size_t classes = 4, n = 1000;
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            scores[i] = rng.uniform();
            labels[i] = rng.uniform() < 0.5 ? 1 : 0;
        }
        labels[0] = 1;
        labels[1] = 0;
        macro += auc(scores, labels);
    }
    macro /= static_cast<double>(classes);
    out.push_back(bound_check("auc: random scores over 1000 examples stay within 0.5 +- 0.05",
                              std::abs(macro - 0.5), 0.05));
    return out;
}

std::vector<CheckResult> reproducibility() {
    std::vector<CheckResult> out;
    namespace fs = std::filesystem;

    TrainConfig config;
    config.batch_size = 16;
    config.epochs = 2;
    config.learning_rate = 1e-3;
    config.sentence_count = 5;
    config.seed = 37;
    SyntheticConfig synth; // default 4 classes, 64x64
    auto corpus = synth_generate(synth, 64, 41);

    Checkpoint first = train(config, corpus);
    Checkpoint second = train(config, corpus);
    std::string json_first = checkpoint_to_json(first);
    bool identical = json_first == checkpoint_to_json(second);
    out.push_back(make_result("repro: two identical training runs agree bitwise", identical,
                              identical ? "checkpoints byte-identical" : "checkpoints differ"));

    PromptPairSet prompts = make_prompt_pairs(
        first.config.class_names, first.config.positive_prompt_template,
        first.config.negative_prompt_template, first.params.config, first.params.text);
    auto test_set = synth_generate(synth, 32, 43);
    std::string report_a = metrics_to_json(eval_classification(first.params, test_set, prompts));
    PromptPairSet prompts_b = make_prompt_pairs(
        second.config.class_names, second.config.positive_prompt_template,
        second.config.negative_prompt_template, second.params.config, second.params.text);
    std::string report_b =
        metrics_to_json(eval_classification(second.params, test_set, prompts_b));
    out.push_back(make_result("repro: metric reports of the two runs agree bitwise",
                              report_a == report_b, ""));

    fs::path dir = fs::temp_directory_path() / "mga_selfcheck";
    fs::create_directories(dir);
    std::string ckpt_path = (dir / "ckpt.json").string();
    save_checkpoint(first, ckpt_path);
    Checkpoint loaded = load_checkpoint(ckpt_path);
    bool ckpt_stable = checkpoint_to_json(loaded) == json_first;
    out.push_back(make_result("repro: checkpoint round-trip is bitwise stable", ckpt_stable, ""));

    std::vector<std::string> reports;
    for (const auto& ex : corpus) reports.push_back(ex.report);
    SentenceDictionary dict =
        build_dictionary(reports, 0, first.params.config, first.params.text);
    std::string dict_path = (dir / "dict.json").string();
    save_dictionary(dict, dict_path);
    SentenceDictionary dict_loaded = load_dictionary(dict_path);
    std::string dict_path2 = (dir / "dict2.json").string();
    save_dictionary(dict_loaded, dict_path2);
    bool dict_stable = read_text_file(dict_path) == read_text_file(dict_path2);
    out.push_back(make_result("repro: dictionary round-trip is bitwise stable", dict_stable, ""));
    fs::remove_all(dir);
    return out;
}

std::vector<CheckResult> run_all() {
    std::vector<CheckResult> out;
    for (auto* fn : {&gradient_fidelity, &analytic_loss_values, &masking_contract, &tfidf_oracle,
                     &clustering_retrieval, &metric_oracles, &reproducibility}) {
        auto part = fn();
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

bool all_passed(const std::vector<CheckResult>& results) {
    return std::all_of(results.begin(), results.end(),
                       [](const CheckResult& r) { return r.pass; });
}

} // namespace mga::selfcheck
