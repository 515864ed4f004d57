#include "mga/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"
#include "mga/error.hpp"
#include "mga/kernels.hpp"
#include "mga/objectives.hpp"
#include "mga/segmap.hpp"

namespace mga {

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw ContractError("auc: scores and labels must be non-empty and aligned");
    }
    std::size_t n_pos = 0, n_neg = 0;
    for (int l : labels) {
        if (l == 1) {
            ++n_pos;
        } else if (l == 0) {
            ++n_neg;
        } else {
            throw ContractError("auc: labels must be 0 or 1");
        }
    }
    if (n_pos == 0 || n_neg == 0) {
        throw DomainError("auc: undefined for single-class labels");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&scores](std::size_t a, std::size_t b) {
        return scores[a] < scores[b];
    });

    // average ranks across tied scores = half credit for ties
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t t = i; t <= j; ++t) {
            if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }
    double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

AccF1 accuracy_f1(const std::vector<double>& probs, const std::vector<int>& labels,
                  double threshold) {
    if (probs.size() != labels.size() || probs.empty()) {
        throw ContractError("accuracy_f1: probs and labels must be non-empty and aligned");
    }
    AccF1 out;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        bool pred = probs[i] >= threshold;
        bool truth = labels[i] == 1;
        if (pred && truth) ++out.tp;
        if (pred && !truth) ++out.fp;
        if (!pred && truth) ++out.fn;
        if (!pred && !truth) ++out.tn;
    }
    out.accuracy = static_cast<double>(out.tp + out.tn) / static_cast<double>(probs.size());
    double precision = out.tp + out.fp > 0
                           ? static_cast<double>(out.tp) / static_cast<double>(out.tp + out.fp)
                           : 0.0;
    double recall = out.tp + out.fn > 0
                        ? static_cast<double>(out.tp) / static_cast<double>(out.tp + out.fn)
                        : 0.0;
    out.f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
    return out;
}

MetricsReport eval_classification(const ModelParams& params,
                                  const std::vector<PairedExample>& dataset,
                                  const PromptPairSet& prompts, double threshold) {
    if (dataset.empty()) {
        throw ConfigError("eval_classification: empty dataset");
    }
    const std::size_t n = dataset.size();
    const std::size_t classes = prompts.class_names.size();

    // per-example probabilities; pure with frozen parameters, so parallel
    std::vector<std::vector<double>> probs(n);
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count())
    for (long long ei = 0; ei < static_cast<long long>(n); ++ei) {
        const auto e = static_cast<std::size_t>(ei);
        auto enc = encode_image(dataset[e].image, params.config, params.visual);
        Tensor p = classify_probs(enc.global, prompts.positive_embeddings,
                                  prompts.negative_embeddings, params.temperature);
        probs[e] = p.values();
    }

    MetricsReport report;
    report.n_examples = n;
    double acc_sum = 0.0, f1_sum = 0.0, auc_sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
        ClassMetrics cm;
        cm.name = prompts.class_names[c];
        std::vector<double> class_scores;
        std::vector<int> class_labels;
        for (std::size_t e = 0; e < n; ++e) {
            auto it = dataset[e].labels.find(cm.name);
            if (it == dataset[e].labels.end() || it->second == -1) continue;
            class_scores.push_back(probs[e][c]);
            class_labels.push_back(it->second);
            if (it->second == 1) {
                ++cm.n_positive;
            } else {
                ++cm.n_negative;
            }
        }
        cm.n_known = class_labels.size();
        cm.evaluable = cm.n_positive > 0 && cm.n_negative > 0;
        if (cm.evaluable) {
            AccF1 af = accuracy_f1(class_scores, class_labels, threshold);
            cm.accuracy = af.accuracy;
            cm.f1 = af.f1;
            cm.auc = auc(class_scores, class_labels);
            acc_sum += cm.accuracy;
            f1_sum += cm.f1;
            auc_sum += cm.auc;
            ++report.n_evaluable_classes;
        }
        report.per_class.push_back(std::move(cm));
    }
    if (report.n_evaluable_classes == 0) {
        throw DomainError("eval_classification: no class has both positives and negatives");
    }
    double denom = static_cast<double>(report.n_evaluable_classes);
    report.macro_accuracy = acc_sum / denom;
    report.macro_f1 = f1_sum / denom;
    report.macro_auc = auc_sum / denom;
    return report;
}

std::string metrics_to_json(const MetricsReport& report) {
    nlohmann::json doc;
    doc["n_examples"] = report.n_examples;
    doc["n_evaluable_classes"] = report.n_evaluable_classes;
    doc["macro"] = {{"accuracy", report.macro_accuracy},
                    {"f1", report.macro_f1},
                    {"auc", report.macro_auc}};
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& cm : report.per_class) {
        nlohmann::json entry = {{"class", cm.name},
                                {"evaluable", cm.evaluable},
                                {"n_known", cm.n_known},
                                {"n_positive", cm.n_positive},
                                {"n_negative", cm.n_negative}};
        if (cm.evaluable) {
            entry["accuracy"] = cm.accuracy;
            entry["f1"] = cm.f1;
            entry["auc"] = cm.auc;
        }
        per_class.push_back(std::move(entry));
    }
    doc["per_class"] = std::move(per_class);
    return doc.dump(2);
}

std::string metrics_table(const MetricsReport& report) {
    std::string out;
    char buf[128];
    std::snprintf(buf, sizeof(buf), "%-16s %8s %8s %8s\n", "class", "Acc", "F1", "AUC");
    out += buf;
    auto line = [&out, &buf](const std::string& name, double a, double f, double u) {
        std::snprintf(buf, sizeof(buf), "%-16s %8.2f %8.2f %8.2f\n", name.c_str(), 100.0 * a,
                      100.0 * f, 100.0 * u);
        out += buf;
    };
    for (const auto& cm : report.per_class) {
        if (cm.evaluable) {
            line(cm.name, cm.accuracy, cm.f1, cm.auc);
        } else {
            std::snprintf(buf, sizeof(buf), "%-16s %8s %8s %8s  (excluded)\n", cm.name.c_str(),
                          "-", "-", "-");
            out += buf;
        }
    }
    line("macro", report.macro_accuracy, report.macro_f1, report.macro_auc);
    return out;
}

SegReport eval_segmentation(const ModelParams& params, const std::vector<PairedExample>& dataset,
                            const PromptPairSet& prompts, double quantile) {
    if (dataset.empty()) {
        throw ConfigError("eval_segmentation: empty dataset");
    }
    struct Query {
        std::size_t example;
        std::size_t cls;
    };
    std::vector<Query> queries;
    for (std::size_t e = 0; e < dataset.size(); ++e) {
        for (std::size_t c = 0; c < prompts.class_names.size(); ++c) {
            for (const auto& box : dataset[e].boxes) {
                if (box.cls == prompts.class_names[c]) {
                    queries.push_back(Query{e, c});
                    break;
                }
            }
        }
    }
    if (queries.empty()) {
        throw DomainError("eval_segmentation: dataset has no boxes for the given classes");
    }

    std::vector<HeatmapEval> results(queries.size());
#pragma omp parallel for schedule(static) num_threads(kernels::thread_count())
    for (long long qi = 0; qi < static_cast<long long>(queries.size()); ++qi) {
        const auto q = static_cast<std::size_t>(qi);
        const auto& ex = dataset[queries[q].example];
        const std::string& cls = prompts.class_names[queries[q].cls];
        Heatmap hm = sentence_heatmap(prompts.positive_texts[queries[q].cls], ex.image, params);
        std::vector<BoundingBox> class_boxes;
        for (const auto& box : ex.boxes) {
            if (box.cls == cls) class_boxes.push_back(box);
        }
        results[q] = evaluate_heatmap(hm, class_boxes, quantile);
    }

    SegReport report;
    report.n_queries = queries.size();
    std::vector<std::size_t> hits(prompts.class_names.size(), 0);
    std::vector<double> iou_sum(prompts.class_names.size(), 0.0);
    std::vector<std::size_t> counts(prompts.class_names.size(), 0);
    for (std::size_t q = 0; q < queries.size(); ++q) {
        auto c = queries[q].cls;
        ++counts[c];
        hits[c] += results[q].pointing_hit ? 1 : 0;
        iou_sum[c] += results[q].iou;
    }
    double point_sum = 0.0, iou_macro_sum = 0.0;
    std::size_t scored = 0;
    for (std::size_t c = 0; c < prompts.class_names.size(); ++c) {
        if (counts[c] == 0) continue;
        SegClassMetrics cm;
        cm.name = prompts.class_names[c];
        cm.n_queries = counts[c];
        cm.pointing = static_cast<double>(hits[c]) / static_cast<double>(counts[c]);
        cm.mean_iou = iou_sum[c] / static_cast<double>(counts[c]);
        point_sum += cm.pointing;
        iou_macro_sum += cm.mean_iou;
        ++scored;
        report.per_class.push_back(std::move(cm));
    }
    report.macro_pointing = point_sum / static_cast<double>(scored);
    report.macro_iou = iou_macro_sum / static_cast<double>(scored);
    return report;
}

std::string seg_report_to_json(const SegReport& report) {
    nlohmann::json doc;
    doc["n_queries"] = report.n_queries;
    doc["macro"] = {{"pointing", report.macro_pointing}, {"mean_iou", report.macro_iou}};
    nlohmann::json per_class = nlohmann::json::array();
    for (const auto& cm : report.per_class) {
        per_class.push_back({{"class", cm.name},
                             {"pointing", cm.pointing},
                             {"mean_iou", cm.mean_iou},
                             {"n_queries", cm.n_queries}});
    }
    doc["per_class"] = std::move(per_class);
    return doc.dump(2);
}

} // namespace mga
