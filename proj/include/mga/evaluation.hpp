#pragma once

#include <string>
#include <vector>

#include "mga/corpus.hpp"
#include "mga/encoders.hpp"
#include "mga/knowledge.hpp"

namespace mga {

// Rank-based (Mann-Whitney) AUC with half credit for ties. Requires at least
// one positive and one negative label.
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct AccF1 {
    double accuracy = 0.0;
    double f1 = 0.0;
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
};

// F1 is defined as 0 when precision + recall is 0.
AccF1 accuracy_f1(const std::vector<double>& probs, const std::vector<int>& labels,
                  double threshold = 0.5);

struct ClassMetrics {
    std::string name;
    double accuracy = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
    std::size_t n_known = 0;
    std::size_t n_positive = 0;
    std::size_t n_negative = 0;
    bool evaluable = false; // needs >= 1 positive and >= 1 negative
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    double macro_accuracy = 0.0;
    double macro_f1 = 0.0;
    double macro_auc = 0.0;
    std::size_t n_examples = 0;
    std::size_t n_evaluable_classes = 0;
};

// Zero-shot prompt-pair classification over a labeled dataset. Classes with
// no positives or no negatives are excluded from the macro averages.
MetricsReport eval_classification(const ModelParams& params,
                                  const std::vector<PairedExample>& dataset,
                                  const PromptPairSet& prompts, double threshold = 0.5);

std::string metrics_to_json(const MetricsReport& report);
std::string metrics_table(const MetricsReport& report);

struct SegClassMetrics {
    std::string name;
    double pointing = 0.0;
    double mean_iou = 0.0;
    std::size_t n_queries = 0;
};

struct SegReport {
    std::vector<SegClassMetrics> per_class;
    double macro_pointing = 0.0;
    double macro_iou = 0.0;
    std::size_t n_queries = 0;
};

// For every example/class with ground-truth boxes, query the class's positive
// prompt sentence and score the resulting heatmap.
SegReport eval_segmentation(const ModelParams& params, const std::vector<PairedExample>& dataset,
                            const PromptPairSet& prompts, double quantile = 0.95);

std::string seg_report_to_json(const SegReport& report);

} // namespace mga
