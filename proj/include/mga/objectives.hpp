#pragma once

#include <cstdint>
#include <vector>

#include "mga/tensor.hpp"

namespace mga {

// Weights of the combined training loss. At least one must be positive.
struct LossWeights {
    double tau1 = 1.0;
    double tau2 = 1.0;
    double tau3 = 1.0;

    LossWeights() = default;
    LossWeights(double t1, double t2, double t3);
};

// Softmax temperatures. The contrastive temperature is a trainable tensor
// (see ModelParams); these are its init/clamp bounds plus the two fixed
// attention and match-score temperatures of the local alignment score.
struct TemperatureParams {
    double temperature_init = 0.07;
    double temperature_min = 0.01;
    double temperature_max = 1.0;
    double lambda1 = 0.1;
    double lambda2 = 0.1;
};

// Label matrix entries: 1 present, 0 absent, -1 unknown.
using LabelMatrix = std::vector<std::vector<int>>;

// InfoNCE over cosine similarities of paired rows, mean over the batch.
// `symmetric` averages the image->text and text->image directions; when
// false only image->text is used.
Tensor contrastive_loss(const Tensor& image_embeddings, const Tensor& text_embeddings,
                        const Tensor& temperature, bool symmetric = true);

// Per class, the two-way softmax between the positive and negative prompt
// similarities. Returns N x C probabilities of the positive prompt.
Tensor classify_probs(const Tensor& image_embeddings, const Tensor& positive_prompts,
                      const Tensor& negative_prompts, const Tensor& temperature);

// Multi-label binary cross-entropy over the known labels; unknown labels
// contribute nothing.
Tensor classification_loss(const Tensor& probs, const LabelMatrix& labels);

// Same value as classification_loss(classify_probs(...)), computed from the
// pair log-softmax directly so saturated probabilities cannot produce
// log(1 - p) cancellation.
Tensor classification_loss_logits(const Tensor& image_embeddings, const Tensor& positive_prompts,
                                  const Tensor& negative_prompts, const Tensor& temperature,
                                  const LabelMatrix& labels);

// Aggregated similarity between each unmasked sentence and its
// attention-weighted patch context, scaled by 1/lambda2.
Tensor local_match(const Tensor& sentence_features, const std::vector<std::uint8_t>& mask,
                   const Tensor& patch_features, double lambda1, double lambda2);

// Cross-pair InfoNCE over the local match scores, mean over the batch.
// Padded sentences are excluded from every Z and receive zero gradient.
Tensor alignment_loss(const std::vector<Tensor>& sentence_features,
                      const std::vector<std::vector<std::uint8_t>>& masks,
                      const std::vector<Tensor>& patch_features,
                      double lambda1, double lambda2);

// tau1*basic + tau2*cls + tau3*seg. Throws when a component is not finite.
Tensor total_loss(const Tensor& basic, const Tensor& cls, const Tensor& seg,
                  const LossWeights& weights);

// Diagnostic: mean absolute pairwise cosine across classes for prompt
// embeddings laid out as C positive rows followed by C negative rows.
double prompt_orthogonality(const Tensor& prompt_embeddings);

} // namespace mga
