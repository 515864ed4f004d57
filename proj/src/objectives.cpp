#include "mga/objectives.hpp"

#include <cmath>
#include <string>

#include "mga/error.hpp"

namespace mga {

namespace {

// 1/t with gradient support, via exp(-log(t)).
Tensor reciprocal(const Tensor& t) {
    return exp(scalar_multiply(log(t), -1.0));
}

// Scales every element by 1/temperature while keeping the temperature
// trainable: flatten, multiply by the 1x1 inverse, restore the shape.
Tensor scale_by_inverse_temperature(const Tensor& x, const Tensor& temperature) {
    if (temperature.size() != 1) {
        throw ContractError("temperature must be a 1x1 tensor, got shape " +
                            shape_str(temperature.shape()));
    }
    Tensor inv = reciprocal(reshape(temperature, {1, 1}));
    Tensor flat = reshape(x, {x.size(), 1});
    return reshape(matmul(flat, inv), x.shape());
}

Tensor identity_matrix(std::size_t n) {
    Tensor eye({n, n});
    auto& v = eye.mutable_values();
    for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
    return eye;
}

// Mean of the diagonal of log(softmax(logits, axis)), negated.
Tensor nce_direction(const Tensor& logits, std::size_t axis) {
    std::size_t n = logits.extent(0);
    Tensor picked = multiply(log(softmax(logits, axis)), identity_matrix(n));
    return scalar_multiply(sum(picked), -1.0 / static_cast<double>(n));
}

struct KnownCounts {
    std::size_t known = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

KnownCounts check_labels(const LabelMatrix& labels, const char* op) {
    KnownCounts out;
    out.rows = labels.size();
    if (out.rows == 0) {
        throw ContractError(std::string(op) + ": empty label matrix");
    }
    out.cols = labels[0].size();
    for (const auto& row : labels) {
        if (row.size() != out.cols) {
            throw ContractError(std::string(op) + ": ragged label matrix");
        }
        for (int v : row) {
            if (v != -1 && v != 0 && v != 1) {
                throw ConfigError(std::string(op) + ": label value " + std::to_string(v) +
                                  " outside {-1, 0, 1}");
            }
            if (v != -1) ++out.known;
        }
    }
    if (out.known == 0) {
        throw DomainError(std::string(op) + ": all labels unknown");
    }
    return out;
}

// N*C x 2 matrix of positive/negative prompt logits scaled by 1/temperature.
Tensor stacked_pair_logits(const Tensor& image_embeddings, const Tensor& positive_prompts,
                           const Tensor& negative_prompts, const Tensor& temperature) {
    if (positive_prompts.rank() != 2 || positive_prompts.shape() != negative_prompts.shape()) {
        throw ConfigError("classify: positive and negative prompt embeddings must pair up, got " +
                          shape_str(positive_prompts.shape()) + " vs " +
                          shape_str(negative_prompts.shape()));
    }
    Tensor pos_sim = matmul(image_embeddings, transpose(positive_prompts));
    Tensor neg_sim = matmul(image_embeddings, transpose(negative_prompts));
    std::size_t entries = pos_sim.size();
    Tensor stacked = concat({reshape(pos_sim, {entries, 1}), reshape(neg_sim, {entries, 1})}, 1);
    return scale_by_inverse_temperature(stacked, temperature);
}

} // namespace

LossWeights::LossWeights(double t1, double t2, double t3) : tau1(t1), tau2(t2), tau3(t3) {
    if (tau1 < 0.0 || tau2 < 0.0 || tau3 < 0.0 || tau1 + tau2 + tau3 <= 0.0) {
        throw ConfigError("loss weights must be non-negative with at least one positive");
    }
}

Tensor contrastive_loss(const Tensor& image_embeddings, const Tensor& text_embeddings,
                        const Tensor& temperature, bool symmetric) {
    if (image_embeddings.rank() != 2 || image_embeddings.shape() != text_embeddings.shape()) {
        throw ShapeError("contrastive_loss: embedding shapes differ: " +
                         shape_str(image_embeddings.shape()) + " vs " +
                         shape_str(text_embeddings.shape()));
    }
    if (image_embeddings.extent(0) < 2) {
        throw ContractError("contrastive_loss: batch of " +
                            std::to_string(image_embeddings.extent(0)) +
                            " has no negatives");
    }
    Tensor sims = matmul(image_embeddings, transpose(text_embeddings));
    Tensor logits = scale_by_inverse_temperature(sims, temperature);
    Tensor image_to_text = nce_direction(logits, 1);
    if (!symmetric) {
        return image_to_text;
    }
    Tensor text_to_image = nce_direction(logits, 0);
    return scalar_multiply(add(image_to_text, text_to_image), 0.5);
}

Tensor classify_probs(const Tensor& image_embeddings, const Tensor& positive_prompts,
                      const Tensor& negative_prompts, const Tensor& temperature) {
    Tensor logits = stacked_pair_logits(image_embeddings, positive_prompts,
                                        negative_prompts, temperature);
    Tensor pair_probs = softmax(logits, 1);
    Tensor positive_column = slice_rows(transpose(pair_probs), 0, 1);
    return reshape(positive_column, {image_embeddings.extent(0), positive_prompts.extent(0)});
}

Tensor classification_loss(const Tensor& probs, const LabelMatrix& labels) {
    KnownCounts counts = check_labels(labels, "classification_loss");
    if (probs.rank() != 2 || probs.extent(0) != counts.rows || probs.extent(1) != counts.cols) {
        throw ShapeError("classification_loss: probs shape " + shape_str(probs.shape()) +
                         " does not match " + std::to_string(counts.rows) + "x" +
                         std::to_string(counts.cols) + " labels");
    }
    Tensor positive_weight({counts.rows, counts.cols});
    Tensor negative_weight({counts.rows, counts.cols});
    {
        auto& pw = positive_weight.mutable_values();
        auto& nw = negative_weight.mutable_values();
        for (std::size_t i = 0; i < counts.rows; ++i) {
            for (std::size_t c = 0; c < counts.cols; ++c) {
                if (labels[i][c] == 1) pw[i * counts.cols + c] = 1.0;
                if (labels[i][c] == 0) nw[i * counts.cols + c] = 1.0;
            }
        }
    }
    Tensor ones = Tensor::full(probs.shape(), 1.0);
    Tensor term = add(multiply(log(probs), positive_weight),
                      multiply(log(subtract(ones, probs)), negative_weight));
    return scalar_multiply(sum(term), -1.0 / static_cast<double>(counts.known));
}

Tensor classification_loss_logits(const Tensor& image_embeddings, const Tensor& positive_prompts,
                                  const Tensor& negative_prompts, const Tensor& temperature,
                                  const LabelMatrix& labels) {
    KnownCounts counts = check_labels(labels, "classification_loss");
    Tensor logits = stacked_pair_logits(image_embeddings, positive_prompts,
                                        negative_prompts, temperature);
    Tensor log_probs = log(softmax(logits, 1));
    Tensor weights({counts.rows * counts.cols, 2});
    {
        auto& w = weights.mutable_values();
        for (std::size_t i = 0; i < counts.rows; ++i) {
            for (std::size_t c = 0; c < counts.cols; ++c) {
                std::size_t e = i * counts.cols + c;
                if (labels[i][c] == 1) w[e * 2] = 1.0;
                if (labels[i][c] == 0) w[e * 2 + 1] = 1.0;
            }
        }
    }
    return scalar_multiply(sum(multiply(log_probs, weights)),
                           -1.0 / static_cast<double>(counts.known));
}

Tensor local_match(const Tensor& sentence_features, const std::vector<std::uint8_t>& mask,
                   const Tensor& patch_features, double lambda1, double lambda2) {
    if (!(lambda1 > 0.0) || !(lambda2 > 0.0)) {
        throw ConfigError("local_match: lambda temperatures must be positive");
    }
    if (sentence_features.rank() != 2 || patch_features.rank() != 2 ||
        sentence_features.extent(1) != patch_features.extent(1)) {
        throw ShapeError("local_match: incompatible shapes " +
                         shape_str(sentence_features.shape()) + " vs " +
                         shape_str(patch_features.shape()));
    }
    if (mask.size() != sentence_features.extent(0)) {
        throw ContractError("local_match: mask length does not match sentence count");
    }
    std::size_t live = 0;
    for (auto m : mask) live += m ? 1 : 0;
    if (live == 0) {
        throw ContractError("local_match: zero masked-in sentences");
    }

    Tensor sims = matmul(sentence_features, transpose(patch_features));
    Tensor attention = softmax(scalar_multiply(sims, 1.0 / lambda1), 1);
    Tensor context = l2_normalize(matmul(attention, patch_features), 1);
    Tensor scores = sum(multiply(sentence_features, context), 1);

    Tensor mask_tensor({mask.size()});
    auto& mv = mask_tensor.mutable_values();
    for (std::size_t s = 0; s < mask.size(); ++s) mv[s] = mask[s] ? 1.0 : 0.0;
    Tensor masked = mask_fill(scores, mask_tensor, 0.0);
    return scalar_multiply(sum(masked), 1.0 / (lambda2 * static_cast<double>(live)));
}

Tensor alignment_loss(const std::vector<Tensor>& sentence_features,
                      const std::vector<std::vector<std::uint8_t>>& masks,
                      const std::vector<Tensor>& patch_features,
                      double lambda1, double lambda2) {
    const std::size_t n = sentence_features.size();
    if (n == 0) {
        throw ContractError("alignment_loss: empty batch");
    }
    if (masks.size() != n || patch_features.size() != n) {
        throw ContractError("alignment_loss: mismatched batch components");
    }
    // match_scores[k * n + i] = Z(sentences of report k, patches of image i)
    std::vector<Tensor> match_scores;
    match_scores.reserve(n * n);
    for (std::size_t k = 0; k < n; ++k) {
        for (std::size_t i = 0; i < n; ++i) {
            match_scores.push_back(
                local_match(sentence_features[k], masks[k], patch_features[i], lambda1, lambda2));
        }
    }
    Tensor score_matrix = reshape(concat(match_scores, 0), {n, n});
    // softmax over reports k for each image column i
    Tensor picked = multiply(log(softmax(score_matrix, 0)), identity_matrix(n));
    return scalar_multiply(sum(picked), -1.0 / static_cast<double>(n));
}

Tensor total_loss(const Tensor& basic, const Tensor& cls, const Tensor& seg,
                  const LossWeights& weights) {
    LossWeights validated(weights.tau1, weights.tau2, weights.tau3);
    auto check_finite = [](const Tensor& t, const char* name) {
        if (t.size() != 1 || !std::isfinite(t.item())) {
            throw DomainError(std::string("total_loss: non-finite ") + name + " component");
        }
    };
    check_finite(basic, "basic");
    check_finite(cls, "cls");
    check_finite(seg, "seg");
    return add(add(scalar_multiply(basic, validated.tau1), scalar_multiply(cls, validated.tau2)),
               scalar_multiply(seg, validated.tau3));
}

double prompt_orthogonality(const Tensor& prompt_embeddings) {
    if (prompt_embeddings.rank() != 2 || prompt_embeddings.extent(0) % 2 != 0) {
        throw ContractError("prompt_orthogonality: expected 2C x D embeddings, got " +
                            shape_str(prompt_embeddings.shape()));
    }
    const std::size_t classes = prompt_embeddings.extent(0) / 2;
    if (classes < 2) {
        throw ContractError("prompt_orthogonality: needs at least two classes");
    }
    const std::size_t dim = prompt_embeddings.extent(1);
    const auto& v = prompt_embeddings.values();
    auto cosine = [&](std::size_t a, std::size_t b) {
        double dot = 0, na = 0, nb = 0;
        for (std::size_t d = 0; d < dim; ++d) {
            double xa = v[a * dim + d], xb = v[b * dim + d];
            dot += xa * xb;
            na += xa * xa;
            nb += xb * xb;
        }
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t ca = 0; ca < classes; ++ca) {
        for (std::size_t cb = ca + 1; cb < classes; ++cb) {
            for (std::size_t ra : {ca, ca + classes}) {
                for (std::size_t rb : {cb, cb + classes}) {
                    total += std::abs(cosine(ra, rb));
                    ++count;
                }
            }
        }
    }
    return total / static_cast<double>(count);
}

} // namespace mga
