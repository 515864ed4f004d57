#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mga/tensor.hpp"

namespace mga {

// Shared dimensions of the dual encoder. `dim` is the joint embedding width
// used by both towers.
struct EncoderConfig {
    std::size_t dim = 64;
    std::size_t hidden = 128;
    std::size_t patch_side = 8;
    std::size_t buckets = 4096;
};

// Linear patch projection followed by a one-hidden-layer tanh mixer applied
// per patch.
struct VisualEncoderParams {
    Tensor patch_weight; // (patch_side^2) x dim
    Tensor patch_bias;   // 1 x dim
    Tensor mix_w1;       // dim x hidden
    Tensor mix_b1;       // 1 x hidden
    Tensor mix_w2;       // hidden x dim
    Tensor mix_b2;       // 1 x dim
};

// Hashed bag-of-tokens table followed by the same mixer shape, applied per
// sentence.
struct TextEncoderParams {
    Tensor table;  // buckets x dim
    Tensor mix_w1; // dim x hidden
    Tensor mix_b1; // 1 x hidden
    Tensor mix_w2; // hidden x dim
    Tensor mix_b2; // 1 x dim
};

struct ModelParams {
    EncoderConfig config;
    VisualEncoderParams visual;
    TextEncoderParams text;
    Tensor temperature; // 1x1 trainable contrastive temperature

    // Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] init, reproducible per seed.
    static ModelParams init(const EncoderConfig& config, std::uint64_t seed,
                            double temperature_init = 0.07);

    // Stable traversal order shared by the optimizer and the checkpoint codec.
    std::vector<std::pair<std::string, Tensor*>> named();
    std::vector<std::pair<std::string, const Tensor*>> named() const;
};

// Lowercase, split on non-alphanumeric runs, drop empties.
std::vector<std::string> tokenize(const std::string& sentence);

// FNV-1a over the token bytes, reduced modulo the bucket count.
std::size_t token_bucket(const std::string& token, std::size_t buckets);

struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels; // row-major, grayscale in [0, 1]
};

struct VisualEncoding {
    std::size_t grid_rows = 0;
    std::size_t grid_cols = 0;
    Tensor locals; // (grid_rows*grid_cols) x dim, unit rows
    Tensor global; // 1 x dim, unit
};

struct SentenceFeatures {
    Tensor features;                // S x dim; masked-off rows are all-zero
    std::vector<std::uint8_t> mask; // true for real sentences
};

// Works both with constant parameters (inference) and with parameters watched
// on a tape (training): gradients flow whenever the inputs are recorded.
VisualEncoding encode_image(const Image& image, const EncoderConfig& config,
                            const VisualEncoderParams& params);

// Batch text encoding. Duplicate sentences across the batch (and the extra
// pool) are embedded once and addressed through selector rows.
struct SentenceBatchEncoding {
    std::vector<std::string> unique_sentences;
    std::map<std::string, std::size_t> index_of;
    Tensor unique_features;               // U x dim, unit rows
    std::vector<SentenceFeatures> reports; // one S x dim block per report
    Tensor report_embeddings;             // N x dim, unit rows
};

SentenceBatchEncoding encode_sentence_batch(const std::vector<std::vector<std::string>>& reports,
                                            const std::vector<std::string>& extra_sentences,
                                            const EncoderConfig& config,
                                            const TextEncoderParams& params,
                                            std::size_t sentence_count);

// Rows of `batch.unique_features` for the given texts (which must be in the
// pool), as one texts.size() x dim tensor.
Tensor select_sentence_rows(const SentenceBatchEncoding& batch,
                            const std::vector<std::string>& texts);

// Single-report path: first min(|sentences|, S) rows are real, the rest are
// zero padding. The report embedding is the normalized mean of the real rows.
std::pair<SentenceFeatures, Tensor> encode_sentences(const std::vector<std::string>& sentences,
                                                     const EncoderConfig& config,
                                                     const TextEncoderParams& params,
                                                     std::size_t sentence_count);

// 1 x dim unit embedding of one sentence.
Tensor embed_sentence(const std::string& sentence, const EncoderConfig& config,
                      const TextEncoderParams& params);

} // namespace mga
