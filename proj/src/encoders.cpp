#include "mga/encoders.hpp"

#include <cctype>
#include <cmath>

#include "mga/error.hpp"
#include "mga/rng.hpp"

namespace mga {

namespace {

Tensor uniform_init(Shape shape, std::size_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Tensor t(std::move(shape));
    for (double& v : t.mutable_values()) v = rng.uniform(-bound, bound);
    return t;
}

// rows x 1 ones column times a 1 x dim bias row broadcasts the bias with
// the operation set we have.
Tensor add_bias(const Tensor& x, const Tensor& bias) {
    Tensor ones = Tensor::full({x.extent(0), 1}, 1.0);
    return add(x, matmul(ones, bias));
}

Tensor mixer(const Tensor& x, const Tensor& w1, const Tensor& b1,
             const Tensor& w2, const Tensor& b2) {
    Tensor h = tanh(add_bias(matmul(x, w1), b1));
    return add_bias(matmul(h, w2), b2);
}

} // namespace

ModelParams ModelParams::init(const EncoderConfig& config, std::uint64_t seed,
                              double temperature_init) {
    if (config.dim == 0 || config.hidden == 0 || config.patch_side == 0 || config.buckets == 0) {
        throw ConfigError("encoder config: all dimensions must be positive");
    }
    Rng rng(seed);
    std::size_t pp = config.patch_side * config.patch_side;
    ModelParams p;
    p.config = config;
    p.visual.patch_weight = uniform_init({pp, config.dim}, pp, rng);
    p.visual.patch_bias = uniform_init({1, config.dim}, pp, rng);
    p.visual.mix_w1 = uniform_init({config.dim, config.hidden}, config.dim, rng);
    p.visual.mix_b1 = uniform_init({1, config.hidden}, config.dim, rng);
    p.visual.mix_w2 = uniform_init({config.hidden, config.dim}, config.hidden, rng);
    p.visual.mix_b2 = uniform_init({1, config.dim}, config.hidden, rng);
    p.text.table = uniform_init({config.buckets, config.dim}, config.dim, rng);
    p.text.mix_w1 = uniform_init({config.dim, config.hidden}, config.dim, rng);
    p.text.mix_b1 = uniform_init({1, config.hidden}, config.dim, rng);
    p.text.mix_w2 = uniform_init({config.hidden, config.dim}, config.hidden, rng);
    p.text.mix_b2 = uniform_init({1, config.dim}, config.hidden, rng);
    p.temperature = Tensor({1, 1}, {temperature_init});
    return p;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
    return {
        {"visual.patch_weight", &visual.patch_weight},
        {"visual.patch_bias", &visual.patch_bias},
        {"visual.mix_w1", &visual.mix_w1},
        {"visual.mix_b1", &visual.mix_b1},
        {"visual.mix_w2", &visual.mix_w2},
        {"visual.mix_b2", &visual.mix_b2},
        {"text.table", &text.table},
        {"text.mix_w1", &text.mix_w1},
        {"text.mix_b1", &text.mix_b1},
        {"text.mix_w2", &text.mix_w2},
        {"text.mix_b2", &text.mix_b2},
        {"temperature", &temperature},
    };
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
    auto mutable_view = const_cast<ModelParams*>(this)->named();
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(mutable_view.size());
    for (auto& [name, ptr] : mutable_view) out.emplace_back(name, ptr);
    return out;
}

std::vector<std::string> tokenize(const std::string& sentence) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : sentence) {
        auto uc = static_cast<unsigned char>(ch);
        if (std::isalnum(uc)) {
            current.push_back(static_cast<char>(std::tolower(uc)));
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

std::size_t token_bucket(const std::string& token, std::size_t buckets) {
    std::uint64_t hash = 14695981039346656037ull;
    for (char ch : token) {
        hash ^= static_cast<unsigned char>(ch);
        hash *= 1099511628211ull;
    }
    return static_cast<std::size_t>(hash % buckets);
}

VisualEncoding encode_image(const Image& image, const EncoderConfig& config,
                            const VisualEncoderParams& params) {
    const std::size_t ps = config.patch_side;
    if (image.height == 0 || image.width == 0 || image.height % ps != 0 || image.width % ps != 0) {
        throw ConfigError("encode_image: image " + std::to_string(image.height) + "x" +
                          std::to_string(image.width) + " not divisible by patch side " +
                          std::to_string(ps));
    }
    if (image.pixels.size() != image.height * image.width) {
        throw ConfigError("encode_image: pixel count does not match dimensions");
    }
    const std::size_t rows = image.height / ps;
    const std::size_t cols = image.width / ps;
    const std::size_t patches = rows * cols;

    Tensor patch_matrix({patches, ps * ps});
    auto& pm = patch_matrix.mutable_values();
    for (std::size_t gr = 0; gr < rows; ++gr) {
        for (std::size_t gc = 0; gc < cols; ++gc) {
            double* dst = pm.data() + (gr * cols + gc) * ps * ps;
            for (std::size_t py = 0; py < ps; ++py) {
                const double* src = image.pixels.data() + (gr * ps + py) * image.width + gc * ps;
                for (std::size_t px = 0; px < ps; ++px) {
                    dst[py * ps + px] = src[px];
                }
            }
        }
    }

    Tensor projected = add_bias(matmul(patch_matrix, params.patch_weight), params.patch_bias);
    Tensor mixed = mixer(projected, params.mix_w1, params.mix_b1, params.mix_w2, params.mix_b2);
    Tensor locals = l2_normalize(mixed, 1);
    Tensor global = l2_normalize(reshape(mean(locals, 0), {1, config.dim}), 1);

    VisualEncoding out;
    out.grid_rows = rows;
    out.grid_cols = cols;
    out.locals = std::move(locals);
    out.global = std::move(global);
    return out;
}

SentenceBatchEncoding encode_sentence_batch(const std::vector<std::vector<std::string>>& reports,
                                            const std::vector<std::string>& extra_sentences,
                                            const EncoderConfig& config,
                                            const TextEncoderParams& params,
                                            std::size_t sentence_count) {
    if (sentence_count == 0) {
        throw ConfigError("encode_sentence_batch: sentence count must be >= 1");
    }
    SentenceBatchEncoding out;
    auto intern = [&out](const std::string& s) {
        auto [it, inserted] = out.index_of.emplace(s, out.unique_sentences.size());
        if (inserted) out.unique_sentences.push_back(s);
        return it->second;
    };

    std::vector<std::vector<std::size_t>> report_indices;
    report_indices.reserve(reports.size());
    for (const auto& sentences : reports) {
        if (sentences.empty()) {
            throw ConfigError("encode_sentence_batch: a report must contain at least one sentence");
        }
        std::vector<std::size_t> idx;
        std::size_t keep = std::min(sentences.size(), sentence_count);
        idx.reserve(keep);
        for (std::size_t s = 0; s < keep; ++s) idx.push_back(intern(sentences[s]));
        report_indices.push_back(std::move(idx));
    }
    for (const std::string& s : extra_sentences) intern(s);

    const std::size_t uniques = out.unique_sentences.size();

    // Hashed bag-of-tokens rows: bucket counts normalized by token count, so
    // the matmul with the table yields the mean token embedding per sentence.
    Tensor indicator({uniques, config.buckets});
    {
        auto& ind = indicator.mutable_values();
        for (std::size_t u = 0; u < uniques; ++u) {
            auto tokens = tokenize(out.unique_sentences[u]);
            if (tokens.empty()) continue;
            double w = 1.0 / static_cast<double>(tokens.size());
            double* row = ind.data() + u * config.buckets;
            for (const auto& tok : tokens) row[token_bucket(tok, config.buckets)] += w;
        }
    }

    Tensor bags = matmul(indicator, params.table);
    Tensor mixed = mixer(bags, params.mix_w1, params.mix_b1, params.mix_w2, params.mix_b2);
    out.unique_features = l2_normalize(mixed, 1);

    std::vector<Tensor> embedding_rows;
    embedding_rows.reserve(reports.size());
    for (const auto& idx : report_indices) {
        Tensor selector({sentence_count, uniques});
        Tensor averager({1, uniques});
        {
            auto& sel = selector.mutable_values();
            auto& avg = averager.mutable_values();
            double w = 1.0 / static_cast<double>(idx.size());
            for (std::size_t s = 0; s < idx.size(); ++s) {
                sel[s * uniques + idx[s]] = 1.0;
                avg[idx[s]] += w;
            }
        }
        SentenceFeatures feats;
        feats.features = matmul(selector, out.unique_features);
        feats.mask.assign(sentence_count, 0);
        for (std::size_t s = 0; s < idx.size(); ++s) feats.mask[s] = 1;
        out.reports.push_back(std::move(feats));
        embedding_rows.push_back(l2_normalize(matmul(averager, out.unique_features), 1));
    }
    if (embedding_rows.size() == 1) {
        out.report_embeddings = embedding_rows[0];
    } else if (!embedding_rows.empty()) {
        out.report_embeddings = concat(embedding_rows, 0);
    }
    return out;
}

Tensor select_sentence_rows(const SentenceBatchEncoding& batch,
                            const std::vector<std::string>& texts) {
    if (texts.empty()) {
        throw ContractError("select_sentence_rows: no texts");
    }
    const std::size_t uniques = batch.unique_sentences.size();
    Tensor selector({texts.size(), uniques});
    auto& sel = selector.mutable_values();
    for (std::size_t i = 0; i < texts.size(); ++i) {
        auto it = batch.index_of.find(texts[i]);
        if (it == batch.index_of.end()) {
            throw ContractError("select_sentence_rows: sentence not in pool: " + texts[i]);
        }
        sel[i * uniques + it->second] = 1.0;
    }
    return matmul(selector, batch.unique_features);
}

std::pair<SentenceFeatures, Tensor> encode_sentences(const std::vector<std::string>& sentences,
                                                     const EncoderConfig& config,
                                                     const TextEncoderParams& params,
                                                     std::size_t sentence_count) {
    auto batch = encode_sentence_batch({sentences}, {}, config, params, sentence_count);
    return {std::move(batch.reports[0]), std::move(batch.report_embeddings)};
}

Tensor embed_sentence(const std::string& sentence, const EncoderConfig& config,
                      const TextEncoderParams& params) {
    auto batch = encode_sentence_batch({{sentence}}, {}, config, params, 1);
    return batch.reports[0].features;
}

} // namespace mga
