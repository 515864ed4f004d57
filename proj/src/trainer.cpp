#include "mga/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "json.hpp"
#include "mga/error.hpp"
#include "mga/io.hpp"
#include "mga/knowledge.hpp"
#include "mga/rng.hpp"

namespace mga {

namespace {

void validate_config(const TrainConfig& config) {
    if (config.batch_size < 2) {
        throw ConfigError("train: batch size must be >= 2 for the contrastive losses");
    }
    if (config.sentence_count < 1) {
        throw ConfigError("train: sentence count must be >= 1");
    }
    if (!(config.learning_rate > 0.0)) {
        throw ConfigError("train: learning rate must be positive");
    }
    LossWeights validate(config.weights.tau1, config.weights.tau2, config.weights.tau3);
    (void)validate;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
    // splitmix64 of (seed, epoch) so per-epoch shuffles differ but reproduce
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (epoch + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

} // namespace

AdamState AdamState::init(ModelParams& params) {
    AdamState state;
    for (auto& [name, tensor] : params.named()) {
        (void)name;
        state.first_moment.emplace_back(tensor->size(), 0.0);
        state.second_moment.emplace_back(tensor->size(), 0.0);
    }
    return state;
}

Batch prepare_batch(const std::vector<const PairedExample*>& examples,
                    const TrainConfig& config) {
    if (examples.size() < 2) {
        throw ContractError("prepare_batch: batch must contain at least two examples");
    }
    Batch batch;
    batch.examples = examples;
    const std::size_t n = examples.size();
    const std::size_t pixel_count = examples[0]->image.height * examples[0]->image.width;

    batch.pixels = Tensor({n, pixel_count});
    auto& px = batch.pixels.mutable_values();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& ex = *examples[i];
        if (ex.image.pixels.size() != pixel_count) {
            throw ConfigError("prepare_batch: image size mismatch in example " + ex.id);
        }
        std::copy(ex.image.pixels.begin(), ex.image.pixels.end(), px.begin() + i * pixel_count);

        auto sentences = split_report(ex.report);
        if (sentences.empty()) {
            throw ConfigError("prepare_batch: empty report in example " + ex.id);
        }
        if (sentences.size() > config.sentence_count) {
            sentences.resize(config.sentence_count);
        }
        std::vector<std::uint8_t> mask(config.sentence_count, 0);
        for (std::size_t s = 0; s < sentences.size(); ++s) mask[s] = 1;
        batch.sentences.push_back(std::move(sentences));
        batch.masks.push_back(std::move(mask));

        std::vector<int> row;
        row.reserve(config.class_names.size());
        for (const std::string& cls : config.class_names) {
            auto it = ex.labels.find(cls);
            row.push_back(it == ex.labels.end() ? -1 : it->second);
        }
        batch.labels.push_back(std::move(row));
    }
    return batch;
}

LossComponents train_step(const Batch& batch, ModelParams& params, AdamState& optimizer,
                          const TrainConfig& config, std::size_t step_index) {
    if (config.class_names.empty()) {
        throw ContractError("train_step: class names must be resolved");
    }
    Tape tape;
    ModelParams graph = params;
    std::vector<int> node_of;
    for (auto& [name, tensor] : graph.named()) {
        (void)name;
        *tensor = tape.watch(*tensor);
        node_of.push_back(tensor->node());
    }

    // one encoding pass feeds all three objectives
    std::vector<Tensor> locals;
    std::vector<Tensor> global_rows;
    locals.reserve(batch.examples.size());
    global_rows.reserve(batch.examples.size());
    for (const PairedExample* ex : batch.examples) {
        auto enc = encode_image(ex->image, config.encoder, graph.visual);
        locals.push_back(std::move(enc.locals));
        global_rows.push_back(std::move(enc.global));
    }
    Tensor image_embeddings = concat(global_rows, 0);

    std::vector<std::string> prompt_pool;
    std::vector<std::string> positive_texts, negative_texts;
    for (const std::string& cls : config.class_names) {
        positive_texts.push_back(fill_template(config.positive_prompt_template, "class", cls));
        negative_texts.push_back(fill_template(config.negative_prompt_template, "class", cls));
        prompt_pool.push_back(positive_texts.back());
        prompt_pool.push_back(negative_texts.back());
    }
    auto text = encode_sentence_batch(batch.sentences, prompt_pool, config.encoder, graph.text,
                                      config.sentence_count);
    Tensor positive_prompts = select_sentence_rows(text, positive_texts);
    Tensor negative_prompts = select_sentence_rows(text, negative_texts);

    std::vector<Tensor> sentence_features;
    std::vector<std::vector<std::uint8_t>> masks;
    sentence_features.reserve(text.reports.size());
    for (auto& rep : text.reports) {
        sentence_features.push_back(rep.features);
        masks.push_back(rep.mask);
    }

    LossComponents out;
    Tensor total;
    try {
        Tensor basic = contrastive_loss(image_embeddings, text.report_embeddings,
                                        graph.temperature, config.symmetric_contrastive);
        Tensor cls = classification_loss_logits(image_embeddings, positive_prompts,
                                                negative_prompts, graph.temperature,
                                                batch.labels);
        Tensor seg = alignment_loss(sentence_features, masks, locals,
                                    config.temperatures.lambda1, config.temperatures.lambda2);
        total = total_loss(basic, cls, seg, config.weights);
        out.basic = basic.item();
        out.cls = cls.item();
        out.seg = seg.item();
        out.total = total.item();
    } catch (const DomainError& e) {
        throw DomainError(std::string(e.what()) + " at step " + std::to_string(step_index));
    }

    auto grads = tape.backward(total);

    // Adam with bias correction; parameters with no gradient keep zero moments
    optimizer.step += 1;
    double bc1 = 1.0 - std::pow(optimizer.beta1, static_cast<double>(optimizer.step));
    double bc2 = 1.0 - std::pow(optimizer.beta2, static_cast<double>(optimizer.step));
    auto named = params.named();
    for (std::size_t pi = 0; pi < named.size(); ++pi) {
        Tensor* tensor = named[pi].second;
        auto& values = tensor->mutable_values();
        auto& m = optimizer.first_moment[pi];
        auto& v = optimizer.second_moment[pi];
        auto it = grads.find(node_of[pi]);
        const std::vector<double>* g = it != grads.end() ? &it->second.values() : nullptr;
        for (std::size_t j = 0; j < values.size(); ++j) {
            double gj = g ? (*g)[j] : 0.0;
            m[j] = optimizer.beta1 * m[j] + (1.0 - optimizer.beta1) * gj;
            v[j] = optimizer.beta2 * v[j] + (1.0 - optimizer.beta2) * gj * gj;
            double m_hat = m[j] / bc1;
            double v_hat = v[j] / bc2;
            values[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + optimizer.epsilon);
        }
    }
    {
        auto& temp = params.temperature.mutable_values();
        temp[0] = std::clamp(temp[0], config.temperatures.temperature_min,
                             config.temperatures.temperature_max);
    }
    return out;
}

Checkpoint train(const TrainConfig& config, const std::vector<PairedExample>& train_set) {
    validate_config(config);
    if (train_set.empty()) {
        throw ConfigError("train: empty training set");
    }

    TrainConfig resolved = config;
    if (resolved.class_names.empty()) {
        std::set<std::string> classes;
        for (const auto& ex : train_set) {
            for (const auto& [cls, v] : ex.labels) {
                (void)v;
                classes.insert(cls);
            }
        }
        resolved.class_names.assign(classes.begin(), classes.end());
    }
    if (resolved.class_names.empty()) {
        throw ConfigError("train: no class names given and the corpus carries no labels");
    }

    Checkpoint checkpoint;
    checkpoint.config = resolved;
    checkpoint.params = ModelParams::init(resolved.encoder, resolved.seed,
                                          resolved.temperatures.temperature_init);
    AdamState optimizer = AdamState::init(checkpoint.params);

    std::vector<std::size_t> order(train_set.size());
    std::size_t step_index = 0;
    for (std::size_t epoch = 0; epoch < resolved.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng(epoch_seed(resolved.seed, epoch));
        rng.shuffle(order);

        LossComponents epoch_sum;
        std::size_t steps_in_epoch = 0;
        for (std::size_t start = 0; start < order.size(); start += resolved.batch_size) {
            std::size_t end = std::min(order.size(), start + resolved.batch_size);
            if (end - start < 2) break; // a trailing singleton has no negatives
            std::vector<const PairedExample*> examples;
            examples.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) examples.push_back(&train_set[order[i]]);
            Batch batch = prepare_batch(examples, resolved);
            LossComponents losses =
                train_step(batch, checkpoint.params, optimizer, resolved, step_index++);
            epoch_sum.basic += losses.basic;
            epoch_sum.cls += losses.cls;
            epoch_sum.seg += losses.seg;
            epoch_sum.total += losses.total;
            ++steps_in_epoch;
        }
        if (steps_in_epoch == 0) {
            throw ConfigError("train: batch size exceeds the training set");
        }
        double inv = 1.0 / static_cast<double>(steps_in_epoch);
        checkpoint.history.push_back(LossComponents{epoch_sum.basic * inv, epoch_sum.cls * inv,
                                                    epoch_sum.seg * inv, epoch_sum.total * inv});
    }
    return checkpoint;
}

std::string checkpoint_to_json(const Checkpoint& checkpoint) {
    nlohmann::json doc;
    doc["version"] = checkpoint.version;
    nlohmann::json params = nlohmann::json::object();
    for (const auto& [name, tensor] : checkpoint.params.named()) {
        if (name == "temperature") continue; // stored as the top-level "temp"
        params[name] = {{"shape", tensor->shape()}, {"values", tensor->values()}};
    }
    doc["params"] = std::move(params);
    doc["temp"] = checkpoint.params.temperature.item();

    const TrainConfig& c = checkpoint.config;
    doc["config"] = {{"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"learning_rate", c.learning_rate},
                     {"tau1", c.weights.tau1},
                     {"tau2", c.weights.tau2},
                     {"tau3", c.weights.tau3},
                     {"temperature_init", c.temperatures.temperature_init},
                     {"temperature_min", c.temperatures.temperature_min},
                     {"temperature_max", c.temperatures.temperature_max},
                     {"lambda1", c.temperatures.lambda1},
                     {"lambda2", c.temperatures.lambda2},
                     {"sentence_count", c.sentence_count},
                     {"seed", c.seed},
                     {"dim", c.encoder.dim},
                     {"hidden", c.encoder.hidden},
                     {"patch_side", c.encoder.patch_side},
                     {"buckets", c.encoder.buckets},
                     {"symmetric_contrastive", c.symmetric_contrastive},
                     {"class_names", c.class_names},
                     {"positive_prompt_template", c.positive_prompt_template},
                     {"negative_prompt_template", c.negative_prompt_template}};

    nlohmann::json history = nlohmann::json::array();
    for (const auto& e : checkpoint.history) {
        history.push_back(
            {{"basic", e.basic}, {"cls", e.cls}, {"seg", e.seg}, {"total", e.total}});
    }
    doc["history"] = std::move(history);
    return doc.dump();
}

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path) {
    atomic_write_text(path, checkpoint_to_json(checkpoint));
}

Checkpoint load_checkpoint(const std::string& path) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_checkpoint: " + path + ": " + e.what());
    }
    try {
        int version = doc.at("version").get<int>();
        if (version != 1) {
            throw IoError("load_checkpoint: incompatible version " + std::to_string(version) +
                          " in " + path);
        }
        Checkpoint checkpoint;
        const auto& c = doc.at("config");
        checkpoint.config.batch_size = c.at("batch_size").get<std::size_t>();
        checkpoint.config.epochs = c.at("epochs").get<std::size_t>();
        checkpoint.config.learning_rate = c.at("learning_rate").get<double>();
        checkpoint.config.weights =
            LossWeights(c.at("tau1").get<double>(), c.at("tau2").get<double>(),
                        c.at("tau3").get<double>());
        checkpoint.config.temperatures.temperature_init = c.at("temperature_init").get<double>();
        checkpoint.config.temperatures.temperature_min = c.at("temperature_min").get<double>();
        checkpoint.config.temperatures.temperature_max = c.at("temperature_max").get<double>();
        checkpoint.config.temperatures.lambda1 = c.at("lambda1").get<double>();
        checkpoint.config.temperatures.lambda2 = c.at("lambda2").get<double>();
        checkpoint.config.sentence_count = c.at("sentence_count").get<std::size_t>();
        checkpoint.config.seed = c.at("seed").get<std::uint64_t>();
        checkpoint.config.encoder.dim = c.at("dim").get<std::size_t>();
        checkpoint.config.encoder.hidden = c.at("hidden").get<std::size_t>();
        checkpoint.config.encoder.patch_side = c.at("patch_side").get<std::size_t>();
        checkpoint.config.encoder.buckets = c.at("buckets").get<std::size_t>();
        checkpoint.config.symmetric_contrastive = c.at("symmetric_contrastive").get<bool>();
        checkpoint.config.class_names = c.at("class_names").get<std::vector<std::string>>();
        checkpoint.config.positive_prompt_template =
            c.at("positive_prompt_template").get<std::string>();
        checkpoint.config.negative_prompt_template =
            c.at("negative_prompt_template").get<std::string>();

        checkpoint.params = ModelParams::init(checkpoint.config.encoder, 0, 1.0);
        const auto& params = doc.at("params");
        for (auto& [name, tensor] : checkpoint.params.named()) {
            if (name == "temperature") {
                *tensor = Tensor({1, 1}, {doc.at("temp").get<double>()});
                continue;
            }
            const auto& entry = params.at(name);
            auto shape = entry.at("shape").get<Shape>();
            auto values = entry.at("values").get<std::vector<double>>();
            if (shape != tensor->shape()) {
                throw IoError("load_checkpoint: shape mismatch for " + name + " in " + path);
            }
            *tensor = Tensor(std::move(shape), std::move(values));
        }

        for (const auto& e : doc.at("history")) {
            checkpoint.history.push_back(LossComponents{
                e.at("basic").get<double>(), e.at("cls").get<double>(),
                e.at("seg").get<double>(), e.at("total").get<double>()});
        }
        return checkpoint;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("load_checkpoint: malformed document " + path + ": " + e.what());
    }
}

} // namespace mga
