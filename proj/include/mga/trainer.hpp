#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mga/corpus.hpp"
#include "mga/encoders.hpp"
#include "mga/objectives.hpp"

namespace mga {

struct TrainConfig {
    std::size_t batch_size = 32; // contrastive losses need >= 2
    std::size_t epochs = 10;
    double learning_rate = 1e-5;
    LossWeights weights;
    TemperatureParams temperatures;
    std::size_t sentence_count = 5; // S
    std::uint64_t seed = 0;
    EncoderConfig encoder;
    bool symmetric_contrastive = true;
    std::vector<std::string> class_names; // empty: derived from the training labels
    std::string positive_prompt_template = "There is {class}.";
    std::string negative_prompt_template = "There is no {class}.";
};

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::size_t step = 0;
    std::vector<std::vector<double>> first_moment;  // per named parameter
    std::vector<std::vector<double>> second_moment;

    static AdamState init(ModelParams& params);
};

struct Batch {
    std::vector<const PairedExample*> examples;
    Tensor pixels;                                   // N x (H*W)
    std::vector<std::vector<std::string>> sentences; // split reports, first S kept
    std::vector<std::vector<std::uint8_t>> masks;    // S slots per report
    LabelMatrix labels;                              // N x C in config class order
};

// Split, validate and stack a mini-batch. Class order follows
// config.class_names, which must be resolved by then.
Batch prepare_batch(const std::vector<const PairedExample*>& examples,
                    const TrainConfig& config);

struct LossComponents {
    double basic = 0.0;
    double cls = 0.0;
    double seg = 0.0;
    double total = 0.0;
};

// One cooperative step: a single encoding pass feeds all three objectives on
// one tape, followed by an Adam update and the temperature clamp.
LossComponents train_step(const Batch& batch, ModelParams& params, AdamState& optimizer,
                          const TrainConfig& config, std::size_t step_index = 0);

struct Checkpoint {
    int version = 1;
    ModelParams params;
    TrainConfig config;
    std::vector<LossComponents> history; // one entry per epoch
};

Checkpoint train(const TrainConfig& config, const std::vector<PairedExample>& train_set);

void save_checkpoint(const Checkpoint& checkpoint, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Serialized form of save_checkpoint, exposed for bitwise comparisons.
std::string checkpoint_to_json(const Checkpoint& checkpoint);

} // namespace mga
