#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mga/encoders.hpp"

namespace mga {

struct BoundingBox {
    int x = 0;
    int y = 0;
    int w = 0;
    int h = 0;
    std::string cls;
};

struct PairedExample {
    std::string id;
    Image image;
    std::string report;
    std::map<std::string, int> labels; // 1 present, 0 absent, -1 unknown
    std::vector<BoundingBox> boxes;
};

// Blob-on-noise generator standing in for the real paired corpora. Each
// present class contributes one Gaussian bump (peak 1.0) plus a positive
// report sentence; absent classes contribute the negative sentence.
struct SyntheticConfig {
    std::vector<std::string> classes = {"atelectasis", "edema", "effusion", "pneumonia"};
    std::size_t image_side = 64;
    int blob_radius_min = 5;
    int blob_radius_max = 9;
    double noise_amplitude = 0.2;
    double present_rate = 0.4;
    bool fixed_quadrant = true; // class c pinned to quadrant c % 4
    std::string positive_template = "There is {class} in the {location}.";
    std::string negative_template = "There is no {class}.";
};

std::vector<PairedExample> synth_generate(const SyntheticConfig& config, std::size_t n,
                                          std::uint64_t seed);

// One sentence per known class; unknown classes omitted.
std::string labels_to_report(const std::map<std::string, int>& labels,
                             const std::string& positive_template,
                             const std::string& negative_template);

// JSONL corpus: one record per line with id / image / report and optional
// labels and boxes. Malformed records are rejected with their line number.
std::vector<PairedExample> load_corpus(const std::string& path);
void save_corpus(const std::vector<PairedExample>& examples, const std::string& path);

// Deterministic disjoint partition by example identifier.
std::pair<std::vector<PairedExample>, std::vector<PairedExample>>
split(const std::vector<PairedExample>& examples, double test_fraction, std::uint64_t seed);

} // namespace mga
