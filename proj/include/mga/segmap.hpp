#pragma once

#include <string>
#include <vector>

#include "mga/corpus.hpp"
#include "mga/encoders.hpp"

namespace mga {

// Sentence-conditioned patch similarity grid treated as a segmentation map,
// plus its bilinear upsampling to image resolution.
struct Heatmap {
    std::size_t grid = 0;             // grid side length
    std::vector<double> grid_values;  // grid x grid, cosine in [-1, 1]
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> upsampled;    // height x width
    std::string sentence;
};

Heatmap sentence_heatmap(const std::string& sentence, const Image& image,
                         const ModelParams& params);

// Align-corners bilinear interpolation of a square grid; errors when the
// target is smaller than the grid.
std::vector<double> bilinear_upsample(const std::vector<double>& grid, std::size_t grid_side,
                                      std::size_t height, std::size_t width);

struct HeatmapEval {
    bool pointing_hit = false;
    double iou = 0.0;
};

// pointing_hit: the argmax pixel of the upsampled map lies inside any box.
// iou: pixels at or above the q-th quantile against the union of the boxes.
HeatmapEval evaluate_heatmap(const Heatmap& heatmap, const std::vector<BoundingBox>& boxes,
                             double quantile = 0.95);

// Grid as comma-separated values, one row per line, 6-decimal fixed point.
void write_heatmap_csv(const Heatmap& heatmap, const std::string& path);

// Upsampled map as an 8-bit graymap after min-max scaling.
void write_heatmap_pgm(const Heatmap& heatmap, const std::string& path);

} // namespace mga
