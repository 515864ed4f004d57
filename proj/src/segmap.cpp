#include "mga/segmap.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "mga/error.hpp"
#include "mga/io.hpp"
#include "mga/kernels.hpp"

namespace mga {

Heatmap sentence_heatmap(const std::string& sentence, const Image& image,
                         const ModelParams& params) {
    if (tokenize(sentence).empty()) {
        throw ConfigError("sentence_heatmap: empty sentence");
    }
    auto enc = encode_image(image, params.config, params.visual);
    if (enc.grid_rows != enc.grid_cols) {
        throw ConfigError("sentence_heatmap: non-square patch grid " +
                          std::to_string(enc.grid_rows) + "x" + std::to_string(enc.grid_cols));
    }
    Tensor query = embed_sentence(sentence, params.config, params.text);

    Heatmap out;
    out.sentence = sentence;
    out.grid = enc.grid_rows;
    out.height = image.height;
    out.width = image.width;
    out.grid_values.resize(out.grid * out.grid);
    const std::size_t dim = params.config.dim;
    for (std::size_t p = 0; p < out.grid_values.size(); ++p) {
        double dot = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            dot += query.at(d) * enc.locals.at2(p, d);
        }
        out.grid_values[p] = dot;
    }
    out.upsampled = bilinear_upsample(out.grid_values, out.grid, out.height, out.width);
    return out;
}

std::vector<double> bilinear_upsample(const std::vector<double>& grid, std::size_t grid_side,
                                      std::size_t height, std::size_t width) {
    if (grid_side == 0 || grid.size() != grid_side * grid_side) {
        throw ContractError("bilinear_upsample: grid size does not match side length");
    }
    if (height < grid_side || width < grid_side) {
        throw ConfigError("bilinear_upsample: target " + std::to_string(height) + "x" +
                          std::to_string(width) + " smaller than grid " +
                          std::to_string(grid_side));
    }
    std::vector<double> out(height * width);
    kernels::bilinear_upsample(grid.data(), grid_side, grid_side, out.data(), height, width);
    return out;
}

HeatmapEval evaluate_heatmap(const Heatmap& heatmap, const std::vector<BoundingBox>& boxes,
                             double quantile) {
    if (heatmap.upsampled.empty() || heatmap.height * heatmap.width != heatmap.upsampled.size()) {
        throw ContractError("evaluate_heatmap: empty heatmap");
    }
    if (boxes.empty()) {
        throw ContractError("evaluate_heatmap: no boxes");
    }
    if (!(quantile > 0.0 && quantile < 1.0)) {
        throw ConfigError("evaluate_heatmap: quantile must lie in (0, 1)");
    }

    auto inside_any = [&boxes](std::size_t x, std::size_t y) {
        for (const auto& b : boxes) {
            if (static_cast<int>(x) >= b.x && static_cast<int>(x) < b.x + b.w &&
                static_cast<int>(y) >= b.y && static_cast<int>(y) < b.y + b.h) {
                return true;
            }
        }
        return false;
    };

    // argmax, ties toward the lowest row-major index
    std::size_t best = 0;
    for (std::size_t i = 1; i < heatmap.upsampled.size(); ++i) {
        if (heatmap.upsampled[i] > heatmap.upsampled[best]) best = i;
    }
    HeatmapEval out;
    out.pointing_hit = inside_any(best % heatmap.width, best / heatmap.width);

    // rank-based threshold keeps the region invariant under strictly
    // monotone transforms of the values
    std::vector<double> sorted(heatmap.upsampled);
    auto rank = static_cast<std::size_t>(
        std::floor(quantile * static_cast<double>(sorted.size() - 1)));
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(rank),
                     sorted.end());
    double threshold = sorted[rank];

    std::size_t intersection = 0, union_count = 0;
    for (std::size_t y = 0; y < heatmap.height; ++y) {
        for (std::size_t x = 0; x < heatmap.width; ++x) {
            bool in_region = heatmap.upsampled[y * heatmap.width + x] >= threshold;
            bool in_box = inside_any(x, y);
            if (in_region && in_box) ++intersection;
            if (in_region || in_box) ++union_count;
        }
    }
    out.iou = union_count > 0
                  ? static_cast<double>(intersection) / static_cast<double>(union_count)
                  : 0.0;
    return out;
}

void write_heatmap_csv(const Heatmap& heatmap, const std::string& path) {
    std::string body;
    char buf[32];
    for (std::size_t r = 0; r < heatmap.grid; ++r) {
        for (std::size_t c = 0; c < heatmap.grid; ++c) {
            std::snprintf(buf, sizeof(buf), "%.6f", heatmap.grid_values[r * heatmap.grid + c]);
            if (c) body.push_back(',');
            body += buf;
        }
        body.push_back('\n');
    }
    atomic_write_text(path, body);
}

void write_heatmap_pgm(const Heatmap& heatmap, const std::string& path) {
    write_pgm(path, heatmap.upsampled, heatmap.height, heatmap.width);
}

} // namespace mga
