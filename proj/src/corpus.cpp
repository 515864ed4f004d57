#include "mga/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mga/error.hpp"
#include "mga/io.hpp"
#include "mga/knowledge.hpp"
#include "mga/rng.hpp"

namespace mga {

namespace {

const char* quadrant_name(std::size_t quadrant) {
    switch (quadrant % 4) {
        case 0: return "upper left";
        case 1: return "upper right";
        case 2: return "lower left";
        default: return "lower right";
    }
}

void validate_synthetic_config(const SyntheticConfig& config) {
    if (config.classes.size() < 2) {
        throw ConfigError("synth: at least two classes required");
    }
    if (config.blob_radius_min < 1 || config.blob_radius_max < config.blob_radius_min) {
        throw ConfigError("synth: invalid blob radius range");
    }
    std::size_t placement_side = config.fixed_quadrant ? config.image_side / 2 : config.image_side;
    if (static_cast<std::size_t>(2 * config.blob_radius_max + 1) > placement_side) {
        throw ConfigError("synth: blob does not fit inside the placement region");
    }
    if (config.noise_amplitude < 0.0 || config.noise_amplitude > 1.0) {
        throw ConfigError("synth: noise amplitude must lie in [0, 1]");
    }
    if (config.present_rate <= 0.0 || config.present_rate >= 1.0) {
        throw ConfigError("synth: present rate must lie in (0, 1)");
    }
}

} // namespace

std::vector<PairedExample> synth_generate(const SyntheticConfig& config, std::size_t n,
                                          std::uint64_t seed) {
    validate_synthetic_config(config);
    if (n < 1) {
        throw ConfigError("synth: n must be >= 1");
    }
    const std::size_t side = config.image_side;
    Rng rng(seed);

    std::vector<PairedExample> out;
    out.reserve(n);
    for (std::size_t e = 0; e < n; ++e) {
        PairedExample ex;
        {
            std::ostringstream id;
            id << "synth-" << std::setw(6) << std::setfill('0') << e;
            ex.id = id.str();
        }
        ex.image.height = ex.image.width = side;
        ex.image.pixels.assign(side * side, 0.0);

        struct Blob {
            std::size_t cls;
            int cx, cy, radius;
        };
        std::vector<Blob> blobs;
        std::vector<std::string> sentences;
        for (std::size_t c = 0; c < config.classes.size(); ++c) {
            bool present = rng.uniform() < config.present_rate;
            ex.labels[config.classes[c]] = present ? 1 : 0;
            if (!present) {
                sentences.push_back(
                    fill_template(config.negative_template, "class", config.classes[c]));
                continue;
            }
            int radius = rng.uniform_int(config.blob_radius_min, config.blob_radius_max);
            int x0 = 0, y0 = 0;
            auto span = static_cast<int>(config.fixed_quadrant ? side / 2 : side);
            int cx = rng.uniform_int(radius, span - 1 - radius);
            int cy = rng.uniform_int(radius, span - 1 - radius);
            std::size_t quadrant;
            if (config.fixed_quadrant) {
                quadrant = c % 4;
                x0 = (quadrant % 2) ? span : 0;
                y0 = (quadrant / 2) ? span : 0;
            } else {
                quadrant = (cx >= static_cast<int>(side / 2) ? 1 : 0) +
                           (cy >= static_cast<int>(side / 2) ? 2 : 0);
            }
            cx += x0;
            cy += y0;
            blobs.push_back(Blob{c, cx, cy, radius});
            ex.boxes.push_back(BoundingBox{cx - radius, cy - radius, 2 * radius + 1,
                                           2 * radius + 1, config.classes[c]});
            std::string sentence =
                fill_template(config.positive_template, "class", config.classes[c]);
            sentence = fill_template(sentence, "location", quadrant_name(quadrant));
            sentences.push_back(std::move(sentence));
        }

        for (double& p : ex.image.pixels) {
            p = rng.uniform() * config.noise_amplitude;
        }
        for (const auto& blob : blobs) {
            double sigma = static_cast<double>(blob.radius) / 2.0;
            double inv = 1.0 / (2.0 * sigma * sigma);
            int lo_y = blob.cy - 2 * blob.radius, hi_y = blob.cy + 2 * blob.radius;
            int lo_x = blob.cx - 2 * blob.radius, hi_x = blob.cx + 2 * blob.radius;
            for (int y = std::max(0, lo_y); y <= std::min<int>(side - 1, hi_y); ++y) {
                for (int x = std::max(0, lo_x); x <= std::min<int>(side - 1, hi_x); ++x) {
                    double dx = x - blob.cx, dy = y - blob.cy;
                    ex.image.pixels[static_cast<std::size_t>(y) * side + x] +=
                        std::exp(-(dx * dx + dy * dy) * inv);
                }
            }
        }
        for (double& p : ex.image.pixels) {
            p = std::clamp(p, 0.0, 1.0);
        }

        std::string report;
        for (const std::string& s : sentences) {
            if (!report.empty()) report.push_back(' ');
            report += s;
        }
        ex.report = std::move(report);
        out.push_back(std::move(ex));
    }
    return out;
}

std::string labels_to_report(const std::map<std::string, int>& labels,
                             const std::string& positive_template,
                             const std::string& negative_template) {
    std::string report;
    std::size_t known = 0;
    for (const auto& [cls, value] : labels) {
        if (value == -1) continue;
        if (value != 0 && value != 1) {
            throw ConfigError("labels_to_report: label value " + std::to_string(value) +
                              " outside {-1, 0, 1}");
        }
        ++known;
        std::string sentence =
            fill_template(value == 1 ? positive_template : negative_template, "class", cls);
        if (!report.empty()) report.push_back(' ');
        report += sentence;
    }
    if (known == 0) {
        throw ConfigError("labels_to_report: all labels unknown");
    }
    return report;
}

namespace {

Image load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open pgm: " + path);
    }
    std::string magic;
    in >> magic;
    if (magic != "P5" && magic != "P2") {
        throw IoError("unsupported pgm magic '" + magic + "' in " + path);
    }
    auto next_token = [&in, &path]() {
        std::string tok;
        while (in >> tok) {
            if (tok[0] == '#') {
                std::string rest;
                std::getline(in, rest);
                continue;
            }
            return tok;
        }
        throw IoError("truncated pgm header: " + path);
    };
    std::size_t width = std::stoul(next_token());
    std::size_t height = std::stoul(next_token());
    std::size_t maxval = std::stoul(next_token());
    if (maxval == 0 || maxval > 255) {
        throw IoError("unsupported pgm maxval in " + path);
    }
    Image img;
    img.width = width;
    img.height = height;
    img.pixels.resize(width * height);
    if (magic == "P5") {
        in.get(); // single whitespace after maxval
        std::vector<unsigned char> raw(width * height);
        in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
        if (!in) {
            throw IoError("truncated pgm payload: " + path);
        }
        for (std::size_t i = 0; i < raw.size(); ++i) {
            img.pixels[i] = static_cast<double>(raw[i]) / static_cast<double>(maxval);
        }
    } else {
        for (double& p : img.pixels) {
            std::size_t v = std::stoul(next_token());
            p = static_cast<double>(v) / static_cast<double>(maxval);
        }
    }
    return img;
}

void validate_example(const PairedExample& ex, std::size_t record) {
    auto fail = [record](const std::string& what) {
        throw IoError("corpus record " + std::to_string(record) + ": " + what);
    };
    if (ex.report.empty()) fail("empty report");
    if (ex.image.height == 0 || ex.image.width == 0 ||
        ex.image.pixels.size() != ex.image.height * ex.image.width) {
        fail("inconsistent image dimensions");
    }
    for (double p : ex.image.pixels) {
        if (!(p >= 0.0 && p <= 1.0)) fail("pixel outside [0, 1]");
    }
    for (const auto& [cls, v] : ex.labels) {
        if (v != -1 && v != 0 && v != 1) {
            fail("label for '" + cls + "' outside {-1, 0, 1}");
        }
    }
    for (const auto& box : ex.boxes) {
        if (box.w <= 0 || box.h <= 0 || box.x < 0 || box.y < 0 ||
            box.x + box.w > static_cast<int>(ex.image.width) ||
            box.y + box.h > static_cast<int>(ex.image.height)) {
            fail("box outside image bounds");
        }
    }
}

} // namespace

std::vector<PairedExample> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open corpus: " + path);
    }
    std::filesystem::path base = std::filesystem::path(path).parent_path();
    std::vector<PairedExample> out;
    std::string line;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        ++record;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw IoError("corpus record " + std::to_string(record) + ": parse error: " +
                          e.what());
        }
        PairedExample ex;
        try {
            ex.id = doc.at("id").get<std::string>();
            ex.report = doc.at("report").get<std::string>();
            const auto& image = doc.at("image");
            if (image.is_object()) {
                std::string rel = image.at("pgm").get<std::string>();
                ex.image = load_pgm((base / rel).string());
            } else {
                for (const auto& row : image) {
                    if (ex.image.width == 0) {
                        ex.image.width = row.size();
                    } else if (row.size() != ex.image.width) {
                        throw IoError("ragged image rows");
                    }
                    for (const auto& v : row) ex.image.pixels.push_back(v.get<double>());
                    ++ex.image.height;
                }
            }
            if (doc.contains("labels")) {
                for (auto& [cls, v] : doc.at("labels").items()) {
                    ex.labels[cls] = v.get<int>();
                }
            }
            if (doc.contains("boxes")) {
                for (const auto& b : doc.at("boxes")) {
                    ex.boxes.push_back(BoundingBox{b.at("x").get<int>(), b.at("y").get<int>(),
                                                   b.at("w").get<int>(), b.at("h").get<int>(),
                                                   b.at("class").get<std::string>()});
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw IoError("corpus record " + std::to_string(record) + ": " + e.what());
        }
        validate_example(ex, record);
        out.push_back(std::move(ex));
    }
    return out;
}

void save_corpus(const std::vector<PairedExample>& examples, const std::string& path) {
    std::string body;
    for (const auto& ex : examples) {
        nlohmann::json doc;
        doc["id"] = ex.id;
        nlohmann::json rows = nlohmann::json::array();
        for (std::size_t y = 0; y < ex.image.height; ++y) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t x = 0; x < ex.image.width; ++x) {
                row.push_back(ex.image.pixels[y * ex.image.width + x]);
            }
            rows.push_back(std::move(row));
        }
        doc["image"] = std::move(rows);
        doc["report"] = ex.report;
        if (!ex.labels.empty()) {
            nlohmann::json labels = nlohmann::json::object();
            for (const auto& [cls, v] : ex.labels) labels[cls] = v;
            doc["labels"] = std::move(labels);
        }
        if (!ex.boxes.empty()) {
            nlohmann::json boxes = nlohmann::json::array();
            for (const auto& b : ex.boxes) {
                boxes.push_back({{"x", b.x}, {"y", b.y}, {"w", b.w}, {"h", b.h},
                                 {"class", b.cls}});
            }
            doc["boxes"] = std::move(boxes);
        }
        body += doc.dump();
        body.push_back('\n');
    }
    atomic_write_text(path, body);
}

std::pair<std::vector<PairedExample>, std::vector<PairedExample>>
split(const std::vector<PairedExample>& examples, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
        throw ConfigError("split: test fraction must lie in (0, 1)");
    }
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);

    auto n_test = static_cast<std::size_t>(
        std::floor(static_cast<double>(examples.size()) * test_fraction));
    std::pair<std::vector<PairedExample>, std::vector<PairedExample>> out;
    out.second.reserve(n_test);
    out.first.reserve(examples.size() - n_test);
    for (std::size_t i = 0; i < order.size(); ++i) {
        (i < n_test ? out.second : out.first).push_back(examples[order[i]]);
    }
    return out;
}

} // namespace mga
