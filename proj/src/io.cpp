#include "mga/io.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "mga/error.hpp"

namespace mga {

void atomic_write_text(const std::string& path, const std::string& content) {
    namespace fs = std::filesystem;
    fs::path target(path);
    if (target.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(target.parent_path(), ec);
    }
    fs::path tmp = target;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open for writing: " + tmp.string());
        }
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) {
            throw IoError("write failed: " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        throw IoError("rename failed: " + tmp.string() + " -> " + target.string() + ": " + ec.message());
    }
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open: " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_pgm(const std::string& path, const std::vector<double>& values,
               std::size_t height, std::size_t width) {
    if (values.size() != height * width || values.empty()) {
        throw ContractError("write_pgm: value count does not match dimensions");
    }
    auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    double lo = *lo_it, hi = *hi_it;
    double span = hi - lo;
    std::string body;
    body.reserve(values.size() + 32);
    body += "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    for (double v : values) {
        double scaled = span > 0.0 ? (v - lo) / span : 0.0;
        int byte = static_cast<int>(scaled * 255.0 + 0.5);
        byte = std::clamp(byte, 0, 255);
        body.push_back(static_cast<char>(static_cast<unsigned char>(byte)));
    }
    atomic_write_text(path, body);
}

} // namespace mga
