#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mga {

// Write-to-temp-then-rename so interrupted runs never leave partial files.
void atomic_write_text(const std::string& path, const std::string& content);

std::string read_text_file(const std::string& path);

// 8-bit binary PGM (P5) after min-max scaling of `values`.
void write_pgm(const std::string& path, const std::vector<double>& values,
               std::size_t height, std::size_t width);

} // namespace mga
