#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace nsrf {

// RGB rasters are row-major H x W x 3 reals in [0, 1], top row first; values
// are quantized to 8 bits on write. Label rasters are class ids stored as an
// 8-bit single-channel indexed PNG whose palette holds the registry display
// colors (class id == palette index). Depth rasters are PFM, 32-bit floats,
// scale -1.0 (little-endian), rows bottom-up per the format.

void write_rgb_png(const std::string& path, const std::vector<double>& rgb, int width,
                   int height);
std::vector<double> read_rgb_png(const std::string& path, int* width, int* height);

void write_label_png(const std::string& path, const std::vector<uint8_t>& labels, int width,
                     int height, const std::vector<std::array<uint8_t, 3>>& palette);
std::vector<uint8_t> read_label_png(const std::string& path, int* width, int* height);

void write_pfm(const std::string& path, const std::vector<double>& values, int width, int height);
std::vector<double> read_pfm(const std::string& path, int* width, int* height);

}  // namespace nsrf
