#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fsad {

struct Mask {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> values; // 1 = anomalous, row-major
};

/// Reads any PNG; a pixel is anomalous when any of its channels is nonzero.
Mask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const std::filesystem::path& path, const Mask& mask);

/// Writes a 16-bit grayscale PNG from row-major samples.
void write_gray16_png(const std::filesystem::path& path, std::size_t height, std::size_t width,
                      const std::vector<std::uint16_t>& samples);

} // namespace fsad
