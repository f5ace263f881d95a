#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pns/error.hpp"

namespace pns {

/// 8-bit interleaved image; channels is 1 (PGM) or 3 (PPM).
struct ImageU8 {
    int64_t height = 0;
    int64_t width = 0;
    int64_t channels = 1;
    std::vector<uint8_t> pixels;

    int64_t size() const { return height * width * channels; }
    uint8_t at(int64_t y, int64_t x, int64_t c = 0) const {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
    uint8_t& at(int64_t y, int64_t x, int64_t c = 0) {
        return pixels[static_cast<size_t>((y * width + x) * channels + c)];
    }
};

/// Binary PGM (P5) or PPM (P6), maxval 255.
ImageU8 read_pnm(const std::string& path);
void write_pnm(const std::string& path, const ImageU8& image);

} // namespace pns
