#pragma once

#include <cstdint>
#include <vector>

#include "pns/image_io.hpp"

namespace pns {

/// Binary mask, values 0/1.
struct BinaryMask {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> data;

    BinaryMask() = default;
    BinaryMask(int64_t h, int64_t w) : height(h), width(w), data(static_cast<size_t>(h * w), 0) {}

    uint8_t at(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * width + x)]; }
    uint8_t& at(int64_t y, int64_t x) { return data[static_cast<size_t>(y * width + x)]; }
    int64_t size() const { return height * width; }
    int64_t count() const;
};

/// Dense double map, typically probabilities in [0,1].
struct GrayMapD {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<double> data;

    GrayMapD() = default;
    GrayMapD(int64_t h, int64_t w, double fill = 0.0)
        : height(h), width(w), data(static_cast<size_t>(h * w), fill) {}

    double at(int64_t y, int64_t x) const { return data[static_cast<size_t>(y * width + x)]; }
    double& at(int64_t y, int64_t x) { return data[static_cast<size_t>(y * width + x)]; }
    int64_t size() const { return height * width; }
};

/// Grayscale image -> mask; pixels >= 128 are foreground.
BinaryMask mask_from_image(const ImageU8& image);
ImageU8 mask_to_image(const BinaryMask& mask);

/// Grayscale image -> [0,1] map (value/255).
GrayMapD graymap_from_image(const ImageU8& image);
/// [0,1] map -> 8-bit image, value = round(255*p).
ImageU8 graymap_to_image(const GrayMapD& map);

/// Exact Euclidean distance transform: for every pixel, the distance to the
/// nearest foreground pixel and that pixel's flat index. Foreground pixels
/// get distance 0 and themselves. Mask must contain at least one foreground
/// pixel.
void euclidean_distance_transform(const BinaryMask& mask, std::vector<double>& distance,
                                  std::vector<int64_t>& nearest);

} // namespace pns
