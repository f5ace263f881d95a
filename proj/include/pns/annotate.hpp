#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pns/mask.hpp"

namespace pns {

struct Polyline {
    std::vector<std::pair<int64_t, int64_t>> vertices; // (x, y)
    bool closed = false;
};

/// Inner morphological boundary: foreground pixels with a background
/// 8-neighbor (out-of-image neighbors count as foreground, so a full mask
/// has no boundary).
BinaryMask mask_to_boundary(const BinaryMask& mask);

struct Bbox {
    int64_t x_min = 0, y_min = 0, x_max = 0, y_max = 0;
};

/// Tight bounds of the foreground. Empty mask is an error.
Bbox mask_to_bbox(const BinaryMask& mask);

struct ScribblePair {
    BinaryMask foreground;
    BinaryMask background;
};

/// One seeded degree-1-or-2 polynomial curve strictly inside the foreground
/// and one strictly inside the background, each at least 20% of its region's
/// bbox diagonal long. Rejection-sampled; failure after the retry budget is
/// an error.
ScribblePair generate_scribble(const BinaryMask& mask, uint64_t seed);

Polyline douglas_peucker(const Polyline& line, double epsilon);

/// Moore-neighbor boundary traces of all 8-connected components, in scan
/// order of their top-left foreground pixel.
std::vector<Polyline> trace_components(const BinaryMask& mask);

/// Contour trace of a single-component mask simplified at the given epsilon.
Polyline mask_to_polygon(const BinaryMask& mask, double epsilon);

/// Per-component polygons with epsilon drawn per component from
/// [epsilon_min, epsilon_max] using the seed.
std::vector<Polyline> mask_to_polygons(const BinaryMask& mask, double epsilon_min,
                                       double epsilon_max, uint64_t seed);

/// Scanline even-odd fill of a closed polygon.
BinaryMask rasterize_polygon_fill(const Polyline& polygon, int64_t height, int64_t width);
/// Polygon edges drawn at one-pixel width.
BinaryMask rasterize_polyline(const Polyline& line, int64_t height, int64_t width);

} // namespace pns
