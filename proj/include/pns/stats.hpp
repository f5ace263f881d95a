#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pns/image_io.hpp"
#include "pns/mask.hpp"

namespace pns {

/// Nearest-neighbor resize of every mask to out_size, averaged; values in
/// [0,1]. Empty clip list is an error.
GrayMapD center_bias_map(const std::vector<const BinaryMask*>& masks, int64_t out_height,
                         int64_t out_width);

/// Foreground ratio |G|/(H*W) per frame.
std::vector<double> size_ratios(const std::vector<BinaryMask>& masks);

struct ContrastStats {
    double global_chi2 = 0.0;
    double local_chi2 = 0.0;
    bool flagged = false; // empty foreground or background
};

/// Chi-square distance between 32-bin-per-channel RGB histograms of
/// foreground vs background; local variant restricted to a 15 px band
/// around the mask boundary.
ContrastStats contrast_stats(const ImageU8& frame, const BinaryMask& mask);

/// Quantitative attribute tags computable from masks alone:
/// FM (mean consecutive centroid step > 20 px), SO (mean ratio < 0.05),
/// LO (mean ratio > 0.15), SV (min pairwise bbox-area ratio < 0.5),
/// OV (any frame's foreground touches the border).
std::vector<std::string> auto_attributes(const std::vector<BinaryMask>& masks);

} // namespace pns
