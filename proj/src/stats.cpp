#include "pns/stats.hpp"

#include <algorithm>
#include <cmath>

#include "pns/error.hpp"

namespace pns {

GrayMapD center_bias_map(const std::vector<const BinaryMask*>& masks, int64_t out_height,
                         int64_t out_width) {
    if (masks.empty()) throw Error(ErrorCode::invalid_argument, "center bias of an empty dataset");
    if (out_height < 1 || out_width < 1)
        throw Error(ErrorCode::invalid_argument, "center bias output size");
    GrayMapD acc(out_height, out_width, 0.0);
    for (const BinaryMask* m : masks) {
        for (int64_t y = 0; y < out_height; ++y) {
            const int64_t sy = std::min(m->height - 1, y * m->height / out_height);
            for (int64_t x = 0; x < out_width; ++x) {
                const int64_t sx = std::min(m->width - 1, x * m->width / out_width);
                acc.at(y, x) += m->at(sy, sx) ? 1.0 : 0.0;
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(masks.size());
    for (double& v : acc.data) v *= inv;
    return acc;
}

std::vector<double> size_ratios(const std::vector<BinaryMask>& masks) {
    std::vector<double> out;
    out.reserve(masks.size());
    for (const auto& m : masks)
        out.push_back(static_cast<double>(m.count()) / static_cast<double>(m.size()));
    return out;
}

namespace {

constexpr int kBins = 32;
constexpr double kBandRadius = 15.0;

// Normalized 3x32-bin histogram over the selected pixels.
std::vector<double> rgb_histogram(const ImageU8& frame, const std::vector<uint8_t>& select) {
    std::vector<double> hist(static_cast<size_t>(3 * kBins), 0.0);
    int64_t n = 0;
    for (int64_t i = 0; i < frame.height * frame.width; ++i) {
        if (!select[static_cast<size_t>(i)]) continue;
        ++n;
        for (int64_t c = 0; c < 3; ++c) {
            const int bin = frame.pixels[static_cast<size_t>(i * 3 + c)] * kBins / 256;
            hist[static_cast<size_t>(c * kBins + bin)] += 1.0;
        }
    }
    if (n > 0)
        for (double& v : hist) v /= static_cast<double>(3 * n);
    return hist;
}

double chi2_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double s = a[i] + b[i];
        if (s > 0.0) acc += (a[i] - b[i]) * (a[i] - b[i]) / s;
    }
    return 0.5 * acc;
}

struct Centroid {
    double x = 0, y = 0;
};

Centroid centroid_of(const BinaryMask& m) {
    Centroid c;
    int64_t n = 0;
    for (int64_t y = 0; y < m.height; ++y)
        for (int64_t x = 0; x < m.width; ++x)
            if (m.at(y, x)) {
                c.x += static_cast<double>(x);
                c.y += static_cast<double>(y);
                ++n;
            }
    c.x /= static_cast<double>(n);
    c.y /= static_cast<double>(n);
    return c;
}

int64_t bbox_area(const BinaryMask& m) {
    int64_t x0 = m.width, y0 = m.height, x1 = -1, y1 = -1;
    for (int64_t y = 0; y < m.height; ++y)
        for (int64_t x = 0; x < m.width; ++x)
            if (m.at(y, x)) {
                x0 = std::min(x0, x);
                y0 = std::min(y0, y);
                x1 = std::max(x1, x);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) return 0;
    return (x1 - x0 + 1) * (y1 - y0 + 1);
}

bool touches_border(const BinaryMask& m) {
    for (int64_t x = 0; x < m.width; ++x)
        if (m.at(0, x) || m.at(m.height - 1, x)) return true;
    for (int64_t y = 0; y < m.height; ++y)
        if (m.at(y, 0) || m.at(y, m.width - 1)) return true;
    return false;
}

} // namespace

ContrastStats contrast_stats(const ImageU8& frame, const BinaryMask& mask) {
    if (frame.channels != 3)
        throw Error(ErrorCode::invalid_argument, "contrast_stats expects an RGB frame");
    if (frame.height != mask.height || frame.width != mask.width)
        throw Error(ErrorCode::shape_mismatch, "frame and mask sizes differ");
    ContrastStats out;
    const int64_t n = mask.size();
    const int64_t fg = mask.count();
    if (fg == 0 || fg == n) {
        out.flagged = true;
        return out;
    }

    std::vector<uint8_t> fg_sel(static_cast<size_t>(n)), bg_sel(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        fg_sel[static_cast<size_t>(i)] = mask.data[static_cast<size_t>(i)];
        bg_sel[static_cast<size_t>(i)] = mask.data[static_cast<size_t>(i)] ? 0 : 1;
    }
    out.global_chi2 = chi2_distance(rgb_histogram(frame, fg_sel), rgb_histogram(frame, bg_sel));

    // Band within 15 px of the boundary: distance to the opposite region.
    std::vector<double> dist_to_fg, dist_to_bg;
    std::vector<int64_t> scratch;
    euclidean_distance_transform(mask, dist_to_fg, scratch);
    BinaryMask inverted(mask.height, mask.width);
    for (int64_t i = 0; i < n; ++i)
        inverted.data[static_cast<size_t>(i)] = mask.data[static_cast<size_t>(i)] ? 0 : 1;
    euclidean_distance_transform(inverted, dist_to_bg, scratch);

    std::vector<uint8_t> fg_band(static_cast<size_t>(n), 0), bg_band(static_cast<size_t>(n), 0);
    int64_t nfg = 0, nbg = 0;
    for (int64_t i = 0; i < n; ++i) {
        if (mask.data[static_cast<size_t>(i)]) {
            if (dist_to_bg[static_cast<size_t>(i)] <= kBandRadius) {
                fg_band[static_cast<size_t>(i)] = 1;
                ++nfg;
            }
        } else if (dist_to_fg[static_cast<size_t>(i)] <= kBandRadius) {
            bg_band[static_cast<size_t>(i)] = 1;
            ++nbg;
        }
    }
    if (nfg == 0 || nbg == 0) {
        out.flagged = true;
        return out;
    }
    out.local_chi2 = chi2_distance(rgb_histogram(frame, fg_band), rgb_histogram(frame, bg_band));
    return out;
}

std::vector<std::string> auto_attributes(const std::vector<BinaryMask>& masks) {
    std::vector<std::string> tags;
    if (masks.empty()) return tags;

    // Frames with empty masks are skipped in centroid/bbox statistics.
    double ratio_sum = 0.0;
    std::vector<Centroid> centroids;
    std::vector<bool> nonempty;
    std::vector<int64_t> areas;
    bool any_border = false;
    for (const auto& m : masks) {
        ratio_sum += static_cast<double>(m.count()) / static_cast<double>(m.size());
        const bool has_fg = m.count() > 0;
        nonempty.push_back(has_fg);
        centroids.push_back(has_fg ? centroid_of(m) : Centroid{});
        if (has_fg) {
            areas.push_back(bbox_area(m));
            if (touches_border(m)) any_border = true;
        }
    }
    const double mean_ratio = ratio_sum / static_cast<double>(masks.size());

    double step_sum = 0.0;
    int64_t steps = 0;
    for (size_t i = 0; i + 1 < masks.size(); ++i) {
        if (!nonempty[i] || !nonempty[i + 1]) continue;
        step_sum += std::hypot(centroids[i + 1].x - centroids[i].x,
                               centroids[i + 1].y - centroids[i].y);
        ++steps;
    }

    if (steps > 0 && step_sum / static_cast<double>(steps) > 20.0) tags.push_back("FM");
    if (mean_ratio < 0.05) tags.push_back("SO");
    if (mean_ratio > 0.15) tags.push_back("LO");
    if (areas.size() >= 2) {
        const auto [mn, mx] = std::minmax_element(areas.begin(), areas.end());
        if (static_cast<double>(*mn) / static_cast<double>(*mx) < 0.5) tags.push_back("SV");
    }
    if (any_border) tags.push_back("OV");
    return tags;
}

} // namespace pns
