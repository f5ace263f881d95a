#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "pns/stats.hpp"
#include "test_util.hpp"

using namespace pns;

namespace {

BinaryMask rect_mask(int64_t h, int64_t w, int64_t y0, int64_t x0, int64_t y1, int64_t x1) {
    BinaryMask m(h, w);
    for (int64_t y = y0; y <= y1; ++y)
        for (int64_t x = x0; x <= x1; ++x) m.at(y, x) = 1;
    return m;
}

// Paint exactly n pixels in scan order starting away from the border.
BinaryMask pixels_mask(int64_t h, int64_t w, int64_t n) {
    BinaryMask m(h, w);
    int64_t painted = 0;
    for (int64_t y = 2; y < h - 2 && painted < n; ++y)
        for (int64_t x = 2; x < w - 2 && painted < n; ++x) {
            m.at(y, x) = 1;
            ++painted;
        }
    return m;
}

std::vector<BinaryMask> translated_clip(int64_t h, int64_t w, int64_t frames, int64_t step) {
    std::vector<BinaryMask> masks;
    for (int64_t f = 0; f < frames; ++f)
        masks.push_back(rect_mask(h, w, 10, 10 + f * step, 19, 19 + f * step));
    return masks;
}

bool has_tag(const std::vector<std::string>& tags, const char* t) {
    return std::find(tags.begin(), tags.end(), t) != tags.end();
}

} // namespace

TEST_CASE("center_bias_map basics") {
    BinaryMask m = rect_mask(16, 16, 4, 4, 11, 11);
    const GrayMapD one = center_bias_map({&m}, 16, 16);
    for (int64_t i = 0; i < m.size(); ++i)
        CHECK(one.data[static_cast<size_t>(i)] == (m.data[static_cast<size_t>(i)] ? 1.0 : 0.0));

    BinaryMask a(8, 8), b(8, 8);
    for (int64_t i = 0; i < 64; ++i) {
        a.data[static_cast<size_t>(i)] = i % 2 == 0;
        b.data[static_cast<size_t>(i)] = i % 2 == 1;
    }
    const GrayMapD mixed = center_bias_map({&a, &b}, 8, 8);
    for (double v : mixed.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-15));

    // Mean of the map equals the mean foreground ratio at native size.
    BinaryMask c = rect_mask(16, 16, 0, 0, 7, 7);
    const GrayMapD bias = center_bias_map({&m, &c}, 16, 16);
    double mean = 0;
    for (double v : bias.data) mean += v;
    mean /= static_cast<double>(bias.size());
    const double ratio = (static_cast<double>(m.count()) / 256.0 +
                          static_cast<double>(c.count()) / 256.0) / 2.0;
    CHECK(mean == doctest::Approx(ratio).epsilon(1e-6));

    CHECK_THROWS_AS(center_bias_map({}, 8, 8), Error);
}

TEST_CASE("size_ratios") {
    BinaryMask full(10, 10);
    for (auto& v : full.data) v = 1;
    BinaryMask empty(10, 10);
    BinaryMask quarter = rect_mask(10, 10, 0, 0, 4, 4); // 25 px of 100
    const auto r = size_ratios({full, empty, quarter});
    CHECK(r[0] == 1.0);
    CHECK(r[1] == 0.0);
    CHECK(r[2] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("contrast_stats") {
    // Identically colored foreground and background -> zero contrast.
    ImageU8 flat;
    flat.height = 20;
    flat.width = 20;
    flat.channels = 3;
    flat.pixels.assign(static_cast<size_t>(20 * 20 * 3), 100);
    BinaryMask m = rect_mask(20, 20, 6, 6, 13, 13);
    const ContrastStats flat_stats = contrast_stats(flat, m);
    CHECK(!flat_stats.flagged);
    CHECK(flat_stats.global_chi2 == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(flat_stats.local_chi2 == doctest::Approx(0.0).epsilon(1e-15));

    // White object on black background -> maximal chi-square (1.0).
    ImageU8 hard = flat;
    for (int64_t y = 0; y < 20; ++y)
        for (int64_t x = 0; x < 20; ++x)
            for (int64_t c = 0; c < 3; ++c) hard.at(y, x, c) = m.at(y, x) ? 255 : 0;
    const ContrastStats hard_stats = contrast_stats(hard, m);
    CHECK(hard_stats.global_chi2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hard_stats.local_chi2 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hard_stats.global_chi2 >= 0.0);

    const ContrastStats flagged = contrast_stats(flat, BinaryMask(20, 20));
    CHECK(flagged.flagged);
}

TEST_CASE("auto_attributes motion threshold") {
    // 25 px/frame drift -> FM; constant clip -> no FM, no SV.
    const auto moving = translated_clip(40, 120, 4, 25);
    CHECK(has_tag(auto_attributes(moving), "FM"));

    const auto steady = translated_clip(40, 60, 4, 0);
    const auto tags = auto_attributes(steady);
    CHECK(!has_tag(tags, "FM"));
    CHECK(!has_tag(tags, "SV"));

    // Straddle 20 px: 19 no, 21 yes.
    CHECK(!has_tag(auto_attributes(translated_clip(40, 110, 4, 19)), "FM"));
    CHECK(has_tag(auto_attributes(translated_clip(40, 115, 4, 21)), "FM"));
}

TEST_CASE("auto_attributes size thresholds") {
    // 100x100 frames: ratios are exact pixel counts / 10000.
    const auto make_clip = [](int64_t px) {
        return std::vector<BinaryMask>{pixels_mask(100, 100, px), pixels_mask(100, 100, px)};
    };
    CHECK(has_tag(auto_attributes(make_clip(490)), "SO"));  // 0.049
    CHECK(!has_tag(auto_attributes(make_clip(510)), "SO")); // 0.051
    CHECK(!has_tag(auto_attributes(make_clip(1490)), "LO")); // 0.149
    CHECK(has_tag(auto_attributes(make_clip(1510)), "LO"));  // 0.151
    // SO and LO are mutually exclusive by construction.
    const auto t = auto_attributes(make_clip(1000));
    CHECK(!has_tag(t, "SO"));
    CHECK(!has_tag(t, "LO"));
}

TEST_CASE("auto_attributes scale variation straddles 0.5") {
    // bbox areas 100 vs 49 -> ratio 0.49 -> SV; 100 vs 51 (3x17) -> 0.51 -> no SV.
    std::vector<BinaryMask> sv = {rect_mask(60, 60, 10, 10, 19, 19),
                                  rect_mask(60, 60, 10, 10, 16, 16)};
    CHECK(has_tag(auto_attributes(sv), "SV"));
    std::vector<BinaryMask> no_sv = {rect_mask(60, 60, 10, 10, 19, 19),
                                     rect_mask(60, 60, 10, 10, 12, 26)};
    CHECK(!has_tag(auto_attributes(no_sv), "SV"));
}

TEST_CASE("auto_attributes out-of-view") {
    std::vector<BinaryMask> inside = {rect_mask(30, 30, 5, 5, 10, 10)};
    CHECK(!has_tag(auto_attributes(inside), "OV"));
    std::vector<BinaryMask> touching = {rect_mask(30, 30, 0, 5, 6, 10)};
    CHECK(has_tag(auto_attributes(touching), "OV"));
}

TEST_CASE("auto_attributes invariant to frame reversal") {
    auto clip = translated_clip(60, 120, 5, 12);
    clip.push_back(rect_mask(60, 120, 20, 30, 24, 34)); // small late blob
    auto tags_fwd = auto_attributes(clip);
    std::reverse(clip.begin(), clip.end());
    auto tags_rev = auto_attributes(clip);
    std::sort(tags_fwd.begin(), tags_fwd.end());
    std::sort(tags_rev.begin(), tags_rev.end());
    CHECK(tags_fwd == tags_rev);
}

TEST_CASE("auto_attributes skips empty frames in centroid statistics") {
    std::vector<BinaryMask> clip = translated_clip(40, 120, 3, 25);
    clip.insert(clip.begin() + 1, BinaryMask(40, 120)); // empty frame between
    const auto tags = auto_attributes(clip);
    // Steps across the gap are skipped; remaining consecutive pair moves 25.
    CHECK(has_tag(tags, "FM"));
}
