#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>

#include "pns/metrics.hpp"
#include "test_util.hpp"

using namespace pns;

namespace {

GrayMapD from_mask(const BinaryMask& m) {
    GrayMapD p(m.height, m.width);
    for (int64_t i = 0; i < m.size(); ++i) p.data[static_cast<size_t>(i)] = m.data[static_cast<size_t>(i)] ? 1.0 : 0.0;
    return p;
}

BinaryMask blob(int64_t h, int64_t w, int64_t cy, int64_t cx, int64_t ry, int64_t rx) {
    BinaryMask m(h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double ey = static_cast<double>(y - cy) / static_cast<double>(ry);
            const double ex = static_cast<double>(x - cx) / static_cast<double>(rx);
            if (ey * ey + ex * ex <= 1.0) m.at(y, x) = 1;
        }
    return m;
}

BinaryMask random_mask(std::mt19937_64& rng, int64_t h, int64_t w, double density) {
    std::uniform_real_distribution<double> u(0, 1);
    BinaryMask m(h, w);
    for (auto& v : m.data) v = u(rng) < density ? 1 : 0;
    return m;
}

GrayMapD random_pred(std::mt19937_64& rng, int64_t h, int64_t w) {
    std::uniform_real_distribution<double> u(0, 1);
    GrayMapD p(h, w);
    for (auto& v : p.data) v = u(rng);
    return p;
}

double dice_at(const GrayMapD& pred, const BinaryMask& gt, int t) {
    const BinaryMask pt = binarize(pred, t);
    int64_t inter = 0;
    for (int64_t i = 0; i < gt.size(); ++i)
        inter += (pt.data[static_cast<size_t>(i)] && gt.data[static_cast<size_t>(i)]) ? 1 : 0;
    const int64_t denom = pt.count() + gt.count();
    return denom == 0 ? 1.0 : 2.0 * static_cast<double>(inter) / static_cast<double>(denom);
}

} // namespace

TEST_CASE("binarize thresholds follow the rounding rule") {
    GrayMapD p(1, 3);
    p.data = {0.0, 0.5, 1.0};
    CHECK(binarize(p, 0).count() == 3); // t=0 -> all positive
    const BinaryMask t128 = binarize(p, 128);
    CHECK(t128.data[0] == 0);
    CHECK(t128.data[1] == 1); // round(255*0.5)=128 >= 128
    CHECK(t128.data[2] == 1);
    const BinaryMask t255 = binarize(p, 255);
    CHECK(t255.count() == 1);
    GrayMapD below(1, 2);
    below.data = {0.99, 0.5};
    CHECK(binarize(below, 255).count() == 0);
}

TEST_CASE("dice_max closed forms") {
    BinaryMask g = blob(32, 32, 16, 16, 7, 9);
    CHECK(dice_max(from_mask(g), g) == 1.0);

    // Disjoint at every threshold.
    BinaryMask g2(16, 16);
    for (int64_t y = 0; y < 4; ++y)
        for (int64_t x = 0; x < 4; ++x) g2.at(y, x) = 1;
    GrayMapD p(16, 16);
    for (int64_t y = 12; y < 16; ++y)
        for (int64_t x = 12; x < 16; ++x) p.at(y, x) = 1.0;
    CHECK(dice_max(p, g2) == 0.0);

    // |P_t| = |G| = 100 with overlap 50 at the maximizing threshold.
    BinaryMask g3(20, 20);
    for (int64_t i = 0; i < 100; ++i) g3.data[static_cast<size_t>(i)] = 1; // rows 0..4
    GrayMapD p3(20, 20);
    for (int64_t i = 50; i < 150; ++i) p3.data[static_cast<size_t>(i)] = 1.0;
    CHECK(dice_max(p3, g3) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("sensitivity_mean closed forms") {
    BinaryMask g = blob(24, 24, 12, 12, 5, 5);
    CHECK(sensitivity_mean(from_mask(g), g) == doctest::Approx(1.0).epsilon(1e-12));

    GrayMapD superset = from_mask(g);
    for (auto& v : superset.data) v = std::max(v, 1.0); // P_t covers everything
    CHECK(sensitivity_mean(superset, g) == doctest::Approx(1.0).epsilon(1e-12));

    GrayMapD zero(24, 24);
    CHECK(sensitivity_mean(zero, g) == doctest::Approx(0.0).epsilon(1e-12));

    // P_t covers exactly half of G at every threshold.
    BinaryMask g2(10, 10);
    for (int64_t i = 0; i < 40; ++i) g2.data[static_cast<size_t>(i)] = 1;
    GrayMapD half(10, 10);
    for (int64_t i = 0; i < 20; ++i) half.data[static_cast<size_t>(i)] = 1.0;
    CHECK(sensitivity_mean(half, g2) == doctest::Approx(0.5).epsilon(1e-12));

    CHECK_THROWS_AS(sensitivity_mean(zero, BinaryMask(24, 24)), Error);
}

TEST_CASE("fbeta_mean closed forms") {
    // Prc = 1, Rcl = 0.5, beta^2 = 0.3 -> 0.8125 at every threshold.
    BinaryMask g(10, 10);
    for (int64_t i = 0; i < 40; ++i) g.data[static_cast<size_t>(i)] = 1;
    GrayMapD p(10, 10);
    for (int64_t i = 0; i < 20; ++i) p.data[static_cast<size_t>(i)] = 1.0;
    CHECK(fbeta_mean(p, g) == doctest::Approx(0.8125).epsilon(1e-12));

    // Prc = Rcl = r -> r.
    BinaryMask g2(10, 10);
    for (int64_t i = 0; i < 50; ++i) g2.data[static_cast<size_t>(i)] = 1;
    GrayMapD p2(10, 10);
    for (int64_t i = 30; i < 80; ++i) p2.data[static_cast<size_t>(i)] = 1.0; // overlap 20, r=0.4
    CHECK(fbeta_mean(p2, g2) == doctest::Approx(0.4).epsilon(1e-12));

    CHECK(fbeta_mean(from_mask(g2), g2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("weighted_fbeta identity and complement") {
    BinaryMask g = blob(40, 48, 20, 24, 8, 10); // well inside the border
    CHECK(weighted_fbeta(from_mask(g), g) == doctest::Approx(1.0).epsilon(1e-9));

    GrayMapD comp(40, 48);
    for (int64_t i = 0; i < g.size(); ++i)
        comp.data[static_cast<size_t>(i)] = g.data[static_cast<size_t>(i)] ? 0.0 : 1.0;
    CHECK(weighted_fbeta(comp, g) == doctest::Approx(0.0).epsilon(1e-12));

    CHECK_THROWS_AS(weighted_fbeta(comp, BinaryMask(40, 48)), Error);
}

TEST_CASE("weighted_fbeta stays below the best-threshold F1 on simple blobs") {
    std::mt19937_64 rng(7);
    int ok = 0;
    const int trials = 20;
    for (int trial = 0; trial < trials; ++trial) {
        BinaryMask g = blob(32, 32, 14 + static_cast<int64_t>(rng() % 5),
                            14 + static_cast<int64_t>(rng() % 5), 5, 6);
        GrayMapD p = random_pred(rng, 32, 32);
        double best_f1 = 0;
        for (int t = 1; t <= 255; t += 16) {
            const BinaryMask pt = binarize(p, t);
            int64_t inter = 0;
            for (int64_t i = 0; i < g.size(); ++i)
                inter += (pt.data[static_cast<size_t>(i)] && g.data[static_cast<size_t>(i)]) ? 1 : 0;
            const double prc = pt.count() ? static_cast<double>(inter) / pt.count() : 0.0;
            const double rcl = static_cast<double>(inter) / g.count();
            if (prc + rcl > 0) best_f1 = std::max(best_f1, 2 * prc * rcl / (prc + rcl));
        }
        if (weighted_fbeta(p, g) <= best_f1 + 1e-9) ++ok;
    }
    CHECK(ok > trials / 2); // median relation
}

TEST_CASE("s_measure identity and degenerate conventions") {
    BinaryMask g = blob(32, 40, 16, 20, 7, 9);
    CHECK(s_measure(from_mask(g), g) == doctest::Approx(1.0).epsilon(1e-9));

    BinaryMask empty(16, 16);
    GrayMapD zero(16, 16);
    CHECK(s_measure(zero, empty) == doctest::Approx(1.0).epsilon(1e-12)); // 1 - mean(P)

    GrayMapD ones(16, 16, 1.0);
    BinaryMask full(16, 16);
    for (auto& v : full.data) v = 1;
    CHECK(s_measure(ones, full) == doctest::Approx(1.0).epsilon(1e-12)); // mean(P)
    CHECK(s_measure(ones, empty) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("s_measure degrades under salt noise") {
    std::mt19937_64 rng(11);
    BinaryMask g = blob(32, 32, 16, 16, 8, 8);
    std::vector<double> medians;
    for (double noise : {0.0, 0.15, 0.4}) {
        std::vector<double> scores;
        for (int trial = 0; trial < 20; ++trial) {
            GrayMapD p = from_mask(g);
            std::uniform_real_distribution<double> u(0, 1);
            for (auto& v : p.data)
                if (u(rng) < noise) v = 1.0 - v;
            scores.push_back(s_measure(p, g));
        }
        std::sort(scores.begin(), scores.end());
        medians.push_back(scores[scores.size() / 2]);
    }
    CHECK(medians[0] >= medians[1]);
    CHECK(medians[1] >= medians[2]);
}

TEST_CASE("e_measure_mean identity, complement, bounds") {
    BinaryMask g = blob(24, 30, 12, 15, 6, 8);
    CHECK(e_measure_mean(from_mask(g), g) == doctest::Approx(1.0).epsilon(1e-9));

    GrayMapD comp(24, 30);
    for (int64_t i = 0; i < g.size(); ++i)
        comp.data[static_cast<size_t>(i)] = g.data[static_cast<size_t>(i)] ? 0.0 : 1.0;
    CHECK(e_measure_mean(comp, g) == doctest::Approx(0.0).epsilon(1e-9));

    std::mt19937_64 rng(13);
    for (int trial = 0; trial < 20; ++trial) {
        const double e = e_measure_mean(random_pred(rng, 12, 14), random_mask(rng, 12, 14, 0.3));
        CHECK(e >= 0.0);
        CHECK(e <= 1.0);
    }
}

TEST_CASE("all six metrics are 1 for P=G and bounded on random pairs") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        BinaryMask g = blob(28, 26, 13 + static_cast<int64_t>(rng() % 3),
                            12 + static_cast<int64_t>(rng() % 3), 5, 6);
        const FrameScores s = evaluate_frame(from_mask(g), g);
        CHECK(s.dice == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.sen == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.fbeta == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.wfbeta == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.smeasure == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(s.emeasure == doctest::Approx(1.0).epsilon(1e-9));
    }
    for (int trial = 0; trial < 50; ++trial) {
        BinaryMask g = random_mask(rng, 10, 12, 0.35);
        if (g.count() == 0) g.at(5, 5) = 1;
        GrayMapD p = random_pred(rng, 10, 12);
        const FrameScores s = evaluate_frame(p, g);
        for (double v : {s.dice, s.sen, s.fbeta, s.wfbeta, s.smeasure, s.emeasure}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
}

TEST_CASE("dice_max dominates any fixed threshold; means stay within per-threshold bounds") {
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        BinaryMask g = random_mask(rng, 14, 14, 0.3);
        if (g.count() == 0) g.at(7, 7) = 1;
        GrayMapD p = random_pred(rng, 14, 14);
        const double dmax = dice_max(p, g);
        for (int t : {1, 32, 128, 200, 255}) CHECK(dmax >= dice_at(p, g, t) - 1e-12);
    }
}

TEST_CASE("dice and weighted_fbeta are invariant under frame isometries") {
    std::mt19937_64 rng(23);
    BinaryMask g = blob(26, 26, 12, 14, 6, 5);
    GrayMapD p = random_pred(rng, 26, 26);
    // Make the prediction loosely related to g so scores are non-trivial.
    for (int64_t i = 0; i < g.size(); ++i)
        if (g.data[static_cast<size_t>(i)]) p.data[static_cast<size_t>(i)] =
            std::min(1.0, p.data[static_cast<size_t>(i)] + 0.4);

    auto flip_h = [](auto grid, auto get, auto set) {
        auto out = grid;
        for (int64_t y = 0; y < grid.height; ++y)
            for (int64_t x = 0; x < grid.width; ++x) set(out, y, grid.width - 1 - x, get(grid, y, x));
        return out;
    };
    GrayMapD pf = flip_h(p, [](const GrayMapD& m, int64_t y, int64_t x) { return m.at(y, x); },
                         [](GrayMapD& m, int64_t y, int64_t x, double v) { m.at(y, x) = v; });
    BinaryMask gf = flip_h(g, [](const BinaryMask& m, int64_t y, int64_t x) { return m.at(y, x); },
                           [](BinaryMask& m, int64_t y, int64_t x, uint8_t v) { m.at(y, x) = v; });
    CHECK(dice_max(pf, gf) == doctest::Approx(dice_max(p, g)).epsilon(1e-12));
    CHECK(weighted_fbeta(pf, gf) == doctest::Approx(weighted_fbeta(p, g)).epsilon(1e-12));
}

TEST_CASE("monotone degradation under pixel flipping for every metric") {
    std::mt19937_64 rng(29);
    const std::vector<double> fractions = {0.0, 0.1, 0.25, 0.5};
    std::vector<std::vector<double>> medians(6);
    for (double f : fractions) {
        std::vector<std::vector<double>> scores(6);
        for (int trial = 0; trial < 20; ++trial) {
            BinaryMask g = blob(24, 24, 11 + static_cast<int64_t>(rng() % 3),
                                11 + static_cast<int64_t>(rng() % 3), 6, 7);
            GrayMapD p = from_mask(g);
            std::uniform_real_distribution<double> u(0, 1);
            for (auto& v : p.data)
                if (u(rng) < f) v = 1.0 - v;
            const FrameScores s = evaluate_frame(p, g);
            const double all[6] = {s.dice, s.sen, s.fbeta, s.wfbeta, s.smeasure, s.emeasure};
            for (int m = 0; m < 6; ++m) scores[static_cast<size_t>(m)].push_back(all[m]);
        }
        for (int m = 0; m < 6; ++m) {
            auto& v = scores[static_cast<size_t>(m)];
            std::sort(v.begin(), v.end());
            medians[static_cast<size_t>(m)].push_back(v[v.size() / 2]);
        }
    }
    for (int m = 0; m < 6; ++m)
        for (size_t i = 1; i < fractions.size(); ++i)
            CHECK(medians[static_cast<size_t>(m)][i] <=
                  medians[static_cast<size_t>(m)][i - 1] + 1e-12);
}

TEST_CASE("empty-GT frames are flagged and excluded from sen/wfbeta") {
    GrayMapD p(8, 8);
    const FrameScores s = evaluate_frame(p, BinaryMask(8, 8));
    CHECK(s.empty_gt);
    CHECK(s.dice == 1.0); // empty prediction vs empty gt at every threshold

    BinaryMask g(8, 8);
    g.at(4, 4) = 1;
    GrayMapD p1 = from_mask(g);
    const ClipScores clip =
        aggregate_frames("c", {}, {evaluate_frame(p1, g), evaluate_frame(p, BinaryMask(8, 8))});
    CHECK(clip.frames == 2);
    CHECK(clip.flagged_empty == 1);
    CHECK(clip.sen == doctest::Approx(1.0)); // only the positive frame counts
}

TEST_CASE("dataset aggregation is the unweighted mean of clip scores") {
    ClipScores a;
    a.clip_id = "a";
    a.frames = 1;
    a.dice = a.sen = a.fbeta = a.wfbeta = a.smeasure = a.emeasure = 0.4;
    ClipScores b = a;
    b.clip_id = "b";
    b.frames = 7; // different length must not matter
    b.dice = b.sen = b.fbeta = b.wfbeta = b.smeasure = b.emeasure = 0.8;
    MetricReport r1 = aggregate_clips({a, b}, false);
    CHECK(r1.dataset.dice == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(r1.dataset.sen == doctest::Approx(0.6).epsilon(1e-12));
    MetricReport r2 = aggregate_clips({b, a}, false); // order invariant
    CHECK(r2.dataset.dice == doctest::Approx(r1.dataset.dice).epsilon(1e-15));

    // Attribute breakdown over a single tagged clip reproduces that clip.
    a.attributes = {"FM"};
    MetricReport r3 = aggregate_clips({a, b}, true);
    REQUIRE(r3.per_attribute.size() == 1);
    CHECK(r3.per_attribute[0].clip_id == "ATTR:FM");
    CHECK(r3.per_attribute[0].dice == doctest::Approx(0.4).epsilon(1e-12));
}

TEST_CASE("single clip single frame dataset equals the frame score") {
    BinaryMask g = blob(16, 16, 8, 8, 4, 4);
    const FrameScores f = evaluate_frame(from_mask(g), g);
    const ClipScores clip = aggregate_frames("only", {}, {f});
    const MetricReport r = aggregate_clips({clip}, false);
    CHECK(r.dataset.dice == doctest::Approx(f.dice).epsilon(1e-15));
    CHECK(r.dataset.emeasure == doctest::Approx(f.emeasure).epsilon(1e-15));
}

TEST_CASE("euclidean distance transform matches brute force") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 25; ++trial) {
        BinaryMask m = random_mask(rng, 9, 11, 0.15);
        if (m.count() == 0) m.at(static_cast<int64_t>(rng() % 9), static_cast<int64_t>(rng() % 11)) = 1;
        std::vector<double> dist;
        std::vector<int64_t> nearest;
        euclidean_distance_transform(m, dist, nearest);
        for (int64_t y = 0; y < 9; ++y)
            for (int64_t x = 0; x < 11; ++x) {
                double best = 1e18;
                for (int64_t fy = 0; fy < 9; ++fy)
                    for (int64_t fx = 0; fx < 11; ++fx)
                        if (m.at(fy, fx))
                            best = std::min(best, std::hypot(static_cast<double>(y - fy),
                                                             static_cast<double>(x - fx)));
                CHECK(dist[static_cast<size_t>(y * 11 + x)] == doctest::Approx(best).epsilon(1e-9));
                const int64_t n = nearest[static_cast<size_t>(y * 11 + x)];
                REQUIRE(n >= 0);
                CHECK(m.data[static_cast<size_t>(n)] == 1);
                const double nd = std::hypot(static_cast<double>(y - n / 11),
                                             static_cast<double>(x - n % 11));
                CHECK(nd == doctest::Approx(best).epsilon(1e-9));
            }
    }
}
