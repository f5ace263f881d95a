#include "pns/annotate.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <random>

#include "pns/error.hpp"

namespace pns {

BinaryMask mask_to_boundary(const BinaryMask& mask) {
    const int64_t H = mask.height, W = mask.width;
    BinaryMask out(H, W);
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            if (!mask.at(y, x)) continue;
            bool has_bg_neighbor = false;
            for (int64_t dy = -1; dy <= 1 && !has_bg_neighbor; ++dy)
                for (int64_t dx = -1; dx <= 1; ++dx) {
                    const int64_t ny = y + dy, nx = x + dx;
                    if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                    if (!mask.at(ny, nx)) {
                        has_bg_neighbor = true;
                        break;
                    }
                }
            out.at(y, x) = has_bg_neighbor ? 1 : 0;
        }
    }
    return out;
}

Bbox mask_to_bbox(const BinaryMask& mask) {
    Bbox b{mask.width, mask.height, -1, -1};
    for (int64_t y = 0; y < mask.height; ++y)
        for (int64_t x = 0; x < mask.width; ++x)
            if (mask.at(y, x)) {
                b.x_min = std::min(b.x_min, x);
                b.y_min = std::min(b.y_min, y);
                b.x_max = std::max(b.x_max, x);
                b.y_max = std::max(b.y_max, y);
            }
    if (b.x_max < 0) throw Error(ErrorCode::invalid_argument, "bbox of an empty mask");
    return b;
}

namespace {

// Rasterize y = f(x) (or x = f(y) when transposed) by fine parameter
// stepping; rejects curves that break 8-adjacency between samples.
bool rasterize_polynomial(const std::vector<double>& coeffs, double p0, double p1, bool transposed,
                          const BinaryMask& region, bool inside,
                          std::vector<std::pair<int64_t, int64_t>>& pixels) {
    pixels.clear();
    if (p1 < p0) std::swap(p0, p1);
    const double step = 0.05;
    int64_t last_x = -1000000, last_y = -1000000;
    for (double p = p0; p <= p1 + 1e-9; p += step) {
        double q = 0.0;
        for (size_t i = 0; i < coeffs.size(); ++i) q += coeffs[i] * std::pow(p, static_cast<double>(i));
        const int64_t x = transposed ? std::llround(q) : std::llround(p);
        const int64_t y = transposed ? std::llround(p) : std::llround(q);
        if (x == last_x && y == last_y) continue;
        if (x < 0 || x >= region.width || y < 0 || y >= region.height) return false;
        const bool in_fg = region.at(y, x) != 0;
        if (in_fg != inside) return false;
        if (!pixels.empty() &&
            (std::abs(x - last_x) > 1 || std::abs(y - last_y) > 1))
            return false; // adjacency broken (too steep for this step)
        pixels.emplace_back(x, y);
        last_x = x;
        last_y = y;
    }
    return pixels.size() >= 2;
}

// Lagrange interpolation through 2 or 3 points -> polynomial coefficients.
std::vector<double> fit_polynomial(const std::vector<double>& xs, const std::vector<double>& ys) {
    if (xs.size() == 2) {
        const double slope = (ys[1] - ys[0]) / (xs[1] - xs[0]);
        return {ys[0] - slope * xs[0], slope};
    }
    // Quadratic through three points.
    const double x0 = xs[0], x1 = xs[1], x2 = xs[2];
    const double d0 = (x0 - x1) * (x0 - x2);
    const double d1 = (x1 - x0) * (x1 - x2);
    const double d2 = (x2 - x0) * (x2 - x1);
    const double a = ys[0] / d0 + ys[1] / d1 + ys[2] / d2;
    const double b = -(ys[0] * (x1 + x2) / d0 + ys[1] * (x0 + x2) / d1 + ys[2] * (x0 + x1) / d2);
    const double c = ys[0] * x1 * x2 / d0 + ys[1] * x0 * x2 / d1 + ys[2] * x0 * x1 / d2;
    return {c, b, a};
}

BinaryMask curve_in_region(const BinaryMask& mask, bool inside, std::mt19937_64& rng,
                           const char* what) {
    // Bounding box of the target region.
    BinaryMask region(mask.height, mask.width);
    for (int64_t i = 0; i < mask.size(); ++i)
        region.data[static_cast<size_t>(i)] = mask.data[static_cast<size_t>(i)];
    Bbox box{mask.width, mask.height, -1, -1};
    for (int64_t y = 0; y < mask.height; ++y)
        for (int64_t x = 0; x < mask.width; ++x)
            if ((mask.at(y, x) != 0) == inside) {
                box.x_min = std::min(box.x_min, x);
                box.y_min = std::min(box.y_min, y);
                box.x_max = std::max(box.x_max, x);
                box.y_max = std::max(box.y_max, y);
            }
    if (box.x_max < 0)
        throw Error(ErrorCode::invalid_argument, std::string("scribble region empty: ") + what);
    const double diag = std::hypot(static_cast<double>(box.x_max - box.x_min + 1),
                                   static_cast<double>(box.y_max - box.y_min + 1));
    const size_t min_pixels = static_cast<size_t>(std::max(2.0, std::ceil(0.2 * diag)));

    std::uniform_int_distribution<int> degree_pick(1, 2);
    std::uniform_int_distribution<int> orient_pick(0, 1);
    std::uniform_real_distribution<double> xr(static_cast<double>(box.x_min),
                                              static_cast<double>(box.x_max));
    std::uniform_real_distribution<double> yr(static_cast<double>(box.y_min),
                                              static_cast<double>(box.y_max));

    for (int attempt = 0; attempt < 400; ++attempt) {
        const int degree = degree_pick(rng);
        const bool transposed = orient_pick(rng) == 1;
        const int npts = degree + 1;
        std::vector<double> ps, qs;
        for (int i = 0; i < npts; ++i) {
            ps.push_back(transposed ? yr(rng) : xr(rng));
            qs.push_back(transposed ? xr(rng) : yr(rng));
        }
        // Distinct abscissae keep the fit well posed.
        std::sort(ps.begin(), ps.end());
        bool degenerate = false;
        for (int i = 1; i < npts; ++i)
            if (std::abs(ps[static_cast<size_t>(i)] - ps[static_cast<size_t>(i - 1)]) < 1.5)
                degenerate = true;
        if (degenerate) continue;

        const auto coeffs = fit_polynomial(ps, qs);
        std::vector<std::pair<int64_t, int64_t>> pixels;
        if (!rasterize_polynomial(coeffs, ps.front(), ps.back(), transposed, region, inside,
                                  pixels))
            continue;
        if (pixels.size() < min_pixels) continue;

        BinaryMask curve(mask.height, mask.width);
        for (auto [x, y] : pixels) curve.at(y, x) = 1;
        return curve;
    }
    throw Error(ErrorCode::invalid_argument,
                std::string("could not place a scribble curve in the ") + what + " region");
}

} // namespace

ScribblePair generate_scribble(const BinaryMask& mask, uint64_t seed) {
    const int64_t fg = mask.count();
    if (fg == 0 || fg == mask.size())
        throw Error(ErrorCode::invalid_argument,
                    "scribbles need both foreground and background pixels");
    std::mt19937_64 rng(seed);
    ScribblePair out;
    out.foreground = curve_in_region(mask, true, rng, "foreground");
    out.background = curve_in_region(mask, false, rng, "background");
    return out;
}

namespace {

double point_segment_distance(double px, double py, double ax, double ay, double bx, double by) {
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    if (len2 == 0.0) return std::hypot(px - ax, py - ay);
    double t = ((px - ax) * vx + (py - ay) * vy) / len2;
    t = std::min(1.0, std::max(0.0, t));
    return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

void dp_recurse(const std::vector<std::pair<int64_t, int64_t>>& pts, size_t first, size_t last,
                double epsilon, std::vector<bool>& keep) {
    if (last <= first + 1) return;
    double worst = -1.0;
    size_t worst_i = first;
    for (size_t i = first + 1; i < last; ++i) {
        const double d = point_segment_distance(
            static_cast<double>(pts[i].first), static_cast<double>(pts[i].second),
            static_cast<double>(pts[first].first), static_cast<double>(pts[first].second),
            static_cast<double>(pts[last].first), static_cast<double>(pts[last].second));
        if (d > worst) {
            worst = d;
            worst_i = i;
        }
    }
    if (worst > epsilon) {
        keep[worst_i] = true;
        dp_recurse(pts, first, worst_i, epsilon, keep);
        dp_recurse(pts, worst_i, last, epsilon, keep);
    }
}

} // namespace

Polyline douglas_peucker(const Polyline& line, double epsilon) {
    if (epsilon < 0.0) throw Error(ErrorCode::invalid_argument, "douglas_peucker epsilon < 0");
    const auto& pts = line.vertices;
    if (pts.size() < 3) return line;
    std::vector<bool> keep(pts.size(), false);
    keep.front() = keep.back() = true;
    dp_recurse(pts, 0, pts.size() - 1, epsilon, keep);
    Polyline out;
    out.closed = line.closed;
    for (size_t i = 0; i < pts.size(); ++i)
        if (keep[i]) out.vertices.push_back(pts[i]);
    return out;
}

namespace {

// Moore-neighbor tracing of the component containing `start` (its scan-order
// first pixel). Clockwise neighborhood; stops when the start pixel recurs
// with the original backtrack (Jacob's criterion).
Polyline moore_trace(const BinaryMask& mask, int64_t start_y, int64_t start_x) {
    // Clockwise from west.
    static const int dy[8] = {0, -1, -1, -1, 0, 1, 1, 1};
    static const int dx[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
    auto fg = [&](int64_t y, int64_t x) {
        return y >= 0 && y < mask.height && x >= 0 && x < mask.width && mask.at(y, x) != 0;
    };
    auto dir_of = [](int64_t ddx, int64_t ddy) {
        for (int i = 0; i < 8; ++i)
            if (dx[i] == ddx && dy[i] == ddy) return i;
        return 0;
    };

    Polyline out;
    out.closed = true;
    out.vertices.emplace_back(start_x, start_y);

    // Scan order guarantees the west neighbor is background (or off-image).
    int64_t cx = start_x, cy = start_y;
    int64_t bx = start_x - 1, by = start_y;
    const int64_t init_bx = bx, init_by = by;
    const int64_t max_steps = 4 * mask.size() + 8;
    for (int64_t step = 0; step < max_steps; ++step) {
        const int bdir = dir_of(bx - cx, by - cy);
        int found = -1;
        for (int i = 1; i <= 8; ++i) {
            const int d = (bdir + i) % 8;
            const int64_t nx = cx + dx[d], ny = cy + dy[d];
            if (fg(ny, nx)) {
                found = d;
                break;
            }
            bx = nx;
            by = ny;
        }
        if (found < 0) break; // isolated pixel
        cx += dx[found];
        cy += dy[found];
        if (cx == start_x && cy == start_y && bx == init_bx && by == init_by)
            break; // traversal state repeats
        out.vertices.emplace_back(cx, cy);
    }
    while (out.vertices.size() > 1 && out.vertices.back() == out.vertices.front())
        out.vertices.pop_back();
    return out;
}

std::vector<std::pair<int64_t, int64_t>> component_seeds(const BinaryMask& mask) {
    const int64_t H = mask.height, W = mask.width;
    std::vector<int32_t> label(static_cast<size_t>(H * W), 0);
    std::vector<std::pair<int64_t, int64_t>> seeds;
    int32_t next = 0;
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            if (!mask.at(y, x) || label[static_cast<size_t>(y * W + x)]) continue;
            ++next;
            seeds.emplace_back(y, x);
            std::deque<std::pair<int64_t, int64_t>> queue{{y, x}};
            label[static_cast<size_t>(y * W + x)] = next;
            while (!queue.empty()) {
                auto [qy, qx] = queue.front();
                queue.pop_front();
                for (int64_t ddy = -1; ddy <= 1; ++ddy)
                    for (int64_t ddx = -1; ddx <= 1; ++ddx) {
                        const int64_t ny = qy + ddy, nx = qx + ddx;
                        if (ny < 0 || ny >= H || nx < 0 || nx >= W) continue;
                        if (!mask.at(ny, nx) || label[static_cast<size_t>(ny * W + nx)]) continue;
                        label[static_cast<size_t>(ny * W + nx)] = next;
                        queue.emplace_back(ny, nx);
                    }
            }
        }
    }
    return seeds;
}

Polyline simplify_closed(const Polyline& contour, double epsilon) {
    if (contour.vertices.size() <= 3) return contour;
    // Split the ring at vertex 0 and the vertex farthest from it, simplify
    // both chains, and rejoin.
    const auto& pts = contour.vertices;
    size_t far_i = 1;
    double best = -1.0;
    for (size_t i = 1; i < pts.size(); ++i) {
        const double d = std::hypot(static_cast<double>(pts[i].first - pts[0].first),
                                    static_cast<double>(pts[i].second - pts[0].second));
        if (d > best) {
            best = d;
            far_i = i;
        }
    }
    Polyline chain1, chain2;
    chain1.vertices.assign(pts.begin(), pts.begin() + static_cast<int64_t>(far_i) + 1);
    chain2.vertices.assign(pts.begin() + static_cast<int64_t>(far_i), pts.end());
    chain2.vertices.push_back(pts.front());
    Polyline s1 = douglas_peucker(chain1, epsilon);
    Polyline s2 = douglas_peucker(chain2, epsilon);
    Polyline out;
    out.closed = true;
    out.vertices = s1.vertices;
    for (size_t i = 1; i + 1 < s2.vertices.size(); ++i) out.vertices.push_back(s2.vertices[i]);
    return out;
}

} // namespace

std::vector<Polyline> trace_components(const BinaryMask& mask) {
    std::vector<Polyline> out;
    for (auto [y, x] : component_seeds(mask)) out.push_back(moore_trace(mask, y, x));
    return out;
}

Polyline mask_to_polygon(const BinaryMask& mask, double epsilon) {
    auto seeds = component_seeds(mask);
    if (seeds.empty()) throw Error(ErrorCode::invalid_argument, "polygon of an empty mask");
    if (seeds.size() > 1)
        throw Error(ErrorCode::invalid_argument,
                    "mask_to_polygon expects a single component; use mask_to_polygons");
    Polyline contour = moore_trace(mask, seeds[0].first, seeds[0].second);
    if (contour.vertices.size() < 2)
        throw Error(ErrorCode::invalid_argument, "component too small for a polygon");
    return simplify_closed(contour, epsilon);
}

std::vector<Polyline> mask_to_polygons(const BinaryMask& mask, double epsilon_min,
                                       double epsilon_max, uint64_t seed) {
    if (epsilon_min < 0 || epsilon_max < epsilon_min)
        throw Error(ErrorCode::invalid_argument, "polygon epsilon range");
    auto seeds = component_seeds(mask);
    if (seeds.empty()) throw Error(ErrorCode::invalid_argument, "polygon of an empty mask");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> eps_pick(epsilon_min, epsilon_max);
    std::vector<Polyline> out;
    for (auto [y, x] : seeds) {
        const double eps = eps_pick(rng);
        Polyline contour = moore_trace(mask, y, x);
        if (contour.vertices.size() < 2) continue; // single-pixel speck
        out.push_back(simplify_closed(contour, eps));
    }
    return out;
}

namespace {

void draw_segment(BinaryMask& img, int64_t x0, int64_t y0, int64_t x1, int64_t y1) {
    const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int64_t err = dx + dy;
    while (true) {
        if (y0 >= 0 && y0 < img.height && x0 >= 0 && x0 < img.width) img.at(y0, x0) = 1;
        if (x0 == x1 && y0 == y1) break;
        const int64_t e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

} // namespace

BinaryMask rasterize_polyline(const Polyline& line, int64_t height, int64_t width) {
    BinaryMask out(height, width);
    const auto& v = line.vertices;
    if (v.empty()) return out;
    for (size_t i = 0; i + 1 < v.size(); ++i)
        draw_segment(out, v[i].first, v[i].second, v[i + 1].first, v[i + 1].second);
    if (line.closed && v.size() > 1)
        draw_segment(out, v.back().first, v.back().second, v.front().first, v.front().second);
    if (v.size() == 1 && v[0].second >= 0 && v[0].second < height && v[0].first >= 0 &&
        v[0].first < width)
        out.at(v[0].second, v[0].first) = 1;
    return out;
}

BinaryMask rasterize_polygon_fill(const Polyline& polygon, int64_t height, int64_t width) {
    BinaryMask out = rasterize_polyline(polygon, height, width);
    const auto& v = polygon.vertices;
    if (v.size() < 3) return out;
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            if (out.at(y, x)) continue;
            // Even-odd crossing test at the pixel center.
            bool inside = false;
            for (size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
                const double yi = static_cast<double>(v[i].second);
                const double yj = static_cast<double>(v[j].second);
                const double xi = static_cast<double>(v[i].first);
                const double xj = static_cast<double>(v[j].first);
                if ((yi > y) != (yj > y)) {
                    const double cross = (xj - xi) * (y - yi) / (yj - yi) + xi;
                    if (x < cross) inside = !inside;
                }
            }
            if (inside) out.at(y, x) = 1;
        }
    }
    return out;
}

} // namespace pns
