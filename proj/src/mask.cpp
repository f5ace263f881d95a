#include "pns/mask.hpp"

#include <cmath>
#include <limits>

#include "pns/error.hpp"

namespace pns {

int64_t BinaryMask::count() const {
    int64_t n = 0;
    for (uint8_t v : data) n += v ? 1 : 0;
    return n;
}

BinaryMask mask_from_image(const ImageU8& image) {
    if (image.channels != 1)
        throw Error(ErrorCode::invalid_argument, "mask images must be single channel");
    BinaryMask m(image.height, image.width);
    for (size_t i = 0; i < image.pixels.size(); ++i) m.data[i] = image.pixels[i] >= 128 ? 1 : 0;
    return m;
}

ImageU8 mask_to_image(const BinaryMask& mask) {
    ImageU8 img;
    img.height = mask.height;
    img.width = mask.width;
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(mask.size()));
    for (size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = mask.data[i] ? 255 : 0;
    return img;
}

GrayMapD graymap_from_image(const ImageU8& image) {
    if (image.channels != 1)
        throw Error(ErrorCode::invalid_argument, "prediction images must be single channel");
    GrayMapD m(image.height, image.width);
    for (size_t i = 0; i < image.pixels.size(); ++i)
        m.data[i] = static_cast<double>(image.pixels[i]) / 255.0;
    return m;
}

ImageU8 graymap_to_image(const GrayMapD& map) {
    ImageU8 img;
    img.height = map.height;
    img.width = map.width;
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(map.size()));
    for (size_t i = 0; i < img.pixels.size(); ++i) {
        double v = map.data[i];
        if (v < 0.0) v = 0.0;
        if (v > 1.0) v = 1.0;
        img.pixels[i] = static_cast<uint8_t>(std::lround(v * 255.0));
    }
    return img;
}

namespace {

// 1D squared-distance lower envelope (Felzenszwalb-Huttenlocher), carrying
// the argmin origin of each winning parabola.
void edt_1d(const std::vector<double>& f, const std::vector<int64_t>& origin, int64_t n,
            std::vector<double>& out_d, std::vector<int64_t>& out_origin) {
    std::vector<int64_t> v(static_cast<size_t>(n));
    std::vector<double> z(static_cast<size_t>(n + 1));
    const double inf = std::numeric_limits<double>::infinity();
    int64_t k = 0;
    v[0] = 0;
    z[0] = -inf;
    z[1] = inf;
    for (int64_t q = 1; q < n; ++q) {
        if (f[static_cast<size_t>(q)] == inf) continue;
        while (true) {
            const int64_t p = v[static_cast<size_t>(k)];
            if (f[static_cast<size_t>(p)] == inf) {
                if (k == 0) {
                    v[0] = q;
                    z[0] = -inf;
                    z[1] = inf;
                    break;
                }
                --k;
                continue;
            }
            const double s = ((f[static_cast<size_t>(q)] + static_cast<double>(q * q)) -
                              (f[static_cast<size_t>(p)] + static_cast<double>(p * p))) /
                             (2.0 * static_cast<double>(q - p));
            if (s <= z[static_cast<size_t>(k)]) {
                if (k == 0) {
                    v[0] = q;
                    z[0] = -inf;
                    z[1] = inf;
                    break;
                }
                --k;
            } else {
                ++k;
                v[static_cast<size_t>(k)] = q;
                z[static_cast<size_t>(k)] = s;
                z[static_cast<size_t>(k + 1)] = inf;
                break;
            }
        }
    }
    int64_t kk = 0;
    for (int64_t q = 0; q < n; ++q) {
        while (z[static_cast<size_t>(kk + 1)] < static_cast<double>(q)) ++kk;
        const int64_t p = v[static_cast<size_t>(kk)];
        if (f[static_cast<size_t>(p)] == inf) {
            out_d[static_cast<size_t>(q)] = inf;
            out_origin[static_cast<size_t>(q)] = -1;
        } else {
            const double dq = static_cast<double>(q - p);
            out_d[static_cast<size_t>(q)] = dq * dq + f[static_cast<size_t>(p)];
            out_origin[static_cast<size_t>(q)] = origin[static_cast<size_t>(p)];
        }
    }
}

} // namespace

void euclidean_distance_transform(const BinaryMask& mask, std::vector<double>& distance,
                                  std::vector<int64_t>& nearest) {
    const int64_t H = mask.height, W = mask.width;
    if (mask.count() == 0)
        throw Error(ErrorCode::invalid_argument, "distance transform of an empty mask");
    const double inf = std::numeric_limits<double>::infinity();

    // Pass 1: per row, squared distance to the nearest foreground in that row.
    std::vector<double> rowd(static_cast<size_t>(H * W), inf);
    std::vector<int64_t> rowsrc(static_cast<size_t>(H * W), -1);
    for (int64_t y = 0; y < H; ++y) {
        std::vector<double> f(static_cast<size_t>(W), inf);
        std::vector<int64_t> origin(static_cast<size_t>(W), -1);
        for (int64_t x = 0; x < W; ++x) {
            if (mask.at(y, x)) {
                f[static_cast<size_t>(x)] = 0.0;
                origin[static_cast<size_t>(x)] = y * W + x;
            }
        }
        std::vector<double> od(static_cast<size_t>(W));
        std::vector<int64_t> oo(static_cast<size_t>(W));
        edt_1d(f, origin, W, od, oo);
        for (int64_t x = 0; x < W; ++x) {
            rowd[static_cast<size_t>(y * W + x)] = od[static_cast<size_t>(x)];
            rowsrc[static_cast<size_t>(y * W + x)] = oo[static_cast<size_t>(x)];
        }
    }

    // Pass 2: per column over the row results.
    distance.assign(static_cast<size_t>(H * W), 0.0);
    nearest.assign(static_cast<size_t>(H * W), -1);
    for (int64_t x = 0; x < W; ++x) {
        std::vector<double> f(static_cast<size_t>(H));
        std::vector<int64_t> origin(static_cast<size_t>(H));
        for (int64_t y = 0; y < H; ++y) {
            f[static_cast<size_t>(y)] = rowd[static_cast<size_t>(y * W + x)];
            origin[static_cast<size_t>(y)] = rowsrc[static_cast<size_t>(y * W + x)];
        }
        std::vector<double> od(static_cast<size_t>(H));
        std::vector<int64_t> oo(static_cast<size_t>(H));
        edt_1d(f, origin, H, od, oo);
        for (int64_t y = 0; y < H; ++y) {
            distance[static_cast<size_t>(y * W + x)] = std::sqrt(od[static_cast<size_t>(y)]);
            nearest[static_cast<size_t>(y * W + x)] = oo[static_cast<size_t>(y)];
        }
    }
}

} // namespace pns
