#include "pns/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "pns/error.hpp"

namespace pns {

namespace {

constexpr double kEps = 2.220446049250313e-16; // IEEE double epsilon

void require_same_size(const GrayMapD& pred, const BinaryMask& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw Error(ErrorCode::shape_mismatch, "prediction and ground truth sizes differ");
    for (double v : pred.data)
        if (v < 0.0 || v > 1.0)
            throw Error(ErrorCode::invalid_argument, "prediction values must lie in [0,1]");
}

int byte_level(double p) { return static_cast<int>(std::lround(p * 255.0)); }

// Cumulative byte histograms: counts of prediction pixels with
// round(255*p) >= t, split by ground-truth label.
struct ThresholdCounts {
    std::array<int64_t, 256> tp{}; // |P_t intersect G|, t >= 1
    std::array<int64_t, 256> pp{}; // |P_t|, t >= 1
    int64_t fg = 0;                // |G|
    int64_t total = 0;

    int64_t tp_at(int t) const { return t == 0 ? fg : tp[static_cast<size_t>(t)]; }
    int64_t pp_at(int t) const { return t == 0 ? total : pp[static_cast<size_t>(t)]; }
};

ThresholdCounts threshold_counts(const GrayMapD& pred, const BinaryMask& gt) {
    std::array<int64_t, 256> hist_fg{}, hist_bg{};
    const int64_t n = pred.size();
    for (int64_t i = 0; i < n; ++i) {
        const int b = byte_level(pred.data[static_cast<size_t>(i)]);
        if (gt.data[static_cast<size_t>(i)])
            ++hist_fg[static_cast<size_t>(b)];
        else
            ++hist_bg[static_cast<size_t>(b)];
    }
    ThresholdCounts c;
    c.total = n;
    int64_t cum_fg = 0, cum_bg = 0;
    for (int t = 255; t >= 1; --t) {
        cum_fg += hist_fg[static_cast<size_t>(t)];
        cum_bg += hist_bg[static_cast<size_t>(t)];
        c.tp[static_cast<size_t>(t)] = cum_fg;
        c.pp[static_cast<size_t>(t)] = cum_fg + cum_bg;
    }
    c.fg = cum_fg + hist_fg[0];
    return c;
}

// Enhanced-alignment score for one binarized prediction given confusion
// counts; follows the reference construction with the paper's 1/(W*H)
// normalization.
double e_phi_from_counts(int64_t tp, int64_t pp, int64_t fg, int64_t total) {
    if (fg == 0) return static_cast<double>(total - pp) / static_cast<double>(total);
    if (fg == total) return static_cast<double>(pp) / static_cast<double>(total);
    const double mu_p = static_cast<double>(pp) / static_cast<double>(total);
    const double mu_g = static_cast<double>(fg) / static_cast<double>(total);
    const double phi_p_fg = 1.0 - mu_p, phi_p_bg = -mu_p;
    const double phi_g_fg = 1.0 - mu_g, phi_g_bg = -mu_g;
    auto enhanced = [](double a, double b) {
        const double xi = 2.0 * a * b / (a * a + b * b + kEps);
        const double e = (xi + 1.0) * (xi + 1.0) / 4.0;
        return e;
    };
    const int64_t fp = pp - tp;
    const int64_t fn = fg - tp;
    const int64_t tn = total - pp - fn;
    double sum = 0.0;
    sum += static_cast<double>(tp) * enhanced(phi_g_fg, phi_p_fg);
    sum += static_cast<double>(fp) * enhanced(phi_g_bg, phi_p_fg);
    sum += static_cast<double>(fn) * enhanced(phi_g_fg, phi_p_bg);
    sum += static_cast<double>(tn) * enhanced(phi_g_bg, phi_p_bg);
    return sum / static_cast<double>(total);
}

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double mean_of(const GrayMapD& m) {
    double s = 0;
    for (double v : m.data) s += v;
    return s / static_cast<double>(m.size());
}

// ---- S-measure internals (Fan et al. structure measure) -------------------

double object_score(const std::vector<double>& values) {
    // 2*mean / (mean^2 + 1 + std + eps), std with N-1 normalization.
    if (values.empty()) return 0.0;
    double mean = 0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double sd = 0.0;
    if (values.size() > 1) {
        double acc = 0;
        for (double v : values) acc += (v - mean) * (v - mean);
        sd = std::sqrt(acc / static_cast<double>(values.size() - 1));
    }
    return 2.0 * mean / (mean * mean + 1.0 + sd + kEps);
}

double s_object(const GrayMapD& pred, const BinaryMask& gt) {
    std::vector<double> fg, bg;
    fg.reserve(static_cast<size_t>(gt.count()));
    for (int64_t i = 0; i < gt.size(); ++i) {
        if (gt.data[static_cast<size_t>(i)])
            fg.push_back(pred.data[static_cast<size_t>(i)]);
        else
            bg.push_back(1.0 - pred.data[static_cast<size_t>(i)]);
    }
    const double u = static_cast<double>(gt.count()) / static_cast<double>(gt.size());
    return u * object_score(fg) + (1.0 - u) * object_score(bg);
}

// Region SSIM of one quadrant (Fan's variant).
double region_ssim(const double* pred, const uint8_t* gt, int64_t stride, int64_t h, int64_t w) {
    const int64_t n = h * w;
    if (n == 0) return 0.0;
    double x = 0, y = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            x += pred[r * stride + c];
            y += gt[r * stride + c] ? 1.0 : 0.0;
        }
    x /= static_cast<double>(n);
    y /= static_cast<double>(n);
    double sx = 0, sy = 0, sxy = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            const double dp = pred[r * stride + c] - x;
            const double dg = (gt[r * stride + c] ? 1.0 : 0.0) - y;
            sx += dp * dp;
            sy += dg * dg;
            sxy += dp * dg;
        }
    const double denom_n = static_cast<double>(n - 1) + kEps;
    sx /= denom_n;
    sy /= denom_n;
    sxy /= denom_n;
    const double alpha = 4.0 * x * y * sxy;
    const double beta = (x * x + y * y) * (sx + sy);
    if (alpha != 0.0) return alpha / (beta + kEps);
    if (beta == 0.0) return 1.0;
    return 0.0;
}

double s_region(const GrayMapD& pred, const BinaryMask& gt) {
    // Foreground centroid, 1-based rounded as in the reference code.
    const int64_t H = gt.height, W = gt.width;
    int64_t cnt = 0;
    double sx = 0, sy = 0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x)
            if (gt.at(y, x)) {
                ++cnt;
                sx += static_cast<double>(x + 1);
                sy += static_cast<double>(y + 1);
            }
    int64_t X = cnt == 0 ? std::llround(static_cast<double>(W) / 2.0)
                         : std::llround(sx / static_cast<double>(cnt));
    int64_t Y = cnt == 0 ? std::llround(static_cast<double>(H) / 2.0)
                         : std::llround(sy / static_cast<double>(cnt));
    X = std::min(std::max<int64_t>(X, 1), W);
    Y = std::min(std::max<int64_t>(Y, 1), H);

    struct Quad {
        int64_t y0, x0, h, w;
    };
    const Quad quads[4] = {
        {0, 0, Y, X},
        {0, X, Y, W - X},
        {Y, 0, H - Y, X},
        {Y, X, H - Y, W - X},
    };
    const double total = static_cast<double>(H * W);
    double score = 0.0;
    for (const Quad& q : quads) {
        const double weight = static_cast<double>(q.h * q.w) / total;
        if (q.h == 0 || q.w == 0) continue;
        const double* p = pred.data.data() + q.y0 * W + q.x0;
        const uint8_t* g = gt.data.data() + q.y0 * W + q.x0;
        score += weight * region_ssim(p, g, W, q.h, q.w);
    }
    return score;
}

} // namespace

BinaryMask binarize(const GrayMapD& pred, int threshold) {
    if (threshold < 0 || threshold > 255)
        throw Error(ErrorCode::invalid_argument, "binarize threshold must be in 0..255");
    BinaryMask out(pred.height, pred.width);
    for (int64_t i = 0; i < pred.size(); ++i)
        out.data[static_cast<size_t>(i)] =
            threshold == 0 || byte_level(pred.data[static_cast<size_t>(i)]) >= threshold ? 1 : 0;
    return out;
}

double dice_max(const GrayMapD& pred, const BinaryMask& gt) {
    require_same_size(pred, gt);
    const ThresholdCounts c = threshold_counts(pred, gt);
    double best = 0.0;
    for (int t = 1; t <= 255; ++t) {
        const int64_t denom = c.pp_at(t) + c.fg;
        const double dice = denom == 0 ? 1.0
                                       : 2.0 * static_cast<double>(c.tp_at(t)) /
                                             static_cast<double>(denom);
        best = std::max(best, dice);
    }
    return best;
}

double sensitivity_mean(const GrayMapD& pred, const BinaryMask& gt) {
    require_same_size(pred, gt);
    const ThresholdCounts c = threshold_counts(pred, gt);
    if (c.fg == 0)
        throw Error(ErrorCode::invalid_argument, "sensitivity undefined for empty ground truth");
    double sum = 0.0;
    for (int t = 1; t <= 255; ++t)
        sum += static_cast<double>(c.tp_at(t)) / static_cast<double>(c.fg);
    return sum / 255.0;
}

double fbeta_mean(const GrayMapD& pred, const BinaryMask& gt, double beta2) {
    require_same_size(pred, gt);
    const ThresholdCounts c = threshold_counts(pred, gt);
    double sum = 0.0;
    for (int t = 1; t <= 255; ++t) {
        const int64_t pp = c.pp_at(t), tp = c.tp_at(t);
        const double prc = pp > 0 ? static_cast<double>(tp) / static_cast<double>(pp) : 0.0;
        const double rcl = c.fg > 0 ? static_cast<double>(tp) / static_cast<double>(c.fg) : 0.0;
        const double denom = beta2 * prc + rcl;
        sum += denom > 0.0 ? (1.0 + beta2) * prc * rcl / denom : 0.0;
    }
    return sum / 255.0;
}

double weighted_fbeta(const GrayMapD& pred, const BinaryMask& gt) {
    require_same_size(pred, gt);
    const int64_t H = gt.height, W = gt.width, n = gt.size();
    const int64_t fg_count = gt.count();
    if (fg_count == 0)
        throw Error(ErrorCode::invalid_argument, "weighted F-beta undefined for empty ground truth");

    std::vector<double> E(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        E[static_cast<size_t>(i)] =
            std::abs(pred.data[static_cast<size_t>(i)] -
                     (gt.data[static_cast<size_t>(i)] ? 1.0 : 0.0));

    std::vector<double> dist;
    std::vector<int64_t> nearest;
    euclidean_distance_transform(gt, dist, nearest);

    // Background pixels adopt the error of their closest foreground pixel.
    std::vector<double> Et = E;
    for (int64_t i = 0; i < n; ++i)
        if (!gt.data[static_cast<size_t>(i)])
            Et[static_cast<size_t>(i)] = E[static_cast<size_t>(nearest[static_cast<size_t>(i)])];

    // 7x7 Gaussian (sigma 5), zero-padded convolution.
    double kernel[7][7];
    double ksum = 0.0;
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j) {
            const double dy = i - 3, dx = j - 3;
            kernel[i][j] = std::exp(-(dy * dy + dx * dx) / (2.0 * 25.0));
            ksum += kernel[i][j];
        }
    for (auto& row : kernel)
        for (double& v : row) v /= ksum;

    std::vector<double> EA(static_cast<size_t>(n), 0.0);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int i = 0; i < 7; ++i) {
                const int64_t sy = y + i - 3;
                if (sy < 0 || sy >= H) continue;
                for (int j = 0; j < 7; ++j) {
                    const int64_t sx = x + j - 3;
                    if (sx < 0 || sx >= W) continue;
                    acc += kernel[i][j] * Et[static_cast<size_t>(sy * W + sx)];
                }
            }
            EA[static_cast<size_t>(y * W + x)] = acc;
        }

    const double decay = std::log(0.5) / 5.0;
    double sum_ew_fg = 0.0, sum_ew_bg = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double min_e = E[static_cast<size_t>(i)];
        double b = 1.0;
        if (gt.data[static_cast<size_t>(i)]) {
            if (EA[static_cast<size_t>(i)] < min_e) min_e = EA[static_cast<size_t>(i)];
        } else {
            b = 2.0 - std::exp(decay * dist[static_cast<size_t>(i)]);
        }
        const double ew = min_e * b;
        if (gt.data[static_cast<size_t>(i)])
            sum_ew_fg += ew;
        else
            sum_ew_bg += ew;
    }

    const double tpw = static_cast<double>(fg_count) - sum_ew_fg;
    const double fpw = sum_ew_bg;
    const double recall = 1.0 - sum_ew_fg / static_cast<double>(fg_count);
    const double precision = tpw / (kEps + tpw + fpw);
    const double q = 2.0 * recall * precision / (kEps + recall + precision);
    return clamp01(q);
}

double s_measure(const GrayMapD& pred, const BinaryMask& gt, double alpha) {
    require_same_size(pred, gt);
    const int64_t fg = gt.count();
    GrayMapD p = pred;
    if (fg == 0) return clamp01(1.0 - mean_of(p));
    if (fg == gt.size()) return clamp01(mean_of(p));
    const double q = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt);
    return clamp01(q);
}

double e_measure_mean(const GrayMapD& pred, const BinaryMask& gt) {
    require_same_size(pred, gt);
    const ThresholdCounts c = threshold_counts(pred, gt);
    double sum = 0.0;
    for (int t = 1; t <= 255; ++t)
        sum += e_phi_from_counts(c.tp_at(t), c.pp_at(t), c.fg, c.total);
    return sum / 255.0;
}

FrameScores evaluate_frame(const GrayMapD& pred, const BinaryMask& gt) {
    FrameScores s;
    s.dice = dice_max(pred, gt);
    s.fbeta = fbeta_mean(pred, gt);
    s.smeasure = s_measure(pred, gt);
    s.emeasure = e_measure_mean(pred, gt);
    if (gt.count() == 0) {
        s.empty_gt = true;
    } else {
        s.sen = sensitivity_mean(pred, gt);
        s.wfbeta = weighted_fbeta(pred, gt);
    }
    return s;
}

ClipScores aggregate_frames(const std::string& clip_id, const std::vector<std::string>& attributes,
                            const std::vector<FrameScores>& frames) {
    ClipScores c;
    c.clip_id = clip_id;
    c.attributes = attributes;
    c.frames = static_cast<int64_t>(frames.size());
    for (const auto& f : frames) {
        c.dice += f.dice;
        c.fbeta += f.fbeta;
        c.smeasure += f.smeasure;
        c.emeasure += f.emeasure;
        if (f.empty_gt) {
            ++c.flagged_empty;
        } else {
            c.sen += f.sen;
            c.wfbeta += f.wfbeta;
        }
    }
    const double nf = static_cast<double>(c.frames);
    if (c.frames > 0) {
        c.dice /= nf;
        c.fbeta /= nf;
        c.smeasure /= nf;
        c.emeasure /= nf;
    }
    const int64_t pos = c.frames - c.flagged_empty;
    if (pos > 0) {
        c.sen /= static_cast<double>(pos);
        c.wfbeta /= static_cast<double>(pos);
    } else {
        c.sen = std::numeric_limits<double>::quiet_NaN();
        c.wfbeta = std::numeric_limits<double>::quiet_NaN();
    }
    return c;
}

namespace {

ClipScores mean_over(const std::string& id, const std::vector<const ClipScores*>& clips) {
    ClipScores out;
    out.clip_id = id;
    int64_t with_pos = 0;
    for (const ClipScores* c : clips) {
        out.dice += c->dice;
        out.fbeta += c->fbeta;
        out.smeasure += c->smeasure;
        out.emeasure += c->emeasure;
        out.frames += c->frames;
        out.flagged_empty += c->flagged_empty;
        if (c->has_positive()) {
            out.sen += c->sen;
            out.wfbeta += c->wfbeta;
            ++with_pos;
        }
    }
    const double n = static_cast<double>(clips.size());
    if (!clips.empty()) {
        out.dice /= n;
        out.fbeta /= n;
        out.smeasure /= n;
        out.emeasure /= n;
    }
    if (with_pos > 0) {
        out.sen /= static_cast<double>(with_pos);
        out.wfbeta /= static_cast<double>(with_pos);
    } else {
        out.sen = std::numeric_limits<double>::quiet_NaN();
        out.wfbeta = std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

} // namespace

MetricReport aggregate_clips(std::vector<ClipScores> clips, bool with_attributes) {
    MetricReport report;
    std::vector<const ClipScores*> all;
    for (const auto& c : clips) all.push_back(&c);
    report.dataset = mean_over("DATASET", all);
    if (with_attributes) {
        for (const auto& tag : attribute_names()) {
            std::vector<const ClipScores*> tagged;
            for (const auto& c : clips)
                if (std::find(c.attributes.begin(), c.attributes.end(), tag) !=
                    c.attributes.end())
                    tagged.push_back(&c);
            if (tagged.empty()) continue;
            ClipScores row = mean_over("ATTR:" + tag, tagged);
            row.attributes = {tag};
            report.per_attribute.push_back(std::move(row));
        }
    }
    report.clips = std::move(clips);
    return report;
}

MetricReport evaluate_dataset(const Manifest& manifest, const PredictionSource& predictions,
                              bool with_attributes) {
    // Missing predictions are collected first so the error lists them all.
    std::vector<std::string> missing;
    for (const auto& clip : manifest.clips) {
        for (int64_t i = 1; i < static_cast<int64_t>(clip.frames.size()); ++i) {
            if (!predictions(clip, i))
                missing.push_back(clip.id + "/" + std::to_string(i));
        }
    }
    if (!missing.empty()) {
        std::ostringstream os;
        os << missing.size() << " missing prediction(s): ";
        for (size_t i = 0; i < missing.size() && i < 20; ++i) {
            if (i) os << ", ";
            os << missing[i];
        }
        if (missing.size() > 20) os << ", ...";
        throw Error(ErrorCode::invalid_argument, os.str());
    }

    std::vector<ClipScores> clips;
    for (const auto& clip : manifest.clips) {
        std::vector<FrameScores> frames;
        for (int64_t i = 1; i < static_cast<int64_t>(clip.frames.size()); ++i) {
            const BinaryMask gt = load_mask(manifest, clip, i);
            const GrayMapD pred = *predictions(clip, i);
            if (pred.height != gt.height || pred.width != gt.width)
                throw Error(ErrorCode::shape_mismatch,
                            "prediction size mismatch for " + clip.id + "/" + std::to_string(i));
            frames.push_back(evaluate_frame(pred, gt));
        }
        clips.push_back(aggregate_frames(clip.id, clip.attributes, frames));
    }
    return aggregate_clips(std::move(clips), with_attributes);
}

PredictionSource directory_prediction_source(const std::string& dir) {
    return [dir](const ClipRecord& clip, int64_t index) -> std::optional<GrayMapD> {
        char name[32];
        std::snprintf(name, sizeof(name), "%05lld.pgm", static_cast<long long>(index));
        const std::filesystem::path path = std::filesystem::path(dir) / clip.id / name;
        if (!std::filesystem::exists(path)) return std::nullopt;
        return graymap_from_image(read_pnm(path.string()));
    };
}

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::string join_attrs(const std::vector<std::string>& attrs) {
    std::string out;
    for (size_t i = 0; i < attrs.size(); ++i) {
        if (i) out += ';';
        out += attrs[i];
    }
    return out;
}

void write_row(std::ostream& os, const ClipScores& c) {
    os << c.clip_id << ',' << join_attrs(c.attributes) << ',' << c.frames << ','
       << c.flagged_empty << ',' << fmt(c.dice) << ',' << fmt(c.sen) << ',' << fmt(c.fbeta) << ','
       << fmt(c.wfbeta) << ',' << fmt(c.smeasure) << ',' << fmt(c.emeasure) << '\n';
}

} // namespace

void write_report_csv(const MetricReport& report, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorCode::io, "cannot open report for writing: " + path);
    os << "clip_id,attributes,frames,flagged_empty_gt,dice_max,sen_mean,fbeta_mean,"
          "weighted_fbeta,s_measure,e_measure_mean\n";
    for (const auto& c : report.clips) write_row(os, c);
    write_row(os, report.dataset);
    for (const auto& c : report.per_attribute) write_row(os, c);
    if (!os) throw Error(ErrorCode::io, "report write failed: " + path);
}

} // namespace pns
