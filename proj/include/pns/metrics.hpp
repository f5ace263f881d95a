#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "pns/dataset.hpp"
#include "pns/mask.hpp"

namespace pns {

/// Threshold a [0,1] prediction at an 8-bit level: positive iff
/// round(255*p) >= t for t >= 1; t = 0 marks every pixel positive.
BinaryMask binarize(const GrayMapD& pred, int threshold);

double dice_max(const GrayMapD& pred, const BinaryMask& gt);
double sensitivity_mean(const GrayMapD& pred, const BinaryMask& gt); // needs |gt| > 0
double fbeta_mean(const GrayMapD& pred, const BinaryMask& gt, double beta2 = 0.3);
double weighted_fbeta(const GrayMapD& pred, const BinaryMask& gt); // needs |gt| > 0
double s_measure(const GrayMapD& pred, const BinaryMask& gt, double alpha = 0.5);
double e_measure_mean(const GrayMapD& pred, const BinaryMask& gt);

struct FrameScores {
    double dice = 0, sen = 0, fbeta = 0, wfbeta = 0, smeasure = 0, emeasure = 0;
    bool empty_gt = false; // sen/wfbeta are unset and the frame is flagged
};

FrameScores evaluate_frame(const GrayMapD& pred, const BinaryMask& gt);

struct ClipScores {
    std::string clip_id;
    std::vector<std::string> attributes;
    int64_t frames = 0;
    int64_t flagged_empty = 0;
    double dice = 0, sen = 0, fbeta = 0, wfbeta = 0, smeasure = 0, emeasure = 0;
    bool has_positive() const { return frames > flagged_empty; }
};

ClipScores aggregate_frames(const std::string& clip_id, const std::vector<std::string>& attributes,
                            const std::vector<FrameScores>& frames);

struct MetricReport {
    std::vector<ClipScores> clips;
    ClipScores dataset;                   // unweighted mean over clips
    std::vector<ClipScores> per_attribute; // only when requested
};

MetricReport aggregate_clips(std::vector<ClipScores> clips, bool with_attributes);

/// Loads a prediction for (clip, frame index) or nullopt when absent.
using PredictionSource =
    std::function<std::optional<GrayMapD>(const ClipRecord&, int64_t)>;

/// Frames 1..L-1 of every clip are evaluated (frame 0 is the inference
/// anchor and never predicted). Missing predictions abort with a list.
MetricReport evaluate_dataset(const Manifest& manifest, const PredictionSource& predictions,
                              bool with_attributes);

/// Directory layout produced by infer: <dir>/<clip_id>/<index %05d>.pgm
PredictionSource directory_prediction_source(const std::string& dir);

void write_report_csv(const MetricReport& report, const std::string& path);

} // namespace pns
