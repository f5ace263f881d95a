#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pns::jobs {

// Batch operations behind the CLI subcommands. Every job is idempotent with
// respect to its output directory.

struct SynthJob {
    std::string out_dir;
    int64_t clips = 4;
    int64_t frames_per_clip = 12;
    int64_t height = 64;
    int64_t width = 112;
    uint64_t seed = 1;
    std::string split = "train";
};
void run_synth(const SynthJob& job);

struct TrainJob {
    std::string config_path;
    std::string manifest_path;
    std::string out_dir; // receives checkpoint.pns + loss_curve.csv
    uint64_t seed = 1;
};
void run_train(const TrainJob& job);

struct InferJob {
    std::string checkpoint_path;
    std::string manifest_path;
    std::string out_dir; // <out>/<clip_id>/<frame index %05d>.pgm
    int threads = 1;
};
void run_infer(const InferJob& job);

struct EvalJob {
    std::string pred_dir;
    std::string manifest_path;
    std::string report_path;
    bool with_attributes = false;
};
void run_eval(const EvalJob& job);

struct AnnotateJob {
    std::string manifest_path;
    std::string out_dir;
    std::vector<std::string> kinds; // subset of boundary scribble polygon bbox
    uint64_t seed = 1;
    int threads = 1;
};
void run_annotate(const AnnotateJob& job);

struct StatsJob {
    std::string manifest_path;
    std::string out_dir;
};
void run_stats(const StatsJob& job);

struct BenchResult {
    double ns_forward_ms = 0;
    double brute_force_ms = 0;
    double speedup = 0;
    int64_t frames = 0, height = 0, width = 0;
    int channels = 0, groups = 0, kernel = 0;
    std::vector<int> dilations;
};
BenchResult run_bench(int64_t frames, int64_t height, int64_t width, int channels, int groups,
                      int kernel, const std::vector<int>& dilations);
std::string bench_report_line(const BenchResult& result);

} // namespace pns::jobs
