#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pns/image_io.hpp"
#include "pns/mask.hpp"

namespace pns {

/// One annotated video clip: ordered frame/mask paths relative to the
/// manifest directory, clip-level attribute tags, and a split label.
struct ClipRecord {
    std::string id;
    std::string split;
    std::vector<std::string> frames;
    std::vector<std::string> masks;
    std::vector<std::string> attributes;
};

struct Manifest {
    std::string dataset_name;
    std::filesystem::path base_dir;
    std::vector<ClipRecord> clips;
};

const std::vector<std::string>& attribute_names(); // SI IB HO GH FM SO LO OC OV SV
const std::vector<std::string>& split_names(); // train easy-seen easy-unseen hard-seen hard-unseen

/// JSON-lines manifest: a dataset header line, then one clip object per line.
/// All invariants are checked eagerly; errors name the offending clip.
Manifest load_manifest(const std::string& path);
void save_manifest(const Manifest& manifest, const std::string& path);

ImageU8 load_frame_image(const Manifest& manifest, const ClipRecord& clip, int64_t index);
BinaryMask load_mask(const Manifest& manifest, const ClipRecord& clip, int64_t index);

// ---------------------------------------------------------------------------
// Synthetic dataset: a moving, size-varying ellipse "polyp" over a textured
// background with exact masks. Stands in for the licensed video data.

struct SynthClipSpec {
    double speed = 4.0;       // centroid drift per frame, px
    double direction = 0.35;  // radians
    double radius_x = 14.0;
    double radius_y = 10.0;
    double pulse = 0.0;       // relative radius swing over the clip, [0,1)
    uint64_t seed = 1;        // texture/color/start-position stream
};

void render_synth_clip(const SynthClipSpec& spec, int64_t frames, int64_t height, int64_t width,
                       std::vector<ImageU8>& frames_out, std::vector<BinaryMask>& masks_out);

struct SynthOptions {
    int64_t clips = 4;
    int64_t frames_per_clip = 12;
    int64_t height = 64;
    int64_t width = 112;
    uint64_t seed = 1;
    std::string split = "train";
    std::string dataset_name = "synthetic";
};

/// Writes frames (PPM), masks (PGM) and manifest.jsonl under out_dir;
/// attribute tags are computed from the rendered masks. Deterministic per
/// seed. Returns the manifest.
Manifest synth_dataset(const SynthOptions& options, const std::string& out_dir);

} // namespace pns
