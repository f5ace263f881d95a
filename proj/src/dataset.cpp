#include "pns/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <set>

#include "json.hpp"

#include "pns/error.hpp"
#include "pns/stats.hpp"

namespace pns {

using nlohmann::json;

const std::vector<std::string>& attribute_names() {
    static const std::vector<std::string> names = {"SI", "IB", "HO", "GH", "FM",
                                                   "SO", "LO", "OC", "OV", "SV"};
    return names;
}

const std::vector<std::string>& split_names() {
    static const std::vector<std::string> names = {"train", "easy-seen", "easy-unseen",
                                                   "hard-seen", "hard-unseen"};
    return names;
}

namespace {

void manifest_error(const std::string& clip, const std::string& what) {
    throw Error(ErrorCode::manifest,
                clip.empty() ? what : "clip '" + clip + "': " + what);
}

std::vector<std::string> string_list(const json& j, const char* key, const std::string& clip) {
    if (!j.contains(key) || !j[key].is_array())
        manifest_error(clip, std::string("missing or non-array field '") + key + "'");
    std::vector<std::string> out;
    for (const auto& e : j[key]) {
        if (!e.is_string()) manifest_error(clip, std::string("non-string entry in '") + key + "'");
        out.push_back(e.get<std::string>());
    }
    return out;
}

} // namespace

Manifest load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::manifest, "cannot open manifest: " + path);
    Manifest m;
    m.base_dir = std::filesystem::absolute(std::filesystem::path(path)).parent_path();

    std::string line;
    int64_t line_no = 0;
    std::set<std::string> seen_ids;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw Error(ErrorCode::manifest,
                        "manifest line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!j.is_object())
            throw Error(ErrorCode::manifest,
                        "manifest line " + std::to_string(line_no) + " is not an object");
        if (line_no == 1) {
            if (!j.contains("dataset") || !j["dataset"].is_string())
                throw Error(ErrorCode::manifest, "first manifest line must name the dataset");
            m.dataset_name = j["dataset"].get<std::string>();
            continue;
        }
        ClipRecord clip;
        if (!j.contains("clip") || !j["clip"].is_string())
            manifest_error("", "manifest line " + std::to_string(line_no) + " lacks a clip id");
        clip.id = j["clip"].get<std::string>();
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& key = it.key();
            if (key != "clip" && key != "split" && key != "frames" && key != "masks" &&
                key != "attributes")
                manifest_error(clip.id, "unknown field '" + key + "'");
        }
        if (!seen_ids.insert(clip.id).second) manifest_error(clip.id, "duplicate clip id");
        if (!j.contains("split") || !j["split"].is_string())
            manifest_error(clip.id, "missing split label");
        clip.split = j["split"].get<std::string>();
        if (std::find(split_names().begin(), split_names().end(), clip.split) ==
            split_names().end())
            manifest_error(clip.id, "unknown split label '" + clip.split + "'");
        clip.frames = string_list(j, "frames", clip.id);
        clip.masks = string_list(j, "masks", clip.id);
        if (j.contains("attributes")) {
            clip.attributes = string_list(j, "attributes", clip.id);
            for (const auto& a : clip.attributes)
                if (std::find(attribute_names().begin(), attribute_names().end(), a) ==
                    attribute_names().end())
                    manifest_error(clip.id, "unknown attribute tag '" + a + "'");
        }
        if (clip.frames.size() != clip.masks.size())
            manifest_error(clip.id, "frame count " + std::to_string(clip.frames.size()) +
                                        " != mask count " + std::to_string(clip.masks.size()));
        if (clip.frames.size() < 2) manifest_error(clip.id, "clips need at least 2 frames");
        for (const auto& rel : clip.frames)
            if (!std::filesystem::exists(m.base_dir / rel))
                manifest_error(clip.id, "missing frame file " + rel);
        for (const auto& rel : clip.masks)
            if (!std::filesystem::exists(m.base_dir / rel))
                manifest_error(clip.id, "missing mask file " + rel);
        m.clips.push_back(std::move(clip));
    }
    if (line_no == 0) throw Error(ErrorCode::manifest, "empty manifest: " + path);
    return m;
}

void save_manifest(const Manifest& manifest, const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw Error(ErrorCode::io, "cannot open manifest for writing: " + path);
    os << json{{"dataset", manifest.dataset_name}}.dump() << '\n';
    for (const auto& clip : manifest.clips) {
        json j;
        j["clip"] = clip.id;
        j["split"] = clip.split;
        j["frames"] = clip.frames;
        j["masks"] = clip.masks;
        j["attributes"] = clip.attributes;
        os << j.dump() << '\n';
    }
    if (!os) throw Error(ErrorCode::io, "manifest write failed: " + path);
}

ImageU8 load_frame_image(const Manifest& manifest, const ClipRecord& clip, int64_t index) {
    return read_pnm((manifest.base_dir / clip.frames[static_cast<size_t>(index)]).string());
}

BinaryMask load_mask(const Manifest& manifest, const ClipRecord& clip, int64_t index) {
    return mask_from_image(
        read_pnm((manifest.base_dir / clip.masks[static_cast<size_t>(index)]).string()));
}

// ---------------------------------------------------------------------------
// Synthetic data

namespace {

// Small deterministic hash noise in [0,1).
double hash_noise(uint64_t seed, int64_t y, int64_t x, int64_t c) {
    uint64_t h = seed ^ (static_cast<uint64_t>(y) * 0x9e3779b97f4a7c15ULL) ^
                 (static_cast<uint64_t>(x) * 0xc2b2ae3d27d4eb4fULL) ^
                 (static_cast<uint64_t>(c) * 0x165667b19e3779f9ULL);
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) / 9007199254740992.0;
}

uint8_t to_byte(double v) {
    if (v < 0) v = 0;
    if (v > 1) v = 1;
    return static_cast<uint8_t>(std::lround(v * 255.0));
}

} // namespace

void render_synth_clip(const SynthClipSpec& spec, int64_t frames, int64_t height, int64_t width,
                       std::vector<ImageU8>& frames_out, std::vector<BinaryMask>& masks_out) {
    if (frames < 1 || height < 8 || width < 8)
        throw Error(ErrorCode::invalid_argument, "degenerate synthetic clip size");
    if (spec.radius_x < 2 || spec.radius_y < 2 ||
        2 * spec.radius_x >= static_cast<double>(width) ||
        2 * spec.radius_y >= static_cast<double>(height))
        throw Error(ErrorCode::invalid_argument, "degenerate synthetic polyp radius");

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // Mucosa-ish background palette and a distinct polyp color.
    const double bg_r = 0.45 + 0.2 * unit(rng), bg_g = 0.28 + 0.12 * unit(rng),
                 bg_b = 0.24 + 0.1 * unit(rng);
    const double fg_r = 0.82 + 0.12 * unit(rng), fg_g = 0.45 + 0.12 * unit(rng),
                 fg_b = 0.55 + 0.15 * unit(rng);
    const double wave_fx = 1.0 + 3.0 * unit(rng), wave_fy = 1.0 + 3.0 * unit(rng);
    const double wave_px = 6.28 * unit(rng), wave_py = 6.28 * unit(rng);

    // Start position leaves room for the swept path.
    const double margin_x = spec.radius_x * (1.0 + spec.pulse) + 2.0;
    const double margin_y = spec.radius_y * (1.0 + spec.pulse) + 2.0;
    double cx = margin_x + unit(rng) * (static_cast<double>(width) - 2.0 * margin_x);
    double cy = margin_y + unit(rng) * (static_cast<double>(height) - 2.0 * margin_y);
    double vx = spec.speed * std::cos(spec.direction);
    double vy = spec.speed * std::sin(spec.direction);

    frames_out.clear();
    masks_out.clear();
    for (int64_t f = 0; f < frames; ++f) {
        const double phase = frames > 1 ? static_cast<double>(f) / static_cast<double>(frames - 1)
                                        : 0.0;
        const double swell = 1.0 + spec.pulse * std::sin(6.283185307179586 * phase);
        const double rx = spec.radius_x * swell;
        const double ry = spec.radius_y * swell;

        ImageU8 img;
        img.height = height;
        img.width = width;
        img.channels = 3;
        img.pixels.resize(static_cast<size_t>(height * width * 3));
        BinaryMask mask(height, width);

        for (int64_t y = 0; y < height; ++y) {
            for (int64_t x = 0; x < width; ++x) {
                const double u = static_cast<double>(x) / static_cast<double>(width);
                const double v = static_cast<double>(y) / static_cast<double>(height);
                const double tex = 0.08 * std::sin(6.2831853 * (wave_fx * u) + wave_px) +
                                   0.08 * std::sin(6.2831853 * (wave_fy * v) + wave_py) +
                                   0.05 * (hash_noise(spec.seed, y, x, 0) - 0.5);
                const double ex = (static_cast<double>(x) - cx) / rx;
                const double ey = (static_cast<double>(y) - cy) / ry;
                const double r2 = ex * ex + ey * ey;
                double r, g, b;
                if (r2 <= 1.0) {
                    mask.at(y, x) = 1;
                    const double shade = 1.0 - 0.25 * r2; // dome shading
                    r = fg_r * shade + tex * 0.5;
                    g = fg_g * shade + tex * 0.5;
                    b = fg_b * shade + tex * 0.5;
                } else {
                    r = bg_r + tex;
                    g = bg_g + tex;
                    b = bg_b + tex;
                }
                const double grain = 0.02 * (hash_noise(spec.seed ^ 0xabcdULL, y, x, f) - 0.5);
                img.at(y, x, 0) = to_byte(r + grain);
                img.at(y, x, 1) = to_byte(g + grain);
                img.at(y, x, 2) = to_byte(b + grain);
            }
        }
        frames_out.push_back(std::move(img));
        masks_out.push_back(std::move(mask));

        // Advance with reflection off the walls.
        cx += vx;
        cy += vy;
        if (cx < margin_x) {
            cx = 2 * margin_x - cx;
            vx = -vx;
        }
        if (cx > static_cast<double>(width) - margin_x) {
            cx = 2 * (static_cast<double>(width) - margin_x) - cx;
            vx = -vx;
        }
        if (cy < margin_y) {
            cy = 2 * margin_y - cy;
            vy = -vy;
        }
        if (cy > static_cast<double>(height) - margin_y) {
            cy = 2 * (static_cast<double>(height) - margin_y) - cy;
            vy = -vy;
        }
    }
}

Manifest synth_dataset(const SynthOptions& options, const std::string& out_dir) {
    if (options.clips < 1 || options.frames_per_clip < 2)
        throw Error(ErrorCode::invalid_argument, "synthetic dataset needs >=1 clip of >=2 frames");
    if (std::find(split_names().begin(), split_names().end(), options.split) ==
        split_names().end())
        throw Error(ErrorCode::invalid_argument, "unknown split label '" + options.split + "'");

    const std::filesystem::path root(out_dir);
    std::filesystem::create_directories(root);

    std::mt19937_64 rng(options.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Manifest manifest;
    manifest.dataset_name = options.dataset_name;
    manifest.base_dir = std::filesystem::absolute(root);

    const double hw = static_cast<double>(options.height) * static_cast<double>(options.width);
    for (int64_t c = 0; c < options.clips; ++c) {
        SynthClipSpec spec;
        spec.seed = rng();
        spec.direction = 6.2831853 * unit(rng);
        // Cycle through archetypes so small datasets still trip FM/SO/LO/SV.
        switch (c % 5) {
        case 0: // plain medium polyp, slow drift
            spec.speed = 2.0 + 2.0 * unit(rng);
            spec.radius_x = 0.16 * options.width * (0.9 + 0.2 * unit(rng));
            spec.radius_y = 0.2 * options.height * (0.9 + 0.2 * unit(rng));
            break;
        case 1: // fast motion
            spec.speed = 23.0 + 4.0 * unit(rng);
            spec.radius_x = 0.12 * options.width;
            spec.radius_y = 0.16 * options.height;
            break;
        case 2: { // small object: mean ratio < 0.05
            spec.speed = 1.5 + 1.5 * unit(rng);
            const double target = 0.030 + 0.010 * unit(rng);
            const double r = std::sqrt(target * hw / 3.14159265);
            spec.radius_x = std::max(3.0, r);
            spec.radius_y = std::max(3.0, r * 0.9);
            break;
        }
        case 3: { // large object: mean ratio > 0.15
            spec.speed = 1.0 + unit(rng);
            const double target = 0.18 + 0.04 * unit(rng);
            const double r = std::sqrt(target * hw / 3.14159265);
            spec.radius_x = r * 1.1;
            spec.radius_y = r * 0.95;
            break;
        }
        default: // scale variation: bbox area halves
            spec.speed = 2.0 + unit(rng);
            spec.radius_x = 0.14 * options.width;
            spec.radius_y = 0.18 * options.height;
            spec.pulse = 0.30;
            break;
        }
        // Keep radii inside the frame.
        spec.radius_x = std::min(spec.radius_x, 0.45 * options.width / (1.0 + spec.pulse) - 2.0);
        spec.radius_y = std::min(spec.radius_y, 0.45 * options.height / (1.0 + spec.pulse) - 2.0);

        std::vector<ImageU8> frames;
        std::vector<BinaryMask> masks;
        render_synth_clip(spec, options.frames_per_clip, options.height, options.width, frames,
                          masks);

        char cid[32];
        std::snprintf(cid, sizeof(cid), "clip_%04lld", static_cast<long long>(c));
        const std::filesystem::path clip_dir = root / cid;
        std::filesystem::create_directories(clip_dir);

        ClipRecord record;
        record.id = cid;
        record.split = options.split;
        for (int64_t f = 0; f < options.frames_per_clip; ++f) {
            char fname[40], mname[40];
            std::snprintf(fname, sizeof(fname), "frame_%05lld.ppm", static_cast<long long>(f));
            std::snprintf(mname, sizeof(mname), "mask_%05lld.pgm", static_cast<long long>(f));
            write_pnm((clip_dir / fname).string(), frames[static_cast<size_t>(f)]);
            write_pnm((clip_dir / mname).string(), mask_to_image(masks[static_cast<size_t>(f)]));
            record.frames.push_back(std::string(cid) + "/" + fname);
            record.masks.push_back(std::string(cid) + "/" + mname);
        }
        record.attributes = auto_attributes(masks);
        manifest.clips.push_back(std::move(record));
    }

    save_manifest(manifest, (root / "manifest.jsonl").string());
    return manifest;
}

} // namespace pns
