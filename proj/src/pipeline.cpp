#include "pns/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "pns/config.hpp"
#include "pns/error.hpp"

namespace pns {

PipelineConfig::PipelineConfig() {
    global_ns.dilations = {3, 4, 3, 4};
    local_ns.dilations = {1, 2, 1, 2};
}

void PipelineConfig::validate() {
    if (input_height < 8 || input_width < 8)
        throw Error(ErrorCode::config, "input size must be at least 8x8");
    if (input_height % 4 != 0 || input_width % 4 != 0)
        throw Error(ErrorCode::config, "input height/width must be divisible by 4");
    if (window < 1) throw Error(ErrorCode::config, "window must be >= 1");
    if (low_channels < 1 || high_channels < 1)
        throw Error(ErrorCode::config, "channel counts must be positive");
    if (high_channels % 4 != 0)
        throw Error(ErrorCode::config, "high_channels must be divisible by 4 (reduction head)");
    if (encoder_widths.size() != 3)
        throw Error(ErrorCode::config, "encoder_widths must list 3 stage widths");
    for (int w : encoder_widths)
        if (w < 1) throw Error(ErrorCode::config, "encoder widths must be positive");
    if (decoder_channels.size() != 4)
        throw Error(ErrorCode::config, "decoder_channels must list 4 widths");
    for (int w : decoder_channels)
        if (w < 1) throw Error(ErrorCode::config, "decoder widths must be positive");
    if (lr < 0 || weight_decay < 0)
        throw Error(ErrorCode::config, "lr and weight_decay must be non-negative");
    if (steps < 1) throw Error(ErrorCode::config, "steps must be >= 1");
    global_ns.channels = high_channels;
    local_ns.channels = high_channels;
    global_ns.validate();
    local_ns.validate();
}

PnsModel::PnsModel(PipelineConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const int w0 = cfg_.encoder_widths[0], w1 = cfg_.encoder_widths[1],
              w2 = cfg_.encoder_widths[2];
    const int cl = cfg_.low_channels, ch = cfg_.high_channels;
    const int branch = ch / 4;

    stem_w_ = params_.create_he("enc.stem.w", {3, 3, 3, w0}, 27, rng);
    stem_b_ = params_.create_zeros("enc.stem.b", {w0});
    s2_w_ = params_.create_he("enc.s2.w", {3, 3, w0, w1}, 9 * w0, rng);
    s2_b_ = params_.create_zeros("enc.s2.b", {w1});
    s3_w_ = params_.create_he("enc.s3.w", {3, 3, w1, w2}, 9 * w1, rng);
    s3_b_ = params_.create_zeros("enc.s3.b", {w2});
    low_w_ = params_.create_he("enc.low.w", {w1, cl}, w1, rng);
    low_b_ = params_.create_zeros("enc.low.b", {cl});
    for (int i = 0; i < 4; ++i) {
        const std::string p = "enc.rfb.b" + std::to_string(i);
        rfb_reduce_w_.push_back(params_.create_he(p + ".reduce.w", {w2, branch}, w2, rng));
        rfb_reduce_b_.push_back(params_.create_zeros(p + ".reduce.b", {branch}));
        rfb_dil_w_.push_back(
            params_.create_he(p + ".dil.w", {3, 3, branch, branch}, 9 * branch, rng));
        rfb_dil_b_.push_back(params_.create_zeros(p + ".dil.b", {branch}));
    }
    rfb_out_w_ = params_.create_he("enc.rfb.out.w", {ch, ch}, ch, rng);
    rfb_out_b_ = params_.create_zeros("enc.rfb.out.b", {ch});
    rfb_res_w_ = params_.create_he("enc.rfb.res.w", {w2, ch}, w2, rng);
    rfb_res_b_ = params_.create_zeros("enc.rfb.res.b", {ch});

    ns_global_ = std::make_unique<NsBlock>(cfg_.global_ns, params_, "ns_global", rng);
    ns_local_ = std::make_unique<NsBlock>(cfg_.local_ns, params_, "ns_local", rng);

    const int d0 = cfg_.decoder_channels[0], d1 = cfg_.decoder_channels[1],
              d2 = cfg_.decoder_channels[2], d3 = cfg_.decoder_channels[3];
    dec_fuse_w_ = params_.create_he("dec.fuse.w", {3, 3, cl + ch, d0}, 9 * (cl + ch), rng);
    dec_fuse_b_ = params_.create_zeros("dec.fuse.b", {d0});
    dec_mid_w_ = params_.create_he("dec.mid.w", {3, 3, d0, d1}, 9 * d0, rng);
    dec_mid_b_ = params_.create_zeros("dec.mid.b", {d1});
    dec_half_w_ = params_.create_he("dec.half.w", {3, 3, d1, d2}, 9 * d1, rng);
    dec_half_b_ = params_.create_zeros("dec.half.b", {d2});
    dec_full_w_ = params_.create_he("dec.full.w", {3, 3, d2, d3}, 9 * d2, rng);
    dec_full_b_ = params_.create_zeros("dec.full.b", {d3});
    dec_head_w_ = params_.create_he("dec.head.w", {d3, 1}, d3, rng);
    dec_head_b_ = params_.create_zeros("dec.head.b", {1});
}

Tensor PnsModel::rfb_head(const Tensor& stage3) const {
    std::vector<Tensor> branches;
    branches.reserve(4);
    for (int i = 0; i < 4; ++i) {
        Tensor b = relu(pointwise_linear(stage3, rfb_reduce_w_[static_cast<size_t>(i)],
                                         rfb_reduce_b_[static_cast<size_t>(i)]));
        b = relu(conv2d(b, rfb_dil_w_[static_cast<size_t>(i)],
                        rfb_dil_b_[static_cast<size_t>(i)], 1, i + 1, i + 1));
        branches.push_back(b);
    }
    Tensor merged = pointwise_linear(concat_lastdim(branches), rfb_out_w_, rfb_out_b_);
    Tensor residual = pointwise_linear(stage3, rfb_res_w_, rfb_res_b_);
    return add(merged, residual);
}

namespace {

void check_rgb_input(const Tensor& x, const PipelineConfig& cfg, const char* what) {
    if (x.rank() != 4 || x.dim(3) != 3 || x.dim(1) != cfg.input_height ||
        x.dim(2) != cfg.input_width)
        throw Error(ErrorCode::shape_mismatch,
                    std::string(what) + " must be [n," + std::to_string(cfg.input_height) + "," +
                        std::to_string(cfg.input_width) + ",3], got " + shape_to_string(x.shape()));
}

} // namespace

Tensor PnsModel::backbone_low(const Tensor& x) const {
    Tensor s1 = relu(conv2d(x, stem_w_, stem_b_, 2, 1));
    return relu(conv2d(s1, s2_w_, s2_b_, 2, 1));
}

Tensor PnsModel::encode_global(const Tensor& anchor_rgb) const {
    check_rgb_input(anchor_rgb, cfg_, "anchor");
    if (anchor_rgb.dim(0) != 1)
        throw Error(ErrorCode::shape_mismatch, "anchor must be a single frame");
    Tensor stage2 = backbone_low(anchor_rgb);
    Tensor stage3 = relu(conv2d(stage2, s3_w_, s3_b_, 2, 1));
    return rfb_head(stage3);
}

std::pair<Tensor, Tensor> PnsModel::encode_local(const Tensor& frames_rgb) const {
    check_rgb_input(frames_rgb, cfg_, "frames");
    Tensor stage2 = backbone_low(frames_rgb);
    Tensor low = relu(pointwise_linear(stage2, low_w_, low_b_));
    Tensor stage3 = relu(conv2d(stage2, s3_w_, s3_b_, 2, 1));
    Tensor high = rfb_head(stage3);
    return {low, high};
}

Tensor PnsModel::global_st_modeling(const Tensor& anchor_high, const Tensor& frames_high) const {
    if (anchor_high.dim(0) != 1)
        throw Error(ErrorCode::shape_mismatch, "global query must have one frame");
    Tensor ns = ns_global_->forward(anchor_high, frames_high, frames_high);
    Tensor tiled = tile_first_axis(ns, frames_high.dim(0));
    return add(tiled, frames_high);
}

Tensor PnsModel::global_to_local(const Tensor& zg, const Tensor& frames_high) const {
    Tensor ns = ns_local_->forward(zg, zg, zg);
    return add(add(ns, zg), frames_high);
}

Tensor PnsModel::fuse_strategy(const Tensor& anchor_high, const Tensor& frames_high) const {
    const int64_t n = frames_high.dim(0);
    switch (cfg_.strategy) {
    case Strategy::g2l:
        return global_to_local(global_st_modeling(anchor_high, frames_high), frames_high);
    case Strategy::l2l: {
        Tensor z1 = add(ns_global_->forward(frames_high, frames_high, frames_high), frames_high);
        Tensor z2 = ns_local_->forward(z1, z1, z1);
        return add(add(z2, z1), frames_high);
    }
    case Strategy::l2g: {
        Tensor z1 = add(ns_local_->forward(frames_high, frames_high, frames_high), frames_high);
        Tensor z2 = tile_first_axis(ns_global_->forward(anchor_high, z1, z1), n);
        return add(add(z2, z1), frames_high);
    }
    case Strategy::g2g: {
        Tensor z1 =
            add(tile_first_axis(ns_global_->forward(anchor_high, frames_high, frames_high), n),
                frames_high);
        Tensor z2 = tile_first_axis(ns_local_->forward(anchor_high, z1, z1), n);
        return add(add(z2, z1), frames_high);
    }
    case Strategy::none:
        return frames_high;
    }
    throw Error(ErrorCode::internal, "unhandled strategy");
}

Tensor PnsModel::decode(const Tensor& low, const Tensor& zl) const {
    Tensor up = bilinear_up2x(zl);
    up = crop_spatial(up, cfg_.low_height(), cfg_.low_width());
    Tensor fused = relu(conv2d(concat_lastdim({low, up}), dec_fuse_w_, dec_fuse_b_, 1, 1));
    fused = relu(conv2d(fused, dec_mid_w_, dec_mid_b_, 1, 1));
    Tensor half = bilinear_up2x(fused);
    half = crop_spatial(half, cfg_.input_height / 2, cfg_.input_width / 2);
    half = relu(conv2d(half, dec_half_w_, dec_half_b_, 1, 1));
    Tensor full = bilinear_up2x(half);
    full = crop_spatial(full, cfg_.input_height, cfg_.input_width);
    full = relu(conv2d(full, dec_full_w_, dec_full_b_, 1, 1));
    return pointwise_linear(full, dec_head_w_, dec_head_b_);
}

Tensor PnsModel::forward_window(const Tensor& anchor_rgb, const Tensor& frames_rgb) const {
    Tensor anchor_high = encode_global(anchor_rgb);
    auto [low, high] = encode_local(frames_rgb);
    Tensor zl = fuse_strategy(anchor_high, high);
    return decode(low, zl);
}

Tensor bce_loss(const Tensor& logits, const Tensor& targets) {
    return bce_with_logits(logits, targets);
}

Tensor image_to_tensor(const ImageU8& rgb) {
    if (rgb.channels != 3) throw Error(ErrorCode::invalid_argument, "expected an RGB image");
    std::vector<double> data(static_cast<size_t>(rgb.size()));
    for (size_t i = 0; i < data.size(); ++i)
        data[i] = static_cast<double>(rgb.pixels[i]) / 255.0;
    return Tensor::from_data({1, rgb.height, rgb.width, 3}, std::move(data));
}

Tensor images_to_tensor(const std::vector<const ImageU8*>& rgb) {
    if (rgb.empty()) throw Error(ErrorCode::invalid_argument, "empty frame list");
    const int64_t h = rgb[0]->height, w = rgb[0]->width;
    std::vector<double> data;
    data.reserve(static_cast<size_t>(static_cast<int64_t>(rgb.size()) * h * w * 3));
    for (const ImageU8* img : rgb) {
        if (img->channels != 3 || img->height != h || img->width != w)
            throw Error(ErrorCode::shape_mismatch, "frames must share HxWx3");
        for (uint8_t p : img->pixels) data.push_back(static_cast<double>(p) / 255.0);
    }
    return Tensor::from_data({static_cast<int64_t>(rgb.size()), h, w, 3}, std::move(data));
}

Tensor masks_to_target(const std::vector<const BinaryMask*>& masks) {
    if (masks.empty()) throw Error(ErrorCode::invalid_argument, "empty mask list");
    const int64_t h = masks[0]->height, w = masks[0]->width;
    std::vector<double> data;
    data.reserve(static_cast<size_t>(static_cast<int64_t>(masks.size()) * h * w));
    for (const BinaryMask* m : masks) {
        if (m->height != h || m->width != w)
            throw Error(ErrorCode::shape_mismatch, "masks must share HxW");
        for (uint8_t v : m->data) data.push_back(v ? 1.0 : 0.0);
    }
    return Tensor::from_data({static_cast<int64_t>(masks.size()), h, w, 1}, std::move(data));
}

TrainResult train_model(PnsModel& model, const Manifest& manifest, uint64_t seed) {
    const PipelineConfig& cfg = model.config();
    const int64_t delta = cfg.window;
    if (manifest.clips.empty())
        throw Error(ErrorCode::invalid_argument, "training manifest has no clips");

    struct LoadedClip {
        std::vector<ImageU8> frames;
        std::vector<BinaryMask> masks;
    };
    std::vector<LoadedClip> clips;
    for (const auto& record : manifest.clips) {
        const int64_t len = static_cast<int64_t>(record.frames.size());
        if (len < delta + 1)
            throw Error(ErrorCode::invalid_argument,
                        "clip '" + record.id + "' has " + std::to_string(len) +
                            " frames; training needs at least window+1 = " +
                            std::to_string(delta + 1));
        LoadedClip lc;
        for (int64_t i = 0; i < len; ++i) {
            ImageU8 img = load_frame_image(manifest, record, i);
            if (img.height != cfg.input_height || img.width != cfg.input_width ||
                img.channels != 3)
                throw Error(ErrorCode::shape_mismatch,
                            "clip '" + record.id + "' frame size does not match the config");
            BinaryMask mask = load_mask(manifest, record, i);
            if (mask.height != cfg.input_height || mask.width != cfg.input_width)
                throw Error(ErrorCode::shape_mismatch,
                            "clip '" + record.id + "' mask size does not match the config");
            lc.frames.push_back(std::move(img));
            lc.masks.push_back(std::move(mask));
        }
        clips.push_back(std::move(lc));
    }

    AdamOptimizer opt(model.params(), cfg.lr, cfg.weight_decay);
    std::mt19937_64 rng(seed);
    TrainResult result;
    result.losses.reserve(static_cast<size_t>(cfg.steps));
    for (int step = 0; step < cfg.steps; ++step) {
        std::uniform_int_distribution<size_t> clip_pick(0, clips.size() - 1);
        const LoadedClip& clip = clips[clip_pick(rng)];
        const int64_t len = static_cast<int64_t>(clip.frames.size());
        std::uniform_int_distribution<int64_t> start_pick(1, len - delta);
        const int64_t start = start_pick(rng);

        Tensor anchor = image_to_tensor(clip.frames[0]);
        std::vector<const ImageU8*> window;
        std::vector<const BinaryMask*> targets;
        for (int64_t j = 0; j < delta; ++j) {
            window.push_back(&clip.frames[static_cast<size_t>(start + j)]);
            targets.push_back(&clip.masks[static_cast<size_t>(start + j)]);
        }
        Tensor logits = model.forward_window(anchor, images_to_tensor(window));
        Tensor loss = bce_loss(logits, masks_to_target(targets));
        opt.zero_grad();
        loss.backward();
        opt.step();
        result.losses.push_back(loss.scalar_value());
    }
    return result;
}

std::vector<GrayMapD> infer_frames(const PnsModel& model, const Tensor& frames) {
    if (frames.rank() != 4 || frames.dim(0) < 2)
        throw Error(ErrorCode::invalid_argument, "inference needs a clip of at least 2 frames");
    NoGradGuard guard;
    const PipelineConfig& cfg = model.config();
    const int64_t delta = cfg.window;
    const int64_t len = frames.dim(0);
    const int64_t frame_elems = cfg.input_height * cfg.input_width * 3;

    auto frame_tensor = [&](int64_t first, int64_t count, bool pad_tail) {
        std::vector<double> data;
        data.reserve(static_cast<size_t>(count * frame_elems));
        for (int64_t j = 0; j < count; ++j) {
            int64_t idx = first + j;
            if (pad_tail) idx = std::min(idx, len - 1); // repeat the last frame
            const auto& all = frames.values();
            data.insert(data.end(), all.begin() + idx * frame_elems,
                        all.begin() + (idx + 1) * frame_elems);
        }
        return Tensor::from_data({count, cfg.input_height, cfg.input_width, 3}, std::move(data));
    };

    Tensor anchor = frame_tensor(0, 1, false);
    std::vector<GrayMapD> out;
    out.reserve(static_cast<size_t>(len - 1));
    for (int64_t start = 1; start < len; start += delta) {
        Tensor probs = sigmoid(model.forward_window(anchor, frame_tensor(start, delta, true)));
        const auto& v = probs.values();
        const int64_t plane = cfg.input_height * cfg.input_width;
        for (int64_t j = 0; j < delta && start + j < len; ++j) {
            GrayMapD map(cfg.input_height, cfg.input_width);
            std::copy(v.begin() + j * plane, v.begin() + (j + 1) * plane, map.data.begin());
            out.push_back(std::move(map));
        }
    }
    return out;
}

std::vector<GrayMapD> infer_clip(const PnsModel& model, const std::vector<ImageU8>& frames) {
    if (frames.size() < 2)
        throw Error(ErrorCode::invalid_argument, "inference needs a clip of at least 2 frames");
    std::vector<const ImageU8*> ptrs;
    ptrs.reserve(frames.size());
    for (const auto& f : frames) ptrs.push_back(&f);
    return infer_frames(model, images_to_tensor(ptrs));
}

void save_model(const PnsModel& model, const std::string& path) {
    write_checkpoint(path, serialize_config(model.config()), model.params());
}

std::unique_ptr<PnsModel> load_model(const std::string& path) {
    Checkpoint ck = read_checkpoint(path);
    PipelineConfig cfg = parse_config_text(ck.header);
    auto model = std::make_unique<PnsModel>(cfg, 0);
    apply_checkpoint(ck, model->params());
    return model;
}

} // namespace pns
