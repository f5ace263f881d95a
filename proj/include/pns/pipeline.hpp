#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pns/dataset.hpp"
#include "pns/mask.hpp"
#include "pns/ns_block.hpp"
#include "pns/tensor.hpp"

namespace pns {

/// Wiring of the two NS blocks. g2l is the global-to-local default; the
/// others are the learning-strategy ablations; none bypasses both blocks.
enum class Strategy { g2l, l2l, l2g, g2g, none };

const char* strategy_name(Strategy s);
Strategy strategy_from_name(const std::string& name);

struct PipelineConfig {
    int64_t input_height = 64;
    int64_t input_width = 112;
    int window = 5; // frames per sliding window
    int low_channels = 24;
    int high_channels = 32;
    std::vector<int> encoder_widths = {16, 24, 32}; // /2, /4, /8 stages
    std::vector<int> decoder_channels = {24, 16, 12, 8};
    NsConfig global_ns;
    NsConfig local_ns;
    double lr = 3e-4;
    double weight_decay = 1e-4;
    Strategy strategy = Strategy::g2l;
    int steps = 500;

    PipelineConfig();

    int64_t low_height() const { return (input_height + 3) / 4; }
    int64_t low_width() const { return (input_width + 3) / 4; }
    int64_t high_height() const { return (low_height() + 1) / 2; }
    int64_t high_width() const { return (low_width() + 1) / 2; }

    /// Checks invariants and syncs the NS channel counts to high_channels.
    void validate();
};

/// The PNS+ network: shared convolutional backbone with low/high heads, two
/// NS blocks, and a two-stage decoder.
class PnsModel {
public:
    PnsModel(PipelineConfig cfg, uint64_t seed);

    const PipelineConfig& config() const { return cfg_; }
    ParamRegistry& params() { return params_; }
    const ParamRegistry& params() const { return params_; }

    /// anchor_rgb [1,H',W',3] -> anchor feature [1,Hh,Wh,Ch].
    Tensor encode_global(const Tensor& anchor_rgb) const;
    /// frames_rgb [n,H',W',3] -> (low [n,Hl,Wl,Cl], high [n,Hh,Wh,Ch]).
    /// The high-level head is the global encoder's head (shared weights).
    std::pair<Tensor, Tensor> encode_local(const Tensor& frames_rgb) const;

    /// First NS block with the anchor as query, broadcast over the window,
    /// residual-added to the short-term features.
    Tensor global_st_modeling(const Tensor& anchor_high, const Tensor& frames_high) const;
    /// Second NS block over the propagated feature plus both residuals.
    Tensor global_to_local(const Tensor& zg, const Tensor& frames_high) const;
    /// Applies the configured strategy to produce the decoder input.
    Tensor fuse_strategy(const Tensor& anchor_high, const Tensor& frames_high) const;

    /// low [n,Hl,Wl,Cl] + zl [n,Hh,Wh,Ch] -> logits [n,H',W',1].
    Tensor decode(const Tensor& low, const Tensor& zl) const;

    Tensor forward_window(const Tensor& anchor_rgb, const Tensor& frames_rgb) const;

    const NsBlock& global_block() const { return *ns_global_; }
    const NsBlock& local_block() const { return *ns_local_; }

private:
    Tensor backbone_low(const Tensor& x) const;   // stage-2 feature (/4)
    Tensor rfb_head(const Tensor& stage3) const;  // channel reduction to Ch

    PipelineConfig cfg_;
    ParamRegistry params_;
    Tensor stem_w_, stem_b_, s2_w_, s2_b_, s3_w_, s3_b_;
    Tensor low_w_, low_b_;
    std::vector<Tensor> rfb_reduce_w_, rfb_reduce_b_, rfb_dil_w_, rfb_dil_b_;
    Tensor rfb_out_w_, rfb_out_b_, rfb_res_w_, rfb_res_b_;
    Tensor dec_fuse_w_, dec_fuse_b_, dec_mid_w_, dec_mid_b_;
    Tensor dec_half_w_, dec_half_b_, dec_full_w_, dec_full_b_, dec_head_w_, dec_head_b_;
    std::unique_ptr<NsBlock> ns_global_, ns_local_;
};

/// Mean BCE on logits (stable form).
Tensor bce_loss(const Tensor& logits, const Tensor& targets);

Tensor image_to_tensor(const ImageU8& rgb); // [1,H,W,3], values /255
Tensor images_to_tensor(const std::vector<const ImageU8*>& rgb); // [n,H,W,3]
Tensor masks_to_target(const std::vector<const BinaryMask*>& masks); // [n,H,W,1]

struct TrainResult {
    std::vector<double> losses; // one per Adam step
};

/// Adam training over seeded random clip windows; every clip in the
/// manifest participates and must be at least window+1 frames long.
TrainResult train_model(PnsModel& model, const Manifest& manifest, uint64_t seed);

/// Sliding-window inference: frame 0 anchors the clip, remaining frames are
/// processed in windows of `window` frames (the last window padded by
/// repeating the final frame; padded outputs dropped). One probability map
/// per frame 1..L-1.
std::vector<GrayMapD> infer_clip(const PnsModel& model, const std::vector<ImageU8>& frames);
/// Same protocol on an in-memory [L,H,W,3] tensor of values in [0,1].
std::vector<GrayMapD> infer_frames(const PnsModel& model, const Tensor& frames);

/// Checkpoint embeds the serialized config so inference is self-contained.
void save_model(const PnsModel& model, const std::string& path);
std::unique_ptr<PnsModel> load_model(const std::string& path);

} // namespace pns
