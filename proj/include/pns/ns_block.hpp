#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pns/tensor.hpp"

namespace pns {

enum class NormAxis { channel, temporal };

/// Hyperparameters of one normalized self-attention block.
struct NsConfig {
    int groups = 4;
    int kernel = 3;
    std::vector<int> dilations = {3, 4, 3, 4};
    int channels = 32;
    bool use_soft_attention = true;
    bool use_normalization = true;
    NormAxis norm_axis = NormAxis::channel;

    int group_channels() const { return channels / groups; }
    void validate() const;
};

/// Gather table for the dilated (2k+1)^2 window across all key frames,
/// shared by every query frame. flat_index addresses [T_k*H*W] rows; -1
/// marks an out-of-bounds slot.
struct NeighborhoodIndex {
    int64_t frames = 0, height = 0, width = 0;
    int kernel = 0, dilation = 1;
    int64_t slots = 0; // frames * (2k+1)^2
    std::shared_ptr<const std::vector<int64_t>> flat_index; // [H*W*slots]
    std::shared_ptr<const std::vector<uint8_t>> valid;      // [H*W*slots]
};

NeighborhoodIndex build_neighborhood_index(int64_t frames, int64_t height, int64_t width,
                                           int kernel, int dilation);

/// The sampled constrained neighborhood of one query pixel.
struct SampledNeighborhood {
    int64_t slots = 0;
    std::vector<std::vector<double>> vectors; // slots x C/N, padded slots zero
    std::vector<uint8_t> valid;
};

SampledNeighborhood sample_neighborhood(const Tensor& key_or_value, int64_t query_x,
                                        int64_t query_y, int kernel, int dilation);

/// Row-stochastic query-to-slot similarity for one group.
struct AffinityMatrix {
    Tensor probs; // [T_q*H*W, slots]
    int group = 0;
};

std::vector<Tensor> split_channels(const Tensor& x, int groups);

Tensor normalize_query(const Tensor& q, const Tensor& gain, const Tensor& bias, bool enabled,
                       NormAxis axis);

/// Eq.-style scaled softmax affinity; scale is sqrt(C/N) = sqrt(group_channels).
AffinityMatrix relevance_measuring(const Tensor& q_hat, const Tensor& keys,
                                   const NeighborhoodIndex& index, int group_channels,
                                   int group = 0);

Tensor st_aggregate(const AffinityMatrix& affinity, const Tensor& values,
                    const NeighborhoodIndex& index);

/// Per-query max over all groups' affinity entries; [T_q*H*W, 1].
Tensor soft_attention_map(const std::vector<AffinityMatrix>& affinities);

/// One NS block with its learnable embeddings theta/phi/g, synthesis weight
/// W_T, and per-group normalization affines.
class NsBlock {
public:
    NsBlock(const NsConfig& cfg, ParamRegistry& params, const std::string& prefix,
            std::mt19937_64& rng);

    /// q: [T_q,H,W,C]; k, v: [T_k,H,W,C]. Returns [T_q,H,W,C].
    Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v) const;

    const NsConfig& config() const { return cfg_; }

    // Raw parameters (the brute-force oracle reads these directly).
    const Tensor& theta_w() const { return theta_w_; }
    const Tensor& theta_b() const { return theta_b_; }
    const Tensor& phi_w() const { return phi_w_; }
    const Tensor& phi_b() const { return phi_b_; }
    const Tensor& g_w() const { return g_w_; }
    const Tensor& g_b() const { return g_b_; }
    const Tensor& synth_w() const { return synth_w_; }
    const Tensor& norm_gain(int group) const { return norm_gain_[static_cast<size_t>(group)]; }
    const Tensor& norm_bias(int group) const { return norm_bias_[static_cast<size_t>(group)]; }

private:
    NsConfig cfg_;
    Tensor theta_w_, theta_b_, phi_w_, phi_b_, g_w_, g_b_, synth_w_;
    std::vector<Tensor> norm_gain_, norm_bias_;
};

/// Reference implementation by explicit per-query loops over materialized
/// neighborhoods; shares only raw tensor storage with the fast path.
std::vector<double> ns_brute_force(const NsBlock& block, const Tensor& q, const Tensor& k,
                                   const Tensor& v);

} // namespace pns
