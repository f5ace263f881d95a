#include "pns/ns_block.hpp"

#include <cmath>
#include <limits>
#include <map>

namespace pns {

void NsConfig::validate() const {
    if (groups < 1) throw Error(ErrorCode::config, "ns groups must be >= 1");
    if (kernel < 0) throw Error(ErrorCode::config, "ns kernel must be >= 0");
    if (channels < 1) throw Error(ErrorCode::config, "ns channels must be >= 1");
    if (channels % groups != 0)
        throw Error(ErrorCode::config, "ns channels (" + std::to_string(channels) +
                                           ") not divisible by groups (" + std::to_string(groups) +
                                           ")");
    if (static_cast<int>(dilations.size()) != groups)
        throw Error(ErrorCode::config, "ns dilations must list one rate per group");
    for (int d : dilations)
        if (d < 1) throw Error(ErrorCode::config, "ns dilation rates must be >= 1");
}

NeighborhoodIndex build_neighborhood_index(int64_t frames, int64_t height, int64_t width,
                                           int kernel, int dilation) {
    if (frames < 1 || height < 1 || width < 1)
        throw Error(ErrorCode::invalid_argument, "neighborhood over empty tensor");
    const int64_t win = 2 * static_cast<int64_t>(kernel) + 1;
    const int64_t slots = frames * win * win;
    auto index = std::make_shared<std::vector<int64_t>>(
        static_cast<size_t>(height * width * slots), -1);
    auto valid = std::make_shared<std::vector<uint8_t>>(
        static_cast<size_t>(height * width * slots), 0);
    for (int64_t y = 0; y < height; ++y) {
        for (int64_t x = 0; x < width; ++x) {
            int64_t base = (y * width + x) * slots;
            for (int64_t t = 0; t < frames; ++t) {
                for (int64_t j = -kernel; j <= kernel; ++j) {
                    for (int64_t l = -kernel; l <= kernel; ++l) {
                        const int64_t sy = y + j * dilation;
                        const int64_t sx = x + l * dilation;
                        if (sy >= 0 && sy < height && sx >= 0 && sx < width) {
                            (*index)[static_cast<size_t>(base)] = (t * height + sy) * width + sx;
                            (*valid)[static_cast<size_t>(base)] = 1;
                        }
                        ++base;
                    }
                }
            }
        }
    }
    NeighborhoodIndex out;
    out.frames = frames;
    out.height = height;
    out.width = width;
    out.kernel = kernel;
    out.dilation = dilation;
    out.slots = slots;
    out.flat_index = std::move(index);
    out.valid = std::move(valid);
    return out;
}

SampledNeighborhood sample_neighborhood(const Tensor& key_or_value, int64_t query_x,
                                        int64_t query_y, int kernel, int dilation) {
    if (key_or_value.rank() != 4)
        throw Error(ErrorCode::shape_mismatch, "sample_neighborhood expects [T,H,W,C]");
    const int64_t T = key_or_value.dim(0), H = key_or_value.dim(1), W = key_or_value.dim(2),
                  C = key_or_value.dim(3);
    const int64_t win = 2 * static_cast<int64_t>(kernel) + 1;
    SampledNeighborhood out;
    out.slots = T * win * win;
    out.vectors.assign(static_cast<size_t>(out.slots), std::vector<double>(static_cast<size_t>(C), 0.0));
    out.valid.assign(static_cast<size_t>(out.slots), 0);
    const auto& v = key_or_value.values();
    int64_t slot = 0;
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t j = -kernel; j <= kernel; ++j) {
            for (int64_t l = -kernel; l <= kernel; ++l) {
                const int64_t sy = query_y + j * dilation;
                const int64_t sx = query_x + l * dilation;
                if (sy >= 0 && sy < H && sx >= 0 && sx < W) {
                    const double* src = v.data() + ((t * H + sy) * W + sx) * C;
                    std::copy(src, src + C, out.vectors[static_cast<size_t>(slot)].begin());
                    out.valid[static_cast<size_t>(slot)] = 1;
                }
                ++slot;
            }
        }
    }
    return out;
}

std::vector<Tensor> split_channels(const Tensor& x, int groups) {
    const int64_t c = x.dim(-1);
    if (groups < 1 || c % groups != 0)
        throw Error(ErrorCode::shape_mismatch,
                    "channels " + std::to_string(c) + " not divisible into " +
                        std::to_string(groups) + " groups");
    const int64_t gc = c / groups;
    std::vector<Tensor> out;
    out.reserve(static_cast<size_t>(groups));
    for (int i = 0; i < groups; ++i) out.push_back(slice_lastdim(x, i * gc, gc));
    return out;
}

Tensor normalize_query(const Tensor& q, const Tensor& gain, const Tensor& bias, bool enabled,
                       NormAxis axis) {
    if (!enabled) return q;
    return normalize_axis(q, axis == NormAxis::channel ? -1 : 0, gain, bias);
}

AffinityMatrix relevance_measuring(const Tensor& q_hat, const Tensor& keys,
                                   const NeighborhoodIndex& index, int group_channels,
                                   int group) {
    if (q_hat.rank() != 4 || keys.rank() != 4)
        throw Error(ErrorCode::shape_mismatch, "relevance_measuring expects [T,H,W,C/N]");
    const int64_t P = index.height * index.width;
    const int64_t gc = q_hat.dim(3);
    Tensor kflat = reshape(keys, {keys.dim(0) * P, gc});
    Tensor gathered = gather_rows(kflat, index.flat_index);
    Tensor qflat = reshape(q_hat, {q_hat.dim(0) * P, gc});
    Tensor scores = neighbor_scores(qflat, gathered, P, index.slots);
    const double inv_scale = 1.0 / std::sqrt(static_cast<double>(group_channels));
    Tensor probs = masked_softmax_scaled(scores, index.valid, inv_scale, P);
    return AffinityMatrix{probs, group};
}

Tensor st_aggregate(const AffinityMatrix& affinity, const Tensor& values,
                    const NeighborhoodIndex& index) {
    if (values.rank() != 4)
        throw Error(ErrorCode::shape_mismatch, "st_aggregate expects values [T,H,W,C/N]");
    const int64_t P = index.height * index.width;
    const int64_t gc = values.dim(3);
    if (affinity.probs.dim(1) != index.slots)
        throw Error(ErrorCode::shape_mismatch, "affinity slot count mismatch");
    Tensor vflat = reshape(values, {values.dim(0) * P, gc});
    Tensor gathered = gather_rows(vflat, index.flat_index);
    return neighbor_apply(affinity.probs, gathered, P);
}

Tensor soft_attention_map(const std::vector<AffinityMatrix>& affinities) {
    if (affinities.empty())
        throw Error(ErrorCode::invalid_argument, "soft_attention_map with no groups");
    std::vector<Tensor> parts;
    parts.reserve(affinities.size());
    for (const auto& a : affinities) parts.push_back(a.probs);
    Tensor all = parts.size() == 1 ? parts[0] : concat_lastdim(parts);
    return max_lastdim(all);
}

NsBlock::NsBlock(const NsConfig& cfg, ParamRegistry& params, const std::string& prefix,
                 std::mt19937_64& rng)
    : cfg_(cfg) {
    cfg_.validate();
    const int64_t c = cfg_.channels;
    theta_w_ = params.create_he(prefix + ".theta.w", {c, c}, c, rng);
    theta_b_ = params.create_zeros(prefix + ".theta.b", {c});
    phi_w_ = params.create_he(prefix + ".phi.w", {c, c}, c, rng);
    phi_b_ = params.create_zeros(prefix + ".phi.b", {c});
    g_w_ = params.create_he(prefix + ".g.w", {c, c}, c, rng);
    g_b_ = params.create_zeros(prefix + ".g.b", {c});
    synth_w_ = params.create_he(prefix + ".wt", {c, c}, c, rng);
    const int64_t gc = cfg_.group_channels();
    for (int i = 0; i < cfg_.groups; ++i) {
        norm_gain_.push_back(
            params.create_full(prefix + ".norm" + std::to_string(i) + ".gain", {gc}, 1.0));
        norm_bias_.push_back(
            params.create_zeros(prefix + ".norm" + std::to_string(i) + ".bias", {gc}));
    }
}

Tensor NsBlock::forward(const Tensor& q, const Tensor& k, const Tensor& v) const {
    if (q.rank() != 4 || k.rank() != 4 || v.rank() != 4)
        throw Error(ErrorCode::shape_mismatch, "ns_forward expects [T,H,W,C] inputs");
    const int64_t tq = q.dim(0), H = q.dim(1), W = q.dim(2), C = q.dim(3);
    const int64_t tk = k.dim(0);
    if (C != cfg_.channels)
        throw Error(ErrorCode::shape_mismatch,
                    "ns_forward channels " + std::to_string(C) + " != config " +
                        std::to_string(cfg_.channels));
    if (k.dim(3) != C || v.dim(3) != C)
        throw Error(ErrorCode::shape_mismatch, "ns_forward Q/K/V channel mismatch");
    if (k.dim(1) != H || k.dim(2) != W || v.dim(1) != H || v.dim(2) != W || v.dim(0) != tk)
        throw Error(ErrorCode::shape_mismatch, "ns_forward K/V spatial or frame mismatch");

    Tensor qe = pointwise_linear(q, theta_w_, theta_b_);
    Tensor ke = pointwise_linear(k, phi_w_, phi_b_);
    Tensor ve = pointwise_linear(v, g_w_, g_b_);

    auto q_groups = split_channels(qe, cfg_.groups);
    auto k_groups = split_channels(ke, cfg_.groups);
    auto v_groups = split_channels(ve, cfg_.groups);

    // Index tables are shared between groups with equal dilation.
    std::map<int, NeighborhoodIndex> index_cache;
    for (int d : cfg_.dilations)
        if (!index_cache.count(d))
            index_cache.emplace(d, build_neighborhood_index(tk, H, W, cfg_.kernel, d));

    std::vector<AffinityMatrix> affinities;
    std::vector<Tensor> aggregated;
    affinities.reserve(static_cast<size_t>(cfg_.groups));
    for (int i = 0; i < cfg_.groups; ++i) {
        const auto& index = index_cache.at(cfg_.dilations[static_cast<size_t>(i)]);
        Tensor qhat = normalize_query(q_groups[static_cast<size_t>(i)],
                                      norm_gain_[static_cast<size_t>(i)],
                                      norm_bias_[static_cast<size_t>(i)], cfg_.use_normalization,
                                      cfg_.norm_axis);
        AffinityMatrix aff = relevance_measuring(qhat, k_groups[static_cast<size_t>(i)], index,
                                                 cfg_.channels / cfg_.groups, i);
        aggregated.push_back(st_aggregate(aff, v_groups[static_cast<size_t>(i)], index));
        affinities.push_back(std::move(aff));
    }

    Tensor mt = aggregated.size() == 1 ? aggregated[0] : concat_lastdim(aggregated);
    Tensor y = matmul(mt, synth_w_);
    if (cfg_.use_soft_attention) {
        Tensor ms = soft_attention_map(affinities);
        y = mul(y, ms);
    }
    return reshape(y, {tq, H, W, C});
}

// ---------------------------------------------------------------------------
// Brute-force reference: Eqs. computed per query pixel with materialized
// neighborhoods and no shared fast-path machinery.

namespace {

// y = x * W + b per position, plain loops.
std::vector<double> embed_pointwise(const std::vector<double>& x, int64_t positions, int64_t c,
                                    const std::vector<double>& w, const std::vector<double>& b) {
    std::vector<double> y(static_cast<size_t>(positions * c), 0.0);
    for (int64_t p = 0; p < positions; ++p)
        for (int64_t o = 0; o < c; ++o) {
            double acc = b.empty() ? 0.0 : b[static_cast<size_t>(o)];
            for (int64_t i = 0; i < c; ++i)
                acc += x[static_cast<size_t>(p * c + i)] * w[static_cast<size_t>(i * c + o)];
            y[static_cast<size_t>(p * c + o)] = acc;
        }
    return y;
}

} // namespace

std::vector<double> ns_brute_force(const NsBlock& block, const Tensor& q, const Tensor& k,
                                   const Tensor& v) {
    const NsConfig& cfg = block.config();
    const int64_t tq = q.dim(0), H = q.dim(1), W = q.dim(2), C = q.dim(3);
    const int64_t tk = k.dim(0);
    const int64_t N = cfg.groups;
    const int64_t gc = C / N;
    const int64_t win = 2 * static_cast<int64_t>(cfg.kernel) + 1;
    const int64_t slots = tk * win * win;
    const double scale = 1.0 / std::sqrt(static_cast<double>(gc));

    const auto qe = embed_pointwise(q.values(), tq * H * W, C, block.theta_w().values(),
                                    block.theta_b().values());
    const auto ke = embed_pointwise(k.values(), tk * H * W, C, block.phi_w().values(),
                                    block.phi_b().values());
    const auto ve = embed_pointwise(v.values(), tk * H * W, C, block.g_w().values(),
                                    block.g_b().values());

    // Optional query normalization, per group.
    std::vector<double> qhat = qe;
    if (cfg.use_normalization) {
        for (int64_t g = 0; g < N; ++g) {
            const auto& gain = block.norm_gain(static_cast<int>(g)).values();
            const auto& bias = block.norm_bias(static_cast<int>(g)).values();
            if (cfg.norm_axis == NormAxis::channel) {
                for (int64_t p = 0; p < tq * H * W; ++p) {
                    double mean = 0.0, var = 0.0;
                    for (int64_t c = 0; c < gc; ++c)
                        mean += qe[static_cast<size_t>(p * C + g * gc + c)];
                    mean /= static_cast<double>(gc);
                    for (int64_t c = 0; c < gc; ++c) {
                        const double d = qe[static_cast<size_t>(p * C + g * gc + c)] - mean;
                        var += d * d;
                    }
                    var /= static_cast<double>(gc);
                    const double istd = 1.0 / std::sqrt(var + 1e-5);
                    for (int64_t c = 0; c < gc; ++c)
                        qhat[static_cast<size_t>(p * C + g * gc + c)] =
                            (qe[static_cast<size_t>(p * C + g * gc + c)] - mean) * istd *
                                gain[static_cast<size_t>(c)] +
                            bias[static_cast<size_t>(c)];
                }
            } else {
                for (int64_t s = 0; s < H * W; ++s) {
                    for (int64_t c = 0; c < gc; ++c) {
                        double mean = 0.0, var = 0.0;
                        for (int64_t t = 0; t < tq; ++t)
                            mean += qe[static_cast<size_t>((t * H * W + s) * C + g * gc + c)];
                        mean /= static_cast<double>(tq);
                        for (int64_t t = 0; t < tq; ++t) {
                            const double d =
                                qe[static_cast<size_t>((t * H * W + s) * C + g * gc + c)] - mean;
                            var += d * d;
                        }
                        var /= static_cast<double>(tq);
                        const double istd = 1.0 / std::sqrt(var + 1e-5);
                        for (int64_t t = 0; t < tq; ++t)
                            qhat[static_cast<size_t>((t * H * W + s) * C + g * gc + c)] =
                                (qe[static_cast<size_t>((t * H * W + s) * C + g * gc + c)] - mean) *
                                    istd * gain[static_cast<size_t>(c)] +
                                bias[static_cast<size_t>(c)];
                    }
                }
            }
        }
    }

    std::vector<double> mt(static_cast<size_t>(tq * H * W * C), 0.0);
    std::vector<double> ms(static_cast<size_t>(tq * H * W), 0.0);

    for (int64_t t = 0; t < tq; ++t) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const int64_t qpos = (t * H + y) * W + x;
                double best = 0.0;
                for (int64_t g = 0; g < N; ++g) {
                    const int d = cfg.dilations[static_cast<size_t>(g)];
                    // Materialize this query's neighborhood.
                    std::vector<std::vector<double>> neigh_k, neigh_v;
                    std::vector<uint8_t> ok;
                    neigh_k.reserve(static_cast<size_t>(slots));
                    for (int64_t tt = 0; tt < tk; ++tt) {
                        for (int64_t j = -cfg.kernel; j <= cfg.kernel; ++j) {
                            for (int64_t l = -cfg.kernel; l <= cfg.kernel; ++l) {
                                const int64_t sy = y + j * d;
                                const int64_t sx = x + l * d;
                                std::vector<double> kv(static_cast<size_t>(gc), 0.0);
                                std::vector<double> vv(static_cast<size_t>(gc), 0.0);
                                bool inb = sy >= 0 && sy < H && sx >= 0 && sx < W;
                                if (inb) {
                                    const int64_t sp = (tt * H + sy) * W + sx;
                                    for (int64_t c = 0; c < gc; ++c) {
                                        kv[static_cast<size_t>(c)] =
                                            ke[static_cast<size_t>(sp * C + g * gc + c)];
                                        vv[static_cast<size_t>(c)] =
                                            ve[static_cast<size_t>(sp * C + g * gc + c)];
                                    }
                                }
                                neigh_k.push_back(std::move(kv));
                                neigh_v.push_back(std::move(vv));
                                ok.push_back(inb ? 1 : 0);
                            }
                        }
                    }
                    // Scaled softmax over valid slots.
                    std::vector<double> scores(static_cast<size_t>(slots),
                                               -std::numeric_limits<double>::infinity());
                    for (int64_t s = 0; s < slots; ++s) {
                        if (!ok[static_cast<size_t>(s)]) continue;
                        double acc = 0.0;
                        for (int64_t c = 0; c < gc; ++c)
                            acc += qhat[static_cast<size_t>(qpos * C + g * gc + c)] *
                                   neigh_k[static_cast<size_t>(s)][static_cast<size_t>(c)];
                        scores[static_cast<size_t>(s)] = acc * scale;
                    }
                    double mx = -std::numeric_limits<double>::infinity();
                    for (double s : scores) mx = std::max(mx, s);
                    double sum = 0.0;
                    std::vector<double> prob(static_cast<size_t>(slots), 0.0);
                    for (int64_t s = 0; s < slots; ++s) {
                        if (!ok[static_cast<size_t>(s)]) continue;
                        prob[static_cast<size_t>(s)] = std::exp(scores[static_cast<size_t>(s)] - mx);
                        sum += prob[static_cast<size_t>(s)];
                    }
                    for (int64_t s = 0; s < slots; ++s) prob[static_cast<size_t>(s)] /= sum;
                    // Aggregate values and track the soft-attention max.
                    for (int64_t s = 0; s < slots; ++s) {
                        const double a = prob[static_cast<size_t>(s)];
                        if (a > best) best = a;
                        if (a == 0.0) continue;
                        for (int64_t c = 0; c < gc; ++c)
                            mt[static_cast<size_t>(qpos * C + g * gc + c)] +=
                                a * neigh_v[static_cast<size_t>(s)][static_cast<size_t>(c)];
                    }
                }
                ms[static_cast<size_t>(qpos)] = best;
            }
        }
    }

    // Y = (M^T W_T) (*) M^S
    const auto& wt = block.synth_w().values();
    std::vector<double> out(static_cast<size_t>(tq * H * W * C), 0.0);
    for (int64_t p = 0; p < tq * H * W; ++p) {
        for (int64_t o = 0; o < C; ++o) {
            double acc = 0.0;
            for (int64_t i = 0; i < C; ++i)
                acc += mt[static_cast<size_t>(p * C + i)] * wt[static_cast<size_t>(i * C + o)];
            if (cfg.use_soft_attention) acc *= ms[static_cast<size_t>(p)];
            out[static_cast<size_t>(p * C + o)] = acc;
        }
    }
    return out;
}

} // namespace pns
