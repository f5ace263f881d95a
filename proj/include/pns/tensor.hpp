#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pns/error.hpp"

namespace pns {

using Shape = std::vector<int64_t>;

int64_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

namespace detail {
struct Node;
}

/// Dense double-precision tensor handle. Copies share the underlying graph
/// node; forward values are immutable once created, only grad stores mutate.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int64_t dim(int axis) const; // negative axis counts from the back
    int64_t size() const;

    const std::vector<double>& values() const;
    double scalar_value() const;
    bool requires_grad() const;

    /// Gradient accumulated by backward(); zeros until first backward.
    const std::vector<double>& grad() const;
    void zero_grad();

    /// Direct storage access for leaf tensors (parameter init, optimizers,
    /// finite differences). Throws on non-leaf nodes.
    std::vector<double>& leaf_values();

    /// Reverse-mode sweep from a scalar. Leaf grads accumulate across calls.
    void backward() const;

    detail::Node* node() const { return node_.get(); }
    std::shared_ptr<detail::Node> node_ptr() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backprop,
                          bool check_finite);
};

/// Disables graph construction in scope; forward values still computed.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_enabled();

// Elementwise with right-aligned broadcast (an axis of extent 1, or a missing
// leading axis, broadcasts).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b); // [m,k]x[k,n] -> [m,n]
Tensor softmax_lastdim(const Tensor& x);

/// Mean-0/var-1 over `axis` per remaining position, then per-channel affine
/// (gain/bias over the last axis). eps added to the biased variance.
Tensor normalize_axis(const Tensor& x, int axis, const Tensor& gain, const Tensor& bias,
                      double eps = 1e-5);
/// Layer norm over the channel (last) axis.
Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                    double eps = 1e-5);

/// Per-position affine map [..,C_in] -> [..,C_out]; w is [C_in,C_out],
/// optional bias [C_out]. No spatial mixing.
Tensor pointwise_linear(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor());

/// x [T,H,W,C_in], w [kh,kw,C_in,C_out], optional bias [C_out].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
              int dilation = 1);
Tensor bilinear_up2x(const Tensor& x); // [T,H,W,C] -> [T,2H,2W,C]

Tensor reshape(const Tensor& x, Shape shape);
Tensor slice_lastdim(const Tensor& x, int64_t start, int64_t len);
Tensor concat_lastdim(const std::vector<Tensor>& parts);
Tensor tile_first_axis(const Tensor& x, int64_t times); // [1,..] -> [times,..]
Tensor crop_spatial(const Tensor& x, int64_t new_h, int64_t new_w); // top-left crop

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor max_lastdim(const Tensor& x);  // keepdim: [..,L] -> [..,1]
Tensor mean_lastdim(const Tensor& x); // keepdim

/// Row gather: x viewed as [rows,C], idx entries in [-1,rows); -1 yields a
/// zero row. Backward scatter-adds.
Tensor gather_rows(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> idx);

// Attention kernels. P spatial positions, S slots per position, C channels.
// q [Tq*P, C], keys/vals [P*S, C], scores/probs [Tq*P, S].
Tensor neighbor_scores(const Tensor& q, const Tensor& keys, int64_t positions, int64_t slots);
/// Scaled softmax per row over valid slots; invalid slots get probability 0.
/// valid has P*S entries shared by all Tq query frames.
Tensor masked_softmax_scaled(const Tensor& scores,
                             std::shared_ptr<const std::vector<uint8_t>> valid,
                             double scale, int64_t positions);
Tensor neighbor_apply(const Tensor& probs, const Tensor& vals, int64_t positions);

/// Mean binary cross entropy on logits, stable form. Targets must be exactly
/// 0 or 1.
Tensor bce_with_logits(const Tensor& logits, const Tensor& targets);

/// Central-difference gradient estimate of f at x0.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& x0, double h = 1e-5);

struct Parameter {
    std::string name;
    Tensor tensor;
};

/// Ordered, uniquely named parameter store; order is creation order and is
/// the serialization order.
class ParamRegistry {
public:
    Tensor create(const std::string& name, Shape shape, std::vector<double> init);
    Tensor create_zeros(const std::string& name, Shape shape);
    Tensor create_full(const std::string& name, Shape shape, double value);
    /// He fan-in normal init.
    Tensor create_he(const std::string& name, Shape shape, int64_t fan_in, std::mt19937_64& rng);

    bool contains(const std::string& name) const;
    Tensor find(const std::string& name) const;
    const std::vector<Parameter>& all() const { return params_; }
    int64_t total_size() const;
    void zero_grad();

private:
    std::vector<Parameter> params_;
};

/// Adam with decoupled weight decay.
class AdamOptimizer {
public:
    AdamOptimizer(ParamRegistry& params, double lr, double weight_decay,
                  double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step();
    void zero_grad();

private:
    ParamRegistry& params_;
    double lr_, weight_decay_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
    std::vector<std::vector<double>> m_, v_;
};

// Checkpoint file: magic + version, header text blob, then per-parameter
// (name, shape, little-endian f64) records in registry order.
struct Checkpoint {
    std::string header;
    std::vector<std::pair<std::string, Tensor>> records;
};

void write_checkpoint(const std::string& path, const std::string& header,
                      const ParamRegistry& params);
Checkpoint read_checkpoint(const std::string& path);
/// Copy record values into same-named registry params; name/shape mismatch
/// is an error.
void apply_checkpoint(const Checkpoint& ckpt, ParamRegistry& params);

} // namespace pns
