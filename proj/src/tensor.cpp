#include "pns/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace pns {

int64_t shape_size(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;

    int64_t size() const { return static_cast<int64_t>(value.size()); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

} // namespace detail

using detail::Node;

namespace {

thread_local int g_no_grad_depth = 0;

void check_shape(bool ok, const std::string& what) {
    if (!ok) throw Error(ErrorCode::shape_mismatch, what);
}

void validate_shape(const Shape& shape) {
    for (int64_t d : shape) {
        if (d <= 0)
            throw Error(ErrorCode::invalid_argument,
                        "tensor extents must be positive, got " + shape_to_string(shape));
    }
}

void check_finite_values(const std::vector<double>& v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw Error(ErrorCode::numeric, std::string("non-finite value produced by ") + op);
    }
}

} // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }

bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
               std::function<void(Node&)> backprop, bool check_finite = true) {
    if (check_finite) check_finite_values(value, "op");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(value);
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p.defined() && p.requires_grad()) needs = true;
    }
    node->requires_grad = needs;
    if (needs) {
        for (const auto& p : parents)
            if (p.defined()) node->parents.push_back(p.node_ptr());
        node->backprop = std::move(backprop);
    }
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return from_data(std::move(shape), {}, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    validate_shape(shape);
    std::vector<double> data(static_cast<size_t>(shape_size(shape)), value);
    return from_data(std::move(shape), std::move(data), requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
    validate_shape(shape);
    const int64_t n = shape_size(shape);
    if (data.empty()) data.assign(static_cast<size_t>(n), 0.0);
    if (static_cast<int64_t>(data.size()) != n)
        throw Error(ErrorCode::shape_mismatch,
                    "data length " + std::to_string(data.size()) + " does not match shape " +
                        shape_to_string(shape));
    check_finite_values(data, "from_data");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const {
    if (!node_) throw Error(ErrorCode::internal, "empty tensor");
    return node_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

int64_t Tensor::dim(int axis) const {
    const auto& s = shape();
    int r = static_cast<int>(s.size());
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw Error(ErrorCode::invalid_argument, "axis out of range");
    return s[static_cast<size_t>(axis)];
}

int64_t Tensor::size() const { return node_ ? node_->size() : 0; }

const std::vector<double>& Tensor::values() const {
    if (!node_) throw Error(ErrorCode::internal, "empty tensor");
    return node_->value;
}

double Tensor::scalar_value() const {
    if (size() != 1) throw Error(ErrorCode::shape_mismatch, "scalar_value on non-scalar");
    return values()[0];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

const std::vector<double>& Tensor::grad() const {
    if (!node_) throw Error(ErrorCode::internal, "empty tensor");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) node_->grad.assign(node_->value.size(), 0.0);
}

std::vector<double>& Tensor::leaf_values() {
    if (!node_) throw Error(ErrorCode::internal, "empty tensor");
    if (!node_->parents.empty())
        throw Error(ErrorCode::invalid_argument, "leaf_values on non-leaf tensor");
    return node_->value;
}

void Tensor::backward() const {
    if (!node_) throw Error(ErrorCode::internal, "empty tensor");
    if (size() != 1)
        throw Error(ErrorCode::invalid_argument, "backward requires a scalar loss");
    if (!node_->requires_grad) return;

    // Iterative topological order; interior grads reset per sweep, leaf
    // grads accumulate across sweeps.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (Node* n : order) {
        if (!n->parents.empty()) n->grad.assign(n->value.size(), 0.0);
        else n->ensure_grad();
    }
    node_->grad.assign(1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Broadcast helpers

namespace {

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (size_t i = 0; i < r; ++i) {
        int64_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        int64_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw Error(ErrorCode::shape_mismatch,
                        "cannot broadcast " + shape_to_string(a) + " with " + shape_to_string(b));
        out[i] = std::max(da, db);
    }
    return out;
}

// Strides of `shape` right-aligned into `out` rank, 0 on broadcast axes.
std::vector<int64_t> broadcast_strides(const Shape& shape, const Shape& out) {
    std::vector<int64_t> strides(out.size(), 0);
    int64_t st = 1;
    for (size_t i = 0; i < shape.size(); ++i) {
        size_t ai = shape.size() - 1 - i;
        size_t oi = out.size() - 1 - i;
        strides[oi] = shape[ai] == 1 ? 0 : st;
        st *= shape[ai];
    }
    return strides;
}

// Accumulate grad (shaped like `out`) into the parent with `shape`.
void reduce_into(const std::vector<double>& grad, const Shape& out, const Shape& shape,
                 std::vector<double>& dst) {
    if (shape_size(shape) == shape_size(out) && broadcast_strides(shape, out) ==
            broadcast_strides(out, out)) {
        for (size_t i = 0; i < grad.size(); ++i) dst[i] += grad[i];
        return;
    }
    auto strides = broadcast_strides(shape, out);
    const size_t r = out.size();
    std::vector<int64_t> idx(r, 0);
    int64_t off = 0;
    const int64_t n = shape_size(out);
    for (int64_t flat = 0; flat < n; ++flat) {
        dst[static_cast<size_t>(off)] += grad[static_cast<size_t>(flat)];
        for (size_t i = r; i-- > 0;) {
            idx[i]++;
            off += strides[i];
            if (idx[i] < out[i]) break;
            off -= strides[i] * out[i];
            idx[i] = 0;
        }
    }
}

template <typename F>
Tensor binary_broadcast(const Tensor& a, const Tensor& b, F fn,
                        std::function<void(Node&, Node*, Node*, const Shape&)> backprop_builder,
                        const char* /*name*/) {
    Shape out = broadcast_shape(a.shape(), b.shape());
    const int64_t n = shape_size(out);
    std::vector<double> value(static_cast<size_t>(n));
    const auto& av = a.values();
    const auto& bv = b.values();
    if (a.shape() == out && b.shape() == out) {
        for (int64_t i = 0; i < n; ++i)
            value[static_cast<size_t>(i)] = fn(av[static_cast<size_t>(i)], bv[static_cast<size_t>(i)]);
    } else {
        auto as = broadcast_strides(a.shape(), out);
        auto bs = broadcast_strides(b.shape(), out);
        const size_t r = out.size();
        std::vector<int64_t> idx(r, 0);
        int64_t ao = 0, bo = 0;
        for (int64_t flat = 0; flat < n; ++flat) {
            value[static_cast<size_t>(flat)] =
                fn(av[static_cast<size_t>(ao)], bv[static_cast<size_t>(bo)]);
            for (size_t i = r; i-- > 0;) {
                idx[i]++;
                ao += as[i];
                bo += bs[i];
                if (idx[i] < out[i]) break;
                ao -= as[i] * out[i];
                bo -= bs[i] * out[i];
                idx[i] = 0;
            }
        }
    }
    Node* an = a.node();
    Node* bn = b.node();
    Shape out_copy = out;
    return make_op(std::move(out), std::move(value), {a, b},
                   [an, bn, out_copy, backprop_builder](Node& self) {
                       backprop_builder(self, an, bn, out_copy);
                   });
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_broadcast(
        a, b, [](double x, double y) { return x + y; },
        [](Node& self, Node* an, Node* bn, const Shape& out) {
            if (an->requires_grad) {
                an->ensure_grad();
                reduce_into(self.grad, out, an->shape, an->grad);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                reduce_into(self.grad, out, bn->shape, bn->grad);
            }
        },
        "add");
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_broadcast(
        a, b, [](double x, double y) { return x - y; },
        [](Node& self, Node* an, Node* bn, const Shape& out) {
            if (an->requires_grad) {
                an->ensure_grad();
                reduce_into(self.grad, out, an->shape, an->grad);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                std::vector<double> gneg(self.grad.size());
                for (size_t i = 0; i < gneg.size(); ++i) gneg[i] = -self.grad[i];
                reduce_into(gneg, out, bn->shape, bn->grad);
            }
        },
        "sub");
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_broadcast(
        a, b, [](double x, double y) { return x * y; },
        [](Node& self, Node* an, Node* bn, const Shape& out) {
            const int64_t n = shape_size(out);
            auto as = broadcast_strides(an->shape, out);
            auto bs = broadcast_strides(bn->shape, out);
            std::vector<double> ga, gb;
            if (an->requires_grad) ga.assign(self.grad.size(), 0.0);
            if (bn->requires_grad) gb.assign(self.grad.size(), 0.0);
            const size_t r = out.size();
            std::vector<int64_t> idx(r, 0);
            int64_t ao = 0, bo = 0;
            for (int64_t flat = 0; flat < n; ++flat) {
                const double g = self.grad[static_cast<size_t>(flat)];
                if (!ga.empty())
                    ga[static_cast<size_t>(flat)] = g * bn->value[static_cast<size_t>(bo)];
                if (!gb.empty())
                    gb[static_cast<size_t>(flat)] = g * an->value[static_cast<size_t>(ao)];
                for (size_t i = r; i-- > 0;) {
                    idx[i]++;
                    ao += as[i];
                    bo += bs[i];
                    if (idx[i] < out[i]) break;
                    ao -= as[i] * out[i];
                    bo -= bs[i] * out[i];
                    idx[i] = 0;
                }
            }
            if (an->requires_grad) {
                an->ensure_grad();
                reduce_into(ga, out, an->shape, an->grad);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                reduce_into(gb, out, bn->shape, bn->grad);
            }
        },
        "mul");
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor scale(const Tensor& x, double factor) {
    const auto& xv = x.values();
    std::vector<double> value(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) value[i] = xv[i] * factor;
    Node* xn = x.node();
    return make_op(x.shape(), std::move(value), {x}, [xn, factor](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * factor;
    });
}

Tensor relu(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> value(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) value[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    Node* xn = x.node();
    return make_op(x.shape(), std::move(value), {x}, [xn](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
    });
}

Tensor sigmoid(const Tensor& x) {
    const auto& xv = x.values();
    std::vector<double> value(xv.size());
    for (size_t i = 0; i < xv.size(); ++i) {
        const double z = xv[i];
        value[i] = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                            : std::exp(z) / (1.0 + std::exp(z));
    }
    Node* xn = x.node();
    return make_op(x.shape(), std::move(value), {x}, [xn](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double y = self.value[i];
            xn->grad[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_shape(a.rank() == 2 && b.rank() == 2, "matmul expects rank-2 tensors");
    const int64_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    check_shape(k == k2, "matmul inner extents differ: " + shape_to_string(a.shape()) + " x " +
                             shape_to_string(b.shape()));
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<double> value(static_cast<size_t>(m * n), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = av.data() + i * k;
        double* orow = value.data() + i * n;
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av_ik = arow[kk];
            const double* brow = bv.data() + kk * n;
            for (int64_t j = 0; j < n; ++j) orow[j] += av_ik * brow[j];
        }
    }
    Node* an = a.node();
    Node* bn = b.node();
    return make_op({m, n}, std::move(value), {a, b}, [an, bn, m, k, n](Node& self) {
        const auto& g = self.grad;
        if (an->requires_grad) {
            an->ensure_grad();
            // dA = dY * B^T
            for (int64_t i = 0; i < m; ++i) {
                const double* grow = g.data() + i * n;
                double* darow = an->grad.data() + i * k;
                for (int64_t kk = 0; kk < k; ++kk) {
                    const double* brow = bn->value.data() + kk * n;
                    double acc = 0.0;
                    for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    darow[kk] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            // dB = A^T * dY
            for (int64_t i = 0; i < m; ++i) {
                const double* arow = an->value.data() + i * k;
                const double* grow = g.data() + i * n;
                for (int64_t kk = 0; kk < k; ++kk) {
                    const double a_ik = arow[kk];
                    double* dbrow = bn->grad.data() + kk * n;
                    for (int64_t j = 0; j < n; ++j) dbrow[j] += a_ik * grow[j];
                }
            }
        }
    });
}

Tensor softmax_lastdim(const Tensor& x) {
    const int64_t last = x.dim(-1);
    check_shape(last >= 1, "softmax_lastdim needs last extent >= 1");
    const int64_t rows = x.size() / last;
    const auto& xv = x.values();
    std::vector<double> value(xv.size());
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * last;
        double* out = value.data() + r * last;
        double mx = in[0];
        for (int64_t j = 1; j < last; ++j) mx = std::max(mx, in[j]);
        double sum = 0.0;
        for (int64_t j = 0; j < last; ++j) {
            out[j] = std::exp(in[j] - mx);
            sum += out[j];
        }
        const double inv = 1.0 / sum;
        for (int64_t j = 0; j < last; ++j) out[j] *= inv;
    }
    Node* xn = x.node();
    return make_op(x.shape(), std::move(value), {x}, [xn, rows, last](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * last;
            const double* g = self.grad.data() + r * last;
            double* dx = xn->grad.data() + r * last;
            double dot = 0.0;
            for (int64_t j = 0; j < last; ++j) dot += g[j] * y[j];
            for (int64_t j = 0; j < last; ++j) dx[j] += y[j] * (g[j] - dot);
        }
    });
}

Tensor normalize_axis(const Tensor& x, int axis, const Tensor& gain, const Tensor& bias,
                      double eps) {
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw Error(ErrorCode::invalid_argument, "normalize axis");
    const Shape& s = x.shape();
    const int64_t channels = s.back();
    check_shape(gain.size() == channels && bias.size() == channels,
                "normalize affine must match channel extent");
    int64_t axis_len = s[static_cast<size_t>(axis)];
    int64_t inner = 1;
    for (int i = axis + 1; i < r; ++i) inner *= s[static_cast<size_t>(i)];
    int64_t outer = x.size() / (axis_len * inner);

    const auto& xv = x.values();
    const auto& gv = gain.values();
    const auto& bv = bias.values();
    std::vector<double> value(xv.size());
    std::vector<double> inv_std(static_cast<size_t>(outer * inner));
    std::vector<double> mean(static_cast<size_t>(outer * inner));
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t i = 0; i < inner; ++i) {
            double m = 0.0;
            for (int64_t j = 0; j < axis_len; ++j)
                m += xv[static_cast<size_t>((o * axis_len + j) * inner + i)];
            m /= static_cast<double>(axis_len);
            double var = 0.0;
            for (int64_t j = 0; j < axis_len; ++j) {
                const double d = xv[static_cast<size_t>((o * axis_len + j) * inner + i)] - m;
                var += d * d;
            }
            var /= static_cast<double>(axis_len);
            const double istd = 1.0 / std::sqrt(var + eps);
            mean[static_cast<size_t>(o * inner + i)] = m;
            inv_std[static_cast<size_t>(o * inner + i)] = istd;
            for (int64_t j = 0; j < axis_len; ++j) {
                const size_t pos = static_cast<size_t>((o * axis_len + j) * inner + i);
                const double xh = (xv[pos] - m) * istd;
                const int64_t c = static_cast<int64_t>(pos) % channels;
                value[pos] = xh * gv[static_cast<size_t>(c)] + bv[static_cast<size_t>(c)];
            }
        }
    }

    Node* xn = x.node();
    Node* gn = gain.node();
    Node* bn = bias.node();
    auto mean_p = std::make_shared<std::vector<double>>(std::move(mean));
    auto istd_p = std::make_shared<std::vector<double>>(std::move(inv_std));
    return make_op(
        x.shape(), std::move(value), {x, gain, bias},
        [xn, gn, bn, mean_p, istd_p, outer, inner, axis_len, channels](Node& self) {
            const auto& g = self.grad;
            const int64_t alen = axis_len;
            if (gn->requires_grad) gn->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            if (xn->requires_grad) xn->ensure_grad();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t i = 0; i < inner; ++i) {
                    const double m = (*mean_p)[static_cast<size_t>(o * inner + i)];
                    const double istd = (*istd_p)[static_cast<size_t>(o * inner + i)];
                    // dxhat_j = g_j * gain_c; accumulate affine grads too.
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int64_t j = 0; j < alen; ++j) {
                        const size_t pos = static_cast<size_t>((o * alen + j) * inner + i);
                        const int64_t c = static_cast<int64_t>(pos) % channels;
                        const double xh = (xn->value[pos] - m) * istd;
                        const double dxh = g[pos] * gn->value[static_cast<size_t>(c)];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                        if (gn->requires_grad) gn->grad[static_cast<size_t>(c)] += g[pos] * xh;
                        if (bn->requires_grad) bn->grad[static_cast<size_t>(c)] += g[pos];
                    }
                    if (!xn->requires_grad) continue;
                    const double inv_n = 1.0 / static_cast<double>(alen);
                    for (int64_t j = 0; j < alen; ++j) {
                        const size_t pos = static_cast<size_t>((o * alen + j) * inner + i);
                        const int64_t c = static_cast<int64_t>(pos) % channels;
                        const double xh = (xn->value[pos] - m) * istd;
                        const double dxh = g[pos] * gn->value[static_cast<size_t>(c)];
                        xn->grad[pos] += istd * (dxh - inv_n * sum_dxh - xh * inv_n * sum_dxh_xh);
                    }
                }
            }
        });
}

Tensor channel_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    return normalize_axis(x, -1, gain, bias, eps);
}

Tensor pointwise_linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    check_shape(w.rank() == 2, "pointwise weight must be [C_in,C_out]");
    const int64_t cin = x.dim(-1);
    check_shape(w.dim(0) == cin, "pointwise channel mismatch: input " + shape_to_string(x.shape()) +
                                     " vs weight " + shape_to_string(w.shape()));
    const int64_t cout = w.dim(1);
    Shape out_shape = x.shape();
    out_shape.back() = cout;
    Tensor flat = reshape(x, {x.size() / cin, cin});
    Tensor y = matmul(flat, w);
    if (bias.defined()) {
        check_shape(bias.size() == cout, "pointwise bias mismatch");
        y = add(y, bias);
    }
    return reshape(y, std::move(out_shape));
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad,
              int dilation) {
    check_shape(x.rank() == 4, "conv2d input must be [T,H,W,C]");
    check_shape(w.rank() == 4, "conv2d weight must be [kh,kw,Cin,Cout]");
    const int64_t T = x.dim(0), H = x.dim(1), W = x.dim(2), Ci = x.dim(3);
    const int64_t kh = w.dim(0), kw = w.dim(1), wci = w.dim(2), Co = w.dim(3);
    check_shape(wci == Ci, "conv2d channel mismatch");
    if (stride < 1 || pad < 0 || dilation < 1)
        throw Error(ErrorCode::invalid_argument, "conv2d stride/pad/dilation");
    const int64_t eff_kh = (kh - 1) * dilation + 1;
    const int64_t eff_kw = (kw - 1) * dilation + 1;
    const int64_t Ho = (H + 2 * pad - eff_kh) / stride + 1;
    const int64_t Wo = (W + 2 * pad - eff_kw) / stride + 1;
    check_shape(Ho >= 1 && Wo >= 1, "conv2d output would be empty");
    if (bias.defined()) check_shape(bias.size() == Co, "conv2d bias mismatch");

    const auto& xv = x.values();
    const auto& wv = w.values();
    std::vector<double> value(static_cast<size_t>(T * Ho * Wo * Co), 0.0);
    if (bias.defined()) {
        const auto& bv = bias.values();
        for (int64_t i = 0; i < T * Ho * Wo; ++i)
            std::memcpy(value.data() + i * Co, bv.data(), sizeof(double) * static_cast<size_t>(Co));
    }
    for (int64_t t = 0; t < T; ++t) {
        for (int64_t oh = 0; oh < Ho; ++oh) {
            for (int64_t ow = 0; ow < Wo; ++ow) {
                double* orow = value.data() + ((t * Ho + oh) * Wo + ow) * Co;
                for (int64_t ki = 0; ki < kh; ++ki) {
                    const int64_t ih = oh * stride - pad + ki * dilation;
                    if (ih < 0 || ih >= H) continue;
                    for (int64_t kj = 0; kj < kw; ++kj) {
                        const int64_t iw = ow * stride - pad + kj * dilation;
                        if (iw < 0 || iw >= W) continue;
                        const double* xrow = xv.data() + ((t * H + ih) * W + iw) * Ci;
                        const double* wrow = wv.data() + (ki * kw + kj) * Ci * Co;
                        for (int64_t ci = 0; ci < Ci; ++ci) {
                            const double xvv = xrow[ci];
                            if (xvv == 0.0) continue;
                            const double* wr = wrow + ci * Co;
                            for (int64_t co = 0; co < Co; ++co) orow[co] += xvv * wr[co];
                        }
                    }
                }
            }
        }
    }

    Node* xn = x.node();
    Node* wn = w.node();
    Node* bn = bias.defined() ? bias.node() : nullptr;
    std::vector<Tensor> parents = {x, w};
    if (bias.defined()) parents.push_back(bias);
    return make_op(
        {T, Ho, Wo, Co}, std::move(value), std::move(parents),
        [xn, wn, bn, T, H, W, Ci, kh, kw, Co, Ho, Wo, stride, pad, dilation](Node& self) {
            const auto& g = self.grad;
            if (xn->requires_grad) xn->ensure_grad();
            if (wn->requires_grad) wn->ensure_grad();
            if (bn && bn->requires_grad) {
                bn->ensure_grad();
                for (int64_t i = 0; i < T * Ho * Wo; ++i) {
                    const double* grow = g.data() + i * Co;
                    for (int64_t co = 0; co < Co; ++co) bn->grad[static_cast<size_t>(co)] += grow[co];
                }
            }
            if (!xn->requires_grad && !wn->requires_grad) return;
            for (int64_t t = 0; t < T; ++t) {
                for (int64_t oh = 0; oh < Ho; ++oh) {
                    for (int64_t ow = 0; ow < Wo; ++ow) {
                        const double* grow = g.data() + ((t * Ho + oh) * Wo + ow) * Co;
                        for (int64_t ki = 0; ki < kh; ++ki) {
                            const int64_t ih = oh * stride - pad + ki * dilation;
                            if (ih < 0 || ih >= H) continue;
                            for (int64_t kj = 0; kj < kw; ++kj) {
                                const int64_t iw = ow * stride - pad + kj * dilation;
                                if (iw < 0 || iw >= W) continue;
                                const int64_t xoff = ((t * H + ih) * W + iw) * Ci;
                                const int64_t woff = (ki * kw + kj) * Ci * Co;
                                if (xn->requires_grad) {
                                    double* dxrow = xn->grad.data() + xoff;
                                    for (int64_t ci = 0; ci < Ci; ++ci) {
                                        const double* wr = wn->value.data() + woff + ci * Co;
                                        double acc = 0.0;
                                        for (int64_t co = 0; co < Co; ++co) acc += grow[co] * wr[co];
                                        dxrow[ci] += acc;
                                    }
                                }
                                if (wn->requires_grad) {
                                    const double* xrow = xn->value.data() + xoff;
                                    for (int64_t ci = 0; ci < Ci; ++ci) {
                                        const double xvv = xrow[ci];
                                        if (xvv == 0.0) continue;
                                        double* dwr = wn->grad.data() + woff + ci * Co;
                                        for (int64_t co = 0; co < Co; ++co)
                                            dwr[co] += xvv * grow[co];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });
}

Tensor bilinear_up2x(const Tensor& x) {
    check_shape(x.rank() == 4, "bilinear_up2x input must be [T,H,W,C]");
    const int64_t T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    const int64_t Ho = H * 2, Wo = W * 2;
    const auto& xv = x.values();
    std::vector<double> value(static_cast<size_t>(T * Ho * Wo * C), 0.0);

    // Sample centers: src = (dst + 0.5) / 2 - 0.5, clamped.
    auto prep = [](int64_t o, int64_t n, int64_t& i0, int64_t& i1, double& w1) {
        double src = (static_cast<double>(o) + 0.5) * 0.5 - 0.5;
        if (src < 0) src = 0;
        if (src > static_cast<double>(n - 1)) src = static_cast<double>(n - 1);
        i0 = static_cast<int64_t>(std::floor(src));
        i1 = std::min(i0 + 1, n - 1);
        w1 = src - static_cast<double>(i0);
    };

    for (int64_t t = 0; t < T; ++t) {
        for (int64_t oh = 0; oh < Ho; ++oh) {
            int64_t y0, y1;
            double wy;
            prep(oh, H, y0, y1, wy);
            for (int64_t ow = 0; ow < Wo; ++ow) {
                int64_t x0, x1;
                double wx;
                prep(ow, W, x0, x1, wx);
                const double* p00 = xv.data() + ((t * H + y0) * W + x0) * C;
                const double* p01 = xv.data() + ((t * H + y0) * W + x1) * C;
                const double* p10 = xv.data() + ((t * H + y1) * W + x0) * C;
                const double* p11 = xv.data() + ((t * H + y1) * W + x1) * C;
                double* orow = value.data() + ((t * Ho + oh) * Wo + ow) * C;
                const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
                const double w10 = wy * (1 - wx), w11 = wy * wx;
                for (int64_t c = 0; c < C; ++c)
                    orow[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
            }
        }
    }
    Node* xn = x.node();
    return make_op({T, Ho, Wo, C}, std::move(value), {x}, [xn, T, H, W, C, Ho, Wo, prep](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t t = 0; t < T; ++t) {
            for (int64_t oh = 0; oh < Ho; ++oh) {
                int64_t y0, y1;
                double wy;
                prep(oh, H, y0, y1, wy);
                for (int64_t ow = 0; ow < Wo; ++ow) {
                    int64_t x0, x1;
                    double wx;
                    prep(ow, W, x0, x1, wx);
                    const double* grow = self.grad.data() + ((t * Ho + oh) * Wo + ow) * C;
                    double* p00 = xn->grad.data() + ((t * H + y0) * W + x0) * C;
                    double* p01 = xn->grad.data() + ((t * H + y0) * W + x1) * C;
                    double* p10 = xn->grad.data() + ((t * H + y1) * W + x0) * C;
                    double* p11 = xn->grad.data() + ((t * H + y1) * W + x1) * C;
                    const double w00 = (1 - wy) * (1 - wx), w01 = (1 - wy) * wx;
                    const double w10 = wy * (1 - wx), w11 = wy * wx;
                    for (int64_t c = 0; c < C; ++c) {
                        const double g = grow[c];
                        p00[c] += w00 * g;
                        p01[c] += w01 * g;
                        p10[c] += w10 * g;
                        p11[c] += w11 * g;
                    }
                }
            }
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    validate_shape(shape);
    check_shape(shape_size(shape) == x.size(),
                "reshape size mismatch: " + shape_to_string(x.shape()) + " -> " +
                    shape_to_string(shape));
    Node* xn = x.node();
    return make_op(std::move(shape), x.values(), {x}, [xn](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    }, /*check_finite=*/false);
}

Tensor slice_lastdim(const Tensor& x, int64_t start, int64_t len) {
    const int64_t last = x.dim(-1);
    if (start < 0 || len < 1 || start + len > last)
        throw Error(ErrorCode::invalid_argument, "slice_lastdim range");
    const int64_t rows = x.size() / last;
    const auto& xv = x.values();
    std::vector<double> value(static_cast<size_t>(rows * len));
    for (int64_t r = 0; r < rows; ++r)
        std::memcpy(value.data() + r * len, xv.data() + r * last + start,
                    sizeof(double) * static_cast<size_t>(len));
    Shape out = x.shape();
    out.back() = len;
    Node* xn = x.node();
    return make_op(std::move(out), std::move(value), {x}, [xn, rows, last, start, len](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* g = self.grad.data() + r * len;
            double* dx = xn->grad.data() + r * last + start;
            for (int64_t j = 0; j < len; ++j) dx[j] += g[j];
        }
    }, /*check_finite=*/false);
}

Tensor concat_lastdim(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw Error(ErrorCode::invalid_argument, "concat of nothing");
    Shape base = parts[0].shape();
    int64_t total_last = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        check_shape(s.size() == base.size(), "concat rank mismatch");
        for (size_t i = 0; i + 1 < s.size(); ++i)
            check_shape(s[i] == base[i], "concat leading extents differ");
        total_last += s.back();
    }
    const int64_t rows = parts[0].size() / parts[0].dim(-1);
    std::vector<double> value(static_cast<size_t>(rows * total_last));
    std::vector<int64_t> offsets;
    int64_t off = 0;
    for (const auto& p : parts) {
        const int64_t len = p.dim(-1);
        const auto& pv = p.values();
        for (int64_t r = 0; r < rows; ++r)
            std::memcpy(value.data() + r * total_last + off, pv.data() + r * len,
                        sizeof(double) * static_cast<size_t>(len));
        offsets.push_back(off);
        off += len;
    }
    Shape out = base;
    out.back() = total_last;
    std::vector<Node*> nodes;
    std::vector<int64_t> lens;
    for (const auto& p : parts) {
        nodes.push_back(p.node());
        lens.push_back(p.dim(-1));
    }
    return make_op(std::move(out), std::move(value), parts,
                   [nodes, lens, offsets, rows, total_last](Node& self) {
                       for (size_t pi = 0; pi < nodes.size(); ++pi) {
                           Node* pn = nodes[pi];
                           if (!pn->requires_grad) continue;
                           pn->ensure_grad();
                           const int64_t len = lens[pi];
                           const int64_t o = offsets[pi];
                           for (int64_t r = 0; r < rows; ++r) {
                               const double* g = self.grad.data() + r * total_last + o;
                               double* dst = pn->grad.data() + r * len;
                               for (int64_t j = 0; j < len; ++j) dst[j] += g[j];
                           }
                       }
                   }, /*check_finite=*/false);
}

Tensor tile_first_axis(const Tensor& x, int64_t times) {
    check_shape(x.rank() >= 1 && x.dim(0) == 1, "tile_first_axis expects leading extent 1");
    if (times < 1) throw Error(ErrorCode::invalid_argument, "tile count");
    const int64_t block = x.size();
    const auto& xv = x.values();
    std::vector<double> value(static_cast<size_t>(block * times));
    for (int64_t t = 0; t < times; ++t)
        std::memcpy(value.data() + t * block, xv.data(), sizeof(double) * static_cast<size_t>(block));
    Shape out = x.shape();
    out[0] = times;
    Node* xn = x.node();
    return make_op(std::move(out), std::move(value), {x}, [xn, times, block](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t t = 0; t < times; ++t) {
            const double* g = self.grad.data() + t * block;
            for (int64_t i = 0; i < block; ++i) xn->grad[static_cast<size_t>(i)] += g[i];
        }
    }, /*check_finite=*/false);
}

Tensor crop_spatial(const Tensor& x, int64_t new_h, int64_t new_w) {
    check_shape(x.rank() == 4, "crop_spatial input must be [T,H,W,C]");
    const int64_t T = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
    if (new_h < 1 || new_w < 1 || new_h > H || new_w > W)
        throw Error(ErrorCode::invalid_argument, "crop size");
    if (new_h == H && new_w == W) return x;
    const auto& xv = x.values();
    std::vector<double> value(static_cast<size_t>(T * new_h * new_w * C));
    for (int64_t t = 0; t < T; ++t)
        for (int64_t h = 0; h < new_h; ++h)
            std::memcpy(value.data() + ((t * new_h + h) * new_w) * C,
                        xv.data() + ((t * H + h) * W) * C,
                        sizeof(double) * static_cast<size_t>(new_w * C));
    Node* xn = x.node();
    return make_op({T, new_h, new_w, C}, std::move(value), {x},
                   [xn, T, H, W, C, new_h, new_w](Node& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (int64_t t = 0; t < T; ++t)
                           for (int64_t h = 0; h < new_h; ++h) {
                               const double* g = self.grad.data() + ((t * new_h + h) * new_w) * C;
                               double* dx = xn->grad.data() + ((t * H + h) * W) * C;
                               for (int64_t i = 0; i < new_w * C; ++i) dx[i] += g[i];
                           }
                   }, /*check_finite=*/false);
}

Tensor sum_all(const Tensor& x) {
    const auto& xv = x.values();
    double s = 0.0;
    for (double v : xv) s += v;
    Node* xn = x.node();
    return make_op({1}, {s}, {x}, [xn](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        const double g = self.grad[0];
        for (auto& d : xn->grad) d += g;
    });
}

Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.size());
    return scale(sum_all(x), inv);
}

Tensor max_lastdim(const Tensor& x) {
    const int64_t last = x.dim(-1);
    const int64_t rows = x.size() / last;
    const auto& xv = x.values();
    std::vector<double> value(static_cast<size_t>(rows));
    auto argmax = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(rows));
    for (int64_t r = 0; r < rows; ++r) {
        const double* in = xv.data() + r * last;
        int64_t bi = 0;
        for (int64_t j = 1; j < last; ++j)
            if (in[j] > in[bi]) bi = j;
        value[static_cast<size_t>(r)] = in[bi];
        (*argmax)[static_cast<size_t>(r)] = bi;
    }
    Shape out = x.shape();
    out.back() = 1;
    Node* xn = x.node();
    return make_op(std::move(out), std::move(value), {x}, [xn, argmax, rows, last](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
            xn->grad[static_cast<size_t>(r * last + (*argmax)[static_cast<size_t>(r)])] +=
                self.grad[static_cast<size_t>(r)];
    });
}

Tensor mean_lastdim(const Tensor& x) {
    const int64_t last = x.dim(-1);
    const int64_t rows = x.size() / last;
    const auto& xv = x.values();
    std::vector<double> value(static_cast<size_t>(rows));
    const double inv = 1.0 / static_cast<double>(last);
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        const double* in = xv.data() + r * last;
        for (int64_t j = 0; j < last; ++j) s += in[j];
        value[static_cast<size_t>(r)] = s * inv;
    }
    Shape out = x.shape();
    out.back() = 1;
    Node* xn = x.node();
    return make_op(std::move(out), std::move(value), {x}, [xn, rows, last, inv](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double g = self.grad[static_cast<size_t>(r)] * inv;
            double* dx = xn->grad.data() + r * last;
            for (int64_t j = 0; j < last; ++j) dx[j] += g;
        }
    });
}

Tensor gather_rows(const Tensor& x, std::shared_ptr<const std::vector<int64_t>> idx) {
    check_shape(x.rank() == 2, "gather_rows input must be [rows,C]");
    const int64_t rows = x.dim(0), C = x.dim(1);
    const int64_t m = static_cast<int64_t>(idx->size());
    const auto& xv = x.values();
    std::vector<double> value(static_cast<size_t>(m * C), 0.0);
    for (int64_t i = 0; i < m; ++i) {
        const int64_t src = (*idx)[static_cast<size_t>(i)];
        if (src < 0) continue;
        if (src >= rows) throw Error(ErrorCode::invalid_argument, "gather index out of range");
        std::memcpy(value.data() + i * C, xv.data() + src * C,
                    sizeof(double) * static_cast<size_t>(C));
    }
    Node* xn = x.node();
    return make_op({m, C}, std::move(value), {x}, [xn, idx, m, C](Node& self) {
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        for (int64_t i = 0; i < m; ++i) {
            const int64_t src = (*idx)[static_cast<size_t>(i)];
            if (src < 0) continue;
            const double* g = self.grad.data() + i * C;
            double* dx = xn->grad.data() + src * C;
            for (int64_t c = 0; c < C; ++c) dx[c] += g[c];
        }
    }, /*check_finite=*/false);
}

Tensor neighbor_scores(const Tensor& q, const Tensor& keys, int64_t positions, int64_t slots) {
    check_shape(q.rank() == 2 && keys.rank() == 2, "neighbor_scores expects rank-2 inputs");
    const int64_t C = q.dim(1);
    check_shape(keys.dim(1) == C, "neighbor_scores channel mismatch");
    check_shape(q.dim(0) % positions == 0, "query rows not a multiple of positions");
    check_shape(keys.dim(0) == positions * slots, "keys rows != positions*slots");
    const int64_t tq = q.dim(0) / positions;
    const auto& qv = q.values();
    const auto& kv = keys.values();
    std::vector<double> value(static_cast<size_t>(tq * positions * slots));
    for (int64_t t = 0; t < tq; ++t) {
        for (int64_t p = 0; p < positions; ++p) {
            const double* qrow = qv.data() + (t * positions + p) * C;
            const double* krow = kv.data() + p * slots * C;
            double* out = value.data() + (t * positions + p) * slots;
            for (int64_t s = 0; s < slots; ++s) {
                const double* kr = krow + s * C;
                double acc = 0.0;
                for (int64_t c = 0; c < C; ++c) acc += qrow[c] * kr[c];
                out[s] = acc;
            }
        }
    }
    Node* qn = q.node();
    Node* kn = keys.node();
    return make_op({tq * positions, slots}, std::move(value), {q, keys},
                   [qn, kn, tq, positions, slots, C](Node& self) {
                       if (qn->requires_grad) qn->ensure_grad();
                       if (kn->requires_grad) kn->ensure_grad();
                       for (int64_t t = 0; t < tq; ++t) {
                           for (int64_t p = 0; p < positions; ++p) {
                               const double* g = self.grad.data() + (t * positions + p) * slots;
                               const double* qrow = qn->value.data() + (t * positions + p) * C;
                               const double* krow = kn->value.data() + p * slots * C;
                               double* dq = qn->requires_grad
                                                ? qn->grad.data() + (t * positions + p) * C
                                                : nullptr;
                               double* dk = kn->requires_grad ? kn->grad.data() + p * slots * C
                                                              : nullptr;
                               for (int64_t s = 0; s < slots; ++s) {
                                   const double gs = g[s];
                                   if (gs == 0.0) continue;
                                   const double* kr = krow + s * C;
                                   if (dq)
                                       for (int64_t c = 0; c < C; ++c) dq[c] += gs * kr[c];
                                   if (dk) {
                                       double* dkr = dk + s * C;
                                       for (int64_t c = 0; c < C; ++c) dkr[c] += gs * qrow[c];
                                   }
                               }
                           }
                       }
                   });
}

Tensor masked_softmax_scaled(const Tensor& scores,
                             std::shared_ptr<const std::vector<uint8_t>> valid, double scale_f,
                             int64_t positions) {
    check_shape(scores.rank() == 2, "masked_softmax expects [rows,slots]");
    const int64_t rows = scores.dim(0), slots = scores.dim(1);
    check_shape(rows % positions == 0, "rows not a multiple of positions");
    check_shape(static_cast<int64_t>(valid->size()) == positions * slots,
                "mask size != positions*slots");
    const auto& xv = scores.values();
    std::vector<double> value(xv.size(), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t p = r % positions;
        const uint8_t* vm = valid->data() + p * slots;
        const double* in = xv.data() + r * slots;
        double* out = value.data() + r * slots;
        double mx = -std::numeric_limits<double>::infinity();
        for (int64_t s = 0; s < slots; ++s)
            if (vm[s] && in[s] * scale_f > mx) mx = in[s] * scale_f;
        if (!std::isfinite(mx))
            throw Error(ErrorCode::numeric, "softmax row has no valid slot");
        double sum = 0.0;
        for (int64_t s = 0; s < slots; ++s) {
            if (!vm[s]) continue;
            out[s] = std::exp(in[s] * scale_f - mx);
            sum += out[s];
        }
        const double inv = 1.0 / sum;
        for (int64_t s = 0; s < slots; ++s) out[s] *= inv;
    }
    Node* xn = scores.node();
    return make_op(scores.shape(), std::move(value), {scores},
                   [xn, rows, slots, scale_f](Node& self) {
                       if (!xn->requires_grad) return;
                       xn->ensure_grad();
                       for (int64_t r = 0; r < rows; ++r) {
                           const double* y = self.value.data() + r * slots;
                           const double* g = self.grad.data() + r * slots;
                           double* dx = xn->grad.data() + r * slots;
                           double dot = 0.0;
                           for (int64_t s = 0; s < slots; ++s) dot += g[s] * y[s];
                           for (int64_t s = 0; s < slots; ++s)
                               dx[s] += scale_f * y[s] * (g[s] - dot);
                       }
                   });
}

Tensor neighbor_apply(const Tensor& probs, const Tensor& vals, int64_t positions) {
    check_shape(probs.rank() == 2 && vals.rank() == 2, "neighbor_apply expects rank-2 inputs");
    const int64_t rows = probs.dim(0), slots = probs.dim(1), C = vals.dim(1);
    check_shape(rows % positions == 0, "rows not a multiple of positions");
    check_shape(vals.dim(0) == positions * slots, "vals rows != positions*slots");
    const int64_t tq = rows / positions;
    const auto& av = probs.values();
    const auto& vv = vals.values();
    std::vector<double> value(static_cast<size_t>(rows * C), 0.0);
    for (int64_t t = 0; t < tq; ++t) {
        for (int64_t p = 0; p < positions; ++p) {
            const double* arow = av.data() + (t * positions + p) * slots;
            const double* vrow = vv.data() + p * slots * C;
            double* out = value.data() + (t * positions + p) * C;
            for (int64_t s = 0; s < slots; ++s) {
                const double a = arow[s];
                if (a == 0.0) continue;
                const double* vr = vrow + s * C;
                for (int64_t c = 0; c < C; ++c) out[c] += a * vr[c];
            }
        }
    }
    Node* an = probs.node();
    Node* vn = vals.node();
    return make_op({rows, C}, std::move(value), {probs, vals},
                   [an, vn, tq, positions, slots, C](Node& self) {
                       if (an->requires_grad) an->ensure_grad();
                       if (vn->requires_grad) vn->ensure_grad();
                       for (int64_t t = 0; t < tq; ++t) {
                           for (int64_t p = 0; p < positions; ++p) {
                               const double* g = self.grad.data() + (t * positions + p) * C;
                               const double* arow = an->value.data() + (t * positions + p) * slots;
                               const double* vrow = vn->value.data() + p * slots * C;
                               double* da = an->requires_grad
                                                ? an->grad.data() + (t * positions + p) * slots
                                                : nullptr;
                               double* dv = vn->requires_grad ? vn->grad.data() + p * slots * C
                                                              : nullptr;
                               for (int64_t s = 0; s < slots; ++s) {
                                   const double* vr = vrow + s * C;
                                   if (da) {
                                       double acc = 0.0;
                                       for (int64_t c = 0; c < C; ++c) acc += g[c] * vr[c];
                                       da[s] += acc;
                                   }
                                   if (dv) {
                                       const double a = arow[s];
                                       if (a != 0.0) {
                                           double* dvr = dv + s * C;
                                           for (int64_t c = 0; c < C; ++c) dvr[c] += a * g[c];
                                       }
                                   }
                               }
                           }
                       }
                   });
}

Tensor bce_with_logits(const Tensor& logits, const Tensor& targets) {
    check_shape(logits.shape() == targets.shape(), "bce shapes differ");
    const auto& zv = logits.values();
    const auto& gv = targets.values();
    for (double g : gv)
        if (g != 0.0 && g != 1.0)
            throw Error(ErrorCode::invalid_argument, "bce targets must be exactly 0 or 1");
    const int64_t n = logits.size();
    double loss = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double z = zv[static_cast<size_t>(i)];
        const double g = gv[static_cast<size_t>(i)];
        loss += std::max(z, 0.0) - z * g + std::log1p(std::exp(-std::abs(z)));
    }
    loss /= static_cast<double>(n);
    Node* zn = logits.node();
    Node* gn = targets.node();
    return make_op({1}, {loss}, {logits, targets}, [zn, gn, n](Node& self) {
        if (!zn->requires_grad) return;
        zn->ensure_grad();
        const double gscale = self.grad[0] / static_cast<double>(n);
        for (int64_t i = 0; i < n; ++i) {
            const double z = zn->value[static_cast<size_t>(i)];
            const double sig = z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                                        : std::exp(z) / (1.0 + std::exp(z));
            zn->grad[static_cast<size_t>(i)] +=
                gscale * (sig - gn->value[static_cast<size_t>(i)]);
        }
    });
}

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& x0, double h) {
    std::vector<double> x = x0;
    std::vector<double> grad(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        x[i] = orig + h;
        const double fp = f(x);
        x[i] = orig - h;
        const double fm = f(x);
        x[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

// ---------------------------------------------------------------------------
// Parameters, optimizer, checkpoints

Tensor ParamRegistry::create(const std::string& name, Shape shape, std::vector<double> init) {
    if (contains(name))
        throw Error(ErrorCode::invalid_argument, "duplicate parameter name: " + name);
    Tensor t = Tensor::from_data(std::move(shape), std::move(init), /*requires_grad=*/true);
    params_.push_back({name, t});
    return t;
}

Tensor ParamRegistry::create_zeros(const std::string& name, Shape shape) {
    return create(name, std::move(shape), {});
}

Tensor ParamRegistry::create_full(const std::string& name, Shape shape, double value) {
    std::vector<double> init(static_cast<size_t>(shape_size(shape)), value);
    return create(name, std::move(shape), std::move(init));
}

Tensor ParamRegistry::create_he(const std::string& name, Shape shape, int64_t fan_in,
                                std::mt19937_64& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(std::max<int64_t>(fan_in, 1)));
    std::normal_distribution<double> dist(0.0, stddev);
    std::vector<double> init(static_cast<size_t>(shape_size(shape)));
    for (auto& v : init) v = dist(rng);
    return create(name, std::move(shape), std::move(init));
}

bool ParamRegistry::contains(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return true;
    return false;
}

Tensor ParamRegistry::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p.name == name) return p.tensor;
    throw Error(ErrorCode::invalid_argument, "unknown parameter: " + name);
}

int64_t ParamRegistry::total_size() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.tensor.size();
    return n;
}

void ParamRegistry::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

AdamOptimizer::AdamOptimizer(ParamRegistry& params, double lr, double weight_decay, double beta1,
                             double beta2, double eps)
    : params_(params), lr_(lr), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    for (const auto& p : params_.all()) {
        m_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
        v_.emplace_back(static_cast<size_t>(p.tensor.size()), 0.0);
    }
}

void AdamOptimizer::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.all().size(); ++pi) {
        Tensor t = params_.all()[pi].tensor;
        const auto& g = t.grad();
        auto& w = t.leaf_values();
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
        }
    }
}

void AdamOptimizer::zero_grad() { params_.zero_grad(); }

namespace {

constexpr char kCkptMagic[8] = {'P', 'N', 'S', 'C', 'K', 'P', 'T', '\n'};
constexpr uint32_t kCkptVersion = 1;

void write_u64(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_f64_le(std::ostream& os, const std::vector<double>& data) {
    // Assumes little-endian IEEE754 host, which is every supported target.
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(double)));
}

} // namespace

void write_checkpoint(const std::string& path, const std::string& header,
                      const ParamRegistry& params) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error(ErrorCode::io, "cannot open checkpoint for writing: " + path);
    os.write(kCkptMagic, 8);
    write_u64(os, kCkptVersion);
    write_u64(os, header.size());
    os.write(header.data(), static_cast<std::streamsize>(header.size()));
    write_u64(os, params.all().size());
    for (const auto& p : params.all()) {
        write_u64(os, p.name.size());
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const Shape& s = p.tensor.shape();
        write_u64(os, s.size());
        for (int64_t d : s) write_u64(os, static_cast<uint64_t>(d));
        write_f64_le(os, p.tensor.values());
    }
    if (!os) throw Error(ErrorCode::io, "checkpoint write failed: " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorCode::io, "cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCkptMagic, 8) != 0)
        throw Error(ErrorCode::io, "not a checkpoint file: " + path);
    const uint64_t version = read_u64(is);
    if (version != kCkptVersion)
        throw Error(ErrorCode::io, "unsupported checkpoint version " + std::to_string(version));
    Checkpoint ck;
    const uint64_t hlen = read_u64(is);
    ck.header.resize(hlen);
    is.read(ck.header.data(), static_cast<std::streamsize>(hlen));
    const uint64_t count = read_u64(is);
    for (uint64_t i = 0; i < count; ++i) {
        const uint64_t nlen = read_u64(is);
        std::string name(nlen, '\0');
        is.read(name.data(), static_cast<std::streamsize>(nlen));
        const uint64_t ndim = read_u64(is);
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<int64_t>(read_u64(is));
        std::vector<double> data(static_cast<size_t>(shape_size(shape)));
        is.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!is) throw Error(ErrorCode::io, "truncated checkpoint: " + path);
        ck.records.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    return ck;
}

void apply_checkpoint(const Checkpoint& ckpt, ParamRegistry& params) {
    std::unordered_map<std::string, const Tensor*> by_name;
    for (const auto& [name, t] : ckpt.records) by_name[name] = &t;
    for (const auto& p : params.all()) {
        auto it = by_name.find(p.name);
        if (it == by_name.end())
            throw Error(ErrorCode::io, "checkpoint missing parameter: " + p.name);
        if (it->second->shape() != p.tensor.shape())
            throw Error(ErrorCode::io, "checkpoint shape mismatch for " + p.name + ": " +
                                           shape_to_string(it->second->shape()) + " vs " +
                                           shape_to_string(p.tensor.shape()));
        Tensor handle = p.tensor; // shares the node
        handle.leaf_values() = it->second->values();
    }
}

} // namespace pns
