#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dfreg::ad {

/// Dense double tensor. Spatial operations treat shape as [channels,
/// spatial...] with the last axis fastest; scalars use shape {1}.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s);
    Tensor(std::vector<int> s, double fill);
    Tensor(std::vector<int> s, std::vector<double> d);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::string shape_str() const;

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s), 0.0); }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
};

class Node;
using Value = std::shared_ptr<Node>;

/// Computation-graph node: forward value, lazily allocated adjoint, and the
/// backward rule that scatters the adjoint into the parents.
class Node {
public:
    Tensor data;
    Tensor grad;  // same shape once allocated
    bool requires_grad = false;
    bool grad_ready = false;
    std::vector<Value> parents;
    std::function<void(Node&)> backprop;
    const char* op = "leaf";

    void ensure_grad();
    double scalar() const { return data.data[0]; }
};

Value make_leaf(Tensor t, bool requires_grad = false);
Value constant(Tensor t);

// ---- elementwise ----
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value divide(const Value& a, const Value& b);
Value scale(const Value& a, double c);
Value add_const(const Value& a, double c);
Value neg(const Value& a);
Value relu(const Value& a);     // subgradient 0 at the kink
Value sigmoid(const Value& a);
Value tanh_v(const Value& a);
Value abs_v(const Value& a);    // subgradient 0 at 0
Value clamp_min(const Value& a, double floor);  // gradient passes when a >= floor

// ---- reductions ----
Value sum_all(const Value& a);
Value mean_all(const Value& a);

// ---- shape ----
Value concat_ch(std::span<const Value> parts);
Value concat_ch(std::initializer_list<Value> parts);
Value slice_ch(const Value& a, int c0, int c1);

// ---- spatial (channel-first layout) ----
/// Cross-correlation of [Cin,S...] with weights [Cout,Cin,K...]; bias may be
/// null. stride in {1,2}; symmetric zero padding `pad` per spatial axis.
Value conv_nd(const Value& x, const Value& w, const Value& b, int stride, int pad);

/// Transposed convolution, weights [Cin,Cout,K...]; output extent
/// (n-1)*stride + k (no padding).
Value conv_transpose_nd(const Value& x, const Value& w, const Value& b, int stride);

/// Differentiable warp: out[c](x) = multilinear sample of img[c] at
/// x + disp(x), clamp-to-edge. Gradients reach both the image (scattered to
/// the stencil corners) and the displacement (interpolation derivative;
/// zero where the coordinate clamped).
Value warp_diff(const Value& img, const Value& disp);

/// Align-corners multilinear upsampling to doubled spatial extents.
Value upsample2x(const Value& a);

/// Moving-window sum of width 2*radius+1 along every spatial axis, zero
/// beyond the ends. Self-adjoint, which keeps the backward rule trivial.
Value box_sum(const Value& a, int radius);

/// Per-channel derivative along a spatial axis: central differences interior,
/// one-sided on the faces.
Value grad_axis(const Value& a, int axis);

/// Forward difference along a spatial axis; the final slice is zero.
Value fd_forward(const Value& a, int axis);

/// Sum of grad_axis(a_i, i) over channels; input channels must equal the
/// spatial rank.
Value divergence_nd(const Value& a);

// ---- engine ----
/// Reverse sweep from a scalar root; adjoints accumulate by addition in a
/// deterministic (construction-driven) order.
void backward(const Value& root);

void zero_grad(std::span<const Value> params);

/// Central finite differences per parameter coordinate against the analytic
/// gradients of f(); returns the maximum relative error
/// |a - n| / (|a| + |n| + 1e-8).
double gradcheck(const std::function<Value()>& f, std::span<const Value> params, double eps = 1e-4);

struct AdamState {
    std::vector<Tensor> m, v;
    std::int64_t t = 0;
};

void adam_step(std::span<const Value> params, AdamState& state, double lr, double beta1 = 0.9,
               double beta2 = 0.999, double eps = 1e-8);

}  // namespace dfreg::ad
