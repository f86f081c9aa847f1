#pragma once

#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "fogflow/grid.hpp"
#include "fogflow/param_store.hpp"

namespace fogflow::ad {

struct Shape {
    int h = 1;
    int w = 1;
    int c = 1;
    int size() const { return h * w * c; }
    bool operator==(const Shape& o) const { return h == o.h && w == o.w && c == o.c; }
    bool operator!=(const Shape& o) const { return !(*this == o); }
};

class Tape;

// Handle to a node on a Tape. Cheap to copy; valid as long as the tape lives.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

    const Shape& shape() const;
    const std::vector<double>& value() const;
    const std::vector<double>& grad() const;
    double scalar() const;  // requires size 1

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

// Reverse-mode tape over a fixed op vocabulary. Nodes are appended in forward
// order; backward() walks them in reverse. Forward evaluation is pure; all
// gradient accumulation happens inside backward() on this tape only.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Tracked leaf (participates in gradients).
    Var leaf(Shape shape, std::vector<double> value);
    // Untracked constant.
    Var constant(Shape shape, std::vector<double> value);
    Var constant(const ImageGrid& g);
    Var constant(const FlowField& f);
    Var constant(const Mask& m);
    Var constant_scalar(double v);

    // Tracked leaf bound to a ParamStore entry; accumulate_param_grads() adds
    // the leaf's gradient back into the store after backward().
    Var param(ParamStore& store, const std::string& name, Shape shape);

    // Seeds d(root)/d(root) = 1 and runs the reverse sweep. Root must be scalar.
    void backward(Var root);
    void accumulate_param_grads();

    int size() const { return static_cast<int>(nodes_.size()); }

    // Node access (used by op implementations).
    const Shape& shape(int id) const { return nodes_[id].shape; }
    std::vector<double>& val(int id) { return nodes_[id].val; }
    const std::vector<double>& val(int id) const { return nodes_[id].val; }
    std::vector<double>& grad(int id) { return nodes_[id].grad; }
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }

    int make_node(Shape shape, bool needs_grad);
    void set_backward(int id, std::function<void(Tape&)> back) { nodes_[id].back = std::move(back); }

private:
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;
        bool needs_grad = false;
        std::function<void(Tape&)> back;
    };
    struct ParamBinding {
        int node = -1;
        ParamStore* store = nullptr;
        std::string name;
    };
    // Deque keeps node references stable while ops append new nodes.
    std::deque<Node> nodes_;
    std::vector<ParamBinding> bindings_;
};

// ---- Elementwise and scalar ops ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var exp_v(Var a);
Var log_v(Var a);
Var tanh_v(Var a);
Var softplus_v(Var a);
// sqrt(x^2 + eps^2); the smoothed |x| used wherever a loss needs an absolute value.
Var smooth_abs(Var a, double eps = 1e-6);
// (smooth_abs(x) + eps)^p, fused; the sparse L_p penalty kernel.
Var sparse_pow(Var a, double p, double eps, double abs_eps = 1e-6);

// ---- Reductions and shape ops ----
Var sum(Var a);                       // -> (1,1,1)
Var channel_sum(Var a);               // (h,w,c) -> (h,w,1)
Var gather(Var a, std::vector<int> idx);  // flat indices -> (n,1,1)
Var softmax_channels(Var a);          // softmax over c at every (h,w)

// ---- Structured ops ----
// Stride-s 2D convolution, zero padding (k-1)/2. Weight layout
// [ky][kx][ci][co] flattened; bias has co entries.
Var conv2d(Var input, Var weight, Var bias, int kh, int kw, int ci, int co, int stride);
// Backward warp with border clamp; differentiable in src and flow.
Var warp_bilinear(Var src, Var flow);
// 5-point Laplacian, replicate borders.
Var laplacian_v(Var a);
// Bilinear upsampling by an integer factor (half-pixel-centered grid).
Var upsample_bilinear(Var a, int factor);
// (h,w,1) disparity -> (h,w,2) flow (-d, 0) for rectified stereo warping.
Var disparity_to_flow(Var d);
// Min-max normalization to [0,1]; constant inputs map to all 0.5. Reports the
// constants used when out_min/out_max are non-null.
Var minmax_normalize(Var a, double* out_min = nullptr, double* out_max = nullptr);

// Conversions back to plain carriers.
ImageGrid to_grid(Var v);
FlowField to_flow(Var v);

}  // namespace fogflow::ad
