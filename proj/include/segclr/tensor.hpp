// tensor.hpp - minimal reverse-mode autodiff over dense double tensors.
//
// A computation step builds a DAG of Node values; backward() runs the
// recorded closures in reverse topological order. Everything is double
// precision and single-threaded, so a fixed op sequence is bit-reproducible.

#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace segclr::ad {

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

class Node {
public:
    Shape shape;
    std::vector<double> x;   // forward values
    std::vector<double> g;   // gradient, allocated lazily by grad()
    bool needs_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backprop;  // accumulates into parents' grads

    std::size_t numel() const { return x.size(); }

    // Zero-filled gradient buffer, created on first use.
    std::vector<double>& grad() {
        if (g.size() != x.size()) g.assign(x.size(), 0.0);
        return g;
    }
};

using Value = std::shared_ptr<Node>;

// ---- leaves ---------------------------------------------------------------

Value constant(Shape shape, std::vector<double> data);
Value scalar(double v);
Value param(Shape shape, std::vector<double> data);  // needs_grad = true

// ---- elementwise ----------------------------------------------------------

Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& a, double s);
Value add_scalar(const Value& a, double s);
Value relu(const Value& a);
Value sigmoid(const Value& a);
Value log_(const Value& a);
Value exp_(const Value& a);
Value sqrt_(const Value& a);
Value neg(const Value& a);

// Identity forward, zero gradient through the argument.
Value stopgrad(const Value& a);

// Data copy with a new shape (numel must match).
Value reshape(const Value& a, Shape shape);

// ---- linear algebra -------------------------------------------------------

// out[n,o] = sum_i x[n,i] * w[o,i] + b[o]
Value dense(const Value& x, const Value& w, const Value& b);

// a[M,K] x b[N,K]^T -> [M,N]
Value matmul_nt(const Value& a, const Value& b);

// ---- convolution / spatial ------------------------------------------------

// x[N,Ci,H,W], w[Co,Ci,kh,kw], b[Co]; stride 1, symmetric zero padding.
Value conv2d(const Value& x, const Value& w, const Value& b, int pad);

// 2x2 max pooling, stride 2. H and W must be even.
Value maxpool2(const Value& x);

// 2x nearest-neighbour upsampling.
Value upsample_nearest2(const Value& x);

// Concatenate along the channel axis; spatial dims must match.
Value concat_channels(const Value& a, const Value& b);

// Stack two [N,D] matrices into [Na+Nb, D].
Value concat_rows(const Value& a, const Value& b);

// Group normalization over channel groups. Accepts [N,C,H,W] or [N,C]
// (treated as H=W=1). gamma/beta are per-channel affine parameters.
Value group_norm(const Value& x, const Value& gamma, const Value& beta,
                 int groups, double eps = 1e-5);

// ---- reductions -----------------------------------------------------------

Value sum_all(const Value& a);            // -> [1]
Value mean_all(const Value& a);           // -> [1]
Value row_sum(const Value& a);            // [N,D] -> [N]
Value spatial_mean(const Value& a);       // [N,C,H,W] -> [N,C]
Value sum_per_channel(const Value& a);    // [N,C,H,W] -> [C]

// Rows scaled to unit L2 norm; all-zero rows map to zero (clamped norm).
Value l2_normalize_rows(const Value& a);

// ---- graph ----------------------------------------------------------------

// Backpropagate from a scalar root (numel 1). Seeds root grad with 1.
void backward(const Value& root);

}  // namespace segclr::ad
