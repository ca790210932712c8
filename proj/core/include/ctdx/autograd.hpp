#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ctdx/tensor.hpp"

namespace ctdx::ag {

// Tape-free dynamic graph: each op produces a Node holding its value, its
// parent links and a closure that scatters the node's gradient into the
// parents. backward() walks the graph in reverse topological order.
struct Node {
  Tensor value;
  Tensor grad;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;
  bool requires_grad = false;
  std::string name;  // set for parameters only
};

using Var = std::shared_ptr<Node>;

Var leaf(Tensor value, bool requires_grad = false);
Var constant(Tensor value);

// Ensures n.grad is allocated (zero-filled) with the value's shape.
Tensor& ensure_grad(Node& n);

// Backpropagates from a scalar root (size-1 value, seeded with 1).
void backward(const Var& root);

double scalar(const Var& v);

// Elementwise and scalar ops.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& x, double c);
Var add_const(const Var& x, double c);
Var relu(const Var& x);
Var sigmoid(const Var& x);
Var logv(const Var& x);
Var sqrtv(const Var& x);
Var clamp(const Var& x, double lo, double hi);

// Reductions.
Var sum(const Var& x);   // -> [1]
Var mean(const Var& x);  // -> [1]

Var divide(const Var& a, const Var& b);

// Shape and structure.
Var concat_channels(const std::vector<Var>& xs);        // [N,C_i,H,W] -> [N,sum C_i,H,W]
Var slice_channels(const Var& x, int c0, int c1);       // channels [c0, c1)
Var slice_batch(const Var& x, int n0, int n1);          // leading dim [n0, n1)
Var reshape(const Var& x, std::vector<int> shape);
Var matrix_row(const Var& m, int row);                  // [R,K] -> [1,K]
Var broadcast_rows(const Var& row, int n);              // [1,K] -> [N,K]
Var sum_channels(const Var& x);                         // [N,C,H,W] -> [N,1,H,W]

// Neural network ops. Feature maps are [N,C,H,W].
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int padding, int dilation);
Var maxpool2x2(const Var& x);
Var global_avg_pool(const Var& x);                      // [N,C,H,W] -> [N,C]
Var linear(const Var& x, const Var& w, const Var& b);   // [N,K],[M,K],[M] -> [N,M]
Var softmax_rows(const Var& x);                         // [N,M] row-wise
Var channel_scale(const Var& x, const Var& s);          // s: [N,C]
Var upsample_bilinear(const Var& x, int out_h, int out_w);
// Per-sample min-max normalization over all elements; constant maps -> 0.
Var minmax_normalize(const Var& x);

}  // namespace ctdx::ag
