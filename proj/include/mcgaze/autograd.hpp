#pragma once

// Minimal reverse-mode automatic differentiation over mcgaze::Tensor.
//
// Every op returns a Var that owns its value and, when any input requires a
// gradient, a closure that pushes the output gradient back into its inputs.
// backward() walks the graph in reverse topological order from a scalar.

#include <functional>
#include <memory>
#include <vector>

#include "mcgaze/tensor.hpp"

namespace mcgaze::ad {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor& ensure_grad();
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  int dim(int i) const { return node_->value.dim(i); }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  double item() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad = true);

// Op defined outside this file. backward_fn reads self.grad and adds into
// each parent's ensure_grad(); it only runs when some parent needs a grad.
Var custom(Tensor value, std::vector<Var> parents, std::function<void(Node&)> backward_fn);

// Seeds d(root)/d(root) = 1 and accumulates into every reachable leaf grad.
void backward(const Var& root);

// ---- elementwise, identical shapes ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);

// ---- elementwise unary ----
Var neg(const Var& a);
Var relu(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var abs(const Var& a);
Var acos(const Var& a);
Var square(const Var& a);
Var pow_scalar(const Var& a, double p);
Var add_scalar(const Var& a, double s);
Var mul_scalar(const Var& a, double s);
Var clamp(const Var& a, double lo, double hi);
// Multiplies by a fixed (non-differentiable) tensor of the same shape.
Var mul_const(const Var& a, const Tensor& c);

// ---- reductions ----
Var sum(const Var& a);                     // -> [1]
Var row_sum(const Var& a);                 // [m,n] -> [m]
Var mul_rows(const Var& x, const Var& v);  // [m,n] * [m] broadcast over columns

// ---- shape ----
Var reshape(const Var& a, Shape shape);
Var slice_rows(const Var& a, int begin, int end);  // along dim 0
Var gather_rows(const Var& a, const std::vector<int>& rows);
Var concat_rows(const std::vector<Var>& parts);
Var slice_cols(const Var& a, int begin, int end);  // [m,n] -> [m,end-begin]
Var concat_cols(const std::vector<Var>& parts);    // [m,ni] -> [m,sum ni]
Var column(const Var& a, int j);                   // [m,n] -> [m]
Var stack_cols(const std::vector<Var>& cols);      // each [m] -> [m,k]

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);                    // [m,k]x[k,n]
Var linear(const Var& x, const Var& w, const Var& bias);   // [...,in]x[in,out] + [out]
Var bmm(const Var& a, const Var& b);                       // [r,m,k]x[r,k,n]

// ---- neural-network layers ----
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Scaled dot-product attention for `groups` independent token sets of length
// `len`, rows laid out group-major. q, k, v: [groups*len, C]; C split across
// `heads`. Returns [groups*len, C] (pre output projection).
Var attention(const Var& q, const Var& k, const Var& v, int groups, int len, int heads);

struct Conv2dOptions {
  int stride = 1;
  int padding = 0;
};
// x: [N,Ci,H,W], w: [Co,Ci,k,k], bias: [Co] or undefined.
Var conv2d(const Var& x, const Var& w, const Var& bias, Conv2dOptions opt);
Var max_pool2d(const Var& x, int kernel, int stride, int padding);
Var upsample_nearest(const Var& x, int out_h, int out_w);
// Per-channel scale and shift on [N,C,H,W].
Var channel_affine(const Var& x, const Var& scale, const Var& shift);

// Bilinear RoI pooling. features: [T,C,H,W]; boxes: [R,4] normalized
// center-form (cx,cy,w,h); frame_of_box[r] selects the frame. Returns
// [R, out*out, C] with cells row-major. Differentiable in features and boxes.
Var roi_align(const Var& features, const Var& boxes, const std::vector<int>& frame_of_box,
              int out_size, int sampling_ratio = 2);

}  // namespace mcgaze::ad
