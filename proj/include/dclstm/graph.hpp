#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dclstm/tensor.hpp"

namespace dclstm {

// Reverse-mode autodiff over a DAG of tensor nodes. Graphs are built fresh
// for every forward pass and confined to one thread; gradients accumulate
// add-into during a single backward traversal.
struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  Tensor value;
  Tensor grad;  // allocated lazily, same shape as value
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward_fn;  // adds into parents' grads

  Tensor& ensure_grad();
};

NodePtr constant(Tensor v);
NodePtr leaf(Tensor v);  // requires_grad = true

// Elementwise with broadcasting limited to scalar or trailing-suffix shapes.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double k);
NodePtr add_const(const NodePtr& a, double k);

// x[...,K] * w[K,N] -> [...,N]; leading axes of x are batch axes.
NodePtr matmul(const NodePtr& x, const NodePtr& w);
// matmul plus per-output bias b[N].
NodePtr linear(const NodePtr& x, const NodePtr& w, const NodePtr& b);

NodePtr sigmoid(const NodePtr& a);
NodePtr tanh_op(const NodePtr& a);
NodePtr relu(const NodePtr& a);
NodePtr square(const NodePtr& a);
NodePtr abs_op(const NodePtr& a);

NodePtr reshape(const NodePtr& a, Shape shape);
NodePtr transpose(const NodePtr& a, std::size_t axis1, std::size_t axis2);
NodePtr concat(const std::vector<NodePtr>& parts, std::size_t axis);
NodePtr slice(const NodePtr& a, std::size_t axis, std::size_t start, std::size_t len);

NodePtr sum_all(const NodePtr& a);
NodePtr mean_all(const NodePtr& a);

// Convolutions, stride 1, same-padding (even kernels pad the extra cell on
// the trailing side). Channel axis is last.
NodePtr conv2d(const NodePtr& x, const NodePtr& w, const NodePtr& b);              // x[B,H,W,Ci], w[kh,kw,Ci,Co]
NodePtr depthwise_conv2d(const NodePtr& x, const NodePtr& w);                      // w[kh,kw,C]
NodePtr conv1d(const NodePtr& x, const NodePtr& w, const NodePtr& b);              // x[B,L,Ci], w[k,Ci,Co]

// Batch norm over all axes except the last (channel) axis.
// Train mode normalizes with batch statistics and reports them so the caller
// can update moving averages; infer mode uses the supplied moving statistics.
NodePtr batch_norm_train(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta, double eps,
                         Tensor* batch_mean_out, Tensor* batch_var_out);
NodePtr batch_norm_infer(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                         const Tensor& moving_mean, const Tensor& moving_var, double eps);

// Backpropagate from a scalar root; every reachable requires-grad node ends
// up holding dRoot/dValue. Visits each node exactly once.
void backward(const NodePtr& root);

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::vector<double> per_param;  // max rel error per parameter tensor
  bool pass = false;
};

// f builds a scalar-rooted graph from leaf nodes for the given parameters.
// Compares analytic gradients against central finite differences. When
// max_coords > 0 only that many randomly chosen coordinates per tensor are
// probed (seeded).
using ScalarFn = std::function<NodePtr(const std::vector<NodePtr>&)>;
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double epsilon,
                           double tolerance, int max_coords = -1, std::uint64_t seed = 0);

}  // namespace dclstm
