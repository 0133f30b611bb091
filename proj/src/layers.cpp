#include "dclstm/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace dclstm {

std::size_t param_count(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::SeparableConv2D:
      // depthwise kh*kw per input channel, pointwise 1x1 mixing, bias per output
      return spec.kernel_h * spec.kernel_w * spec.in_channels +
             spec.in_channels * spec.out_channels + spec.out_channels;
    case LayerKind::Conv2D:
      return spec.kernel_h * spec.kernel_w * spec.in_channels * spec.out_channels +
             spec.out_channels;
    case LayerKind::Conv1D:
      return spec.kernel_h * spec.in_channels * spec.out_channels + spec.out_channels;
    case LayerKind::BatchNorm:
      // gamma, beta, moving mean, moving variance
      return 4 * spec.in_channels;
    case LayerKind::Dense:
    case LayerKind::TimeDistributedDense:
      return spec.in_dim * spec.units + spec.units;
    case LayerKind::LSTM:
      return 4 * ((spec.in_dim + spec.units) * spec.units + spec.units);
    case LayerKind::Reshape:
    case LayerKind::TimeDistributedFlatten:
    case LayerKind::Concat:
      return 0;
  }
  throw std::invalid_argument("param_count: unknown layer kind");
}

Tensor& ParamStore::add(const std::string& name, Tensor init, bool trainable) {
  if (index_.count(name)) throw std::invalid_argument("ParamStore: duplicate name " + name);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(init), Tensor{}, trainable});
  Entry& e = entries_.back();
  e.grad = Tensor(e.value.shape());
  return e.value;
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) != 0; }

Tensor& ParamStore::value(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return entries_[it->second].value;
}

const Tensor& ParamStore::value(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return entries_[it->second].value;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("ParamStore: no parameter " + name);
  return entries_[it->second].grad;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.grad.fill(0.0);
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.size();
  return n;
}

NodePtr apply_activation(const NodePtr& x, Activation act) {
  switch (act) {
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return tanh_op(x);
    case Activation::Linear: return x;
  }
  throw std::invalid_argument("apply_activation: unknown activation");
}

NodePtr separable_conv2d_apply(const NodePtr& x, const NodePtr& depthwise, const NodePtr& pointwise,
                               const NodePtr& bias, Activation act) {
  NodePtr y = depthwise_conv2d(x, depthwise);
  y = conv2d(y, pointwise, bias);  // pointwise is [1,1,Ci,Co]
  return apply_activation(y, act);
}

NodePtr conv2d_apply(const NodePtr& x, const NodePtr& w, const NodePtr& bias, Activation act) {
  return apply_activation(conv2d(x, w, bias), act);
}

NodePtr conv1d_apply(const NodePtr& x, const NodePtr& w, const NodePtr& bias, Activation act) {
  return apply_activation(conv1d(x, w, bias), act);
}

NodePtr time_distributed_dense_apply(const NodePtr& x, const NodePtr& w, const NodePtr& bias,
                                     Activation act) {
  // matmul already maps over leading axes, which is exactly weight sharing
  // across the distributed axis.
  return apply_activation(linear(x, w, bias), act);
}

LstmState lstm_step(const NodePtr& x_t, const LstmState& state, const NodePtr& w, const NodePtr& u,
                    const NodePtr& b) {
  const std::size_t units4 = w->value.shape()[1];
  if (units4 % 4 != 0) throw std::invalid_argument("lstm_step: kernel width must be 4*units");
  const std::size_t units = units4 / 4;
  NodePtr z = add(add(matmul(x_t, w), matmul(state.h, u)), b);  // [B, 4U]
  NodePtr i = sigmoid(slice(z, 1, 0, units));
  NodePtr f = sigmoid(slice(z, 1, units, units));
  NodePtr g = tanh_op(slice(z, 1, 2 * units, units));
  NodePtr o = sigmoid(slice(z, 1, 3 * units, units));
  NodePtr c = add(mul(f, state.c), mul(i, g));
  NodePtr h = mul(o, tanh_op(c));
  return LstmState{h, c};
}

NodePtr lstm_sequence_apply(const NodePtr& x, const NodePtr& w, const NodePtr& u, const NodePtr& b) {
  const Shape& xs = x->value.shape();
  if (xs.size() != 3) throw std::invalid_argument("lstm_sequence: expected [B,T,D], got " + shape_str(xs));
  const std::size_t B = xs[0], T = xs[1], D = xs[2];
  if (T == 0) throw std::invalid_argument("lstm_sequence: empty sequence");
  const std::size_t units = w->value.shape()[1] / 4;
  LstmState state{constant(Tensor(Shape{B, units})), constant(Tensor(Shape{B, units}))};
  std::vector<NodePtr> outputs;
  outputs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) {
    NodePtr x_t = reshape(slice(x, 1, t, 1), Shape{B, D});
    state = lstm_step(x_t, state, w, u, b);
    outputs.push_back(reshape(state.h, Shape{B, 1, units}));
  }
  return concat(outputs, 1);
}

Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-limit, limit);
  return t;
}

void init_lstm_weights(Tensor& w, Tensor& u, Tensor& b, std::size_t in_dim, std::size_t units,
                       Rng& rng) {
  w = glorot_uniform(Shape{in_dim, 4 * units}, in_dim, units, rng);
  const double rlimit = 1.0 / std::sqrt(static_cast<double>(units));
  u = Tensor(Shape{units, 4 * units});
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = rng.uniform(-rlimit, rlimit);
  b = Tensor(Shape{4 * units});
  for (std::size_t j = units; j < 2 * units; ++j) b[j] = 1.0;  // forget gate bias
}

}  // namespace dclstm
