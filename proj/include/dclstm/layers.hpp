#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "dclstm/graph.hpp"

namespace dclstm {

enum class LayerKind {
  SeparableConv2D,
  Conv2D,
  Conv1D,
  BatchNorm,
  Dense,
  TimeDistributedDense,
  LSTM,
  Reshape,
  TimeDistributedFlatten,
  Concat,
};

enum class Activation { Relu, Tanh, Linear };

struct LayerSpec {
  LayerKind kind = LayerKind::Dense;
  std::size_t kernel_h = 1;  // also the Conv1D kernel length
  std::size_t kernel_w = 1;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t in_dim = 0;   // Dense / TimeDistributedDense / LSTM input width
  std::size_t units = 0;    // Dense / TimeDistributedDense / LSTM
  Activation activation = Activation::Linear;
  double l2_lambda = 0.0;
};

// Closed-form trainable+non-trainable parameter count per layer kind.
std::size_t param_count(const LayerSpec& spec);

enum class Mode { Train, Infer };

struct Rng {
  std::mt19937_64 gen;
  explicit Rng(std::uint64_t seed) : gen(seed) {}
  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(gen);
  }
  double normal(double mean, double sd) {
    return std::normal_distribution<double>(mean, sd)(gen);
  }
  std::uint64_t next() { return gen(); }
};

// Flat named parameter storage. Entry order is creation order and fixed for a
// given model spec, which keeps gradient reduction and serialization
// deterministic.
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor grad;
    bool trainable = true;
  };

  Tensor& add(const std::string& name, Tensor init, bool trainable = true);
  bool has(const std::string& name) const;
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  void zero_grads();
  std::size_t total_size() const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

NodePtr apply_activation(const NodePtr& x, Activation act);

// Layer forward builders. Weight tensors come in as graph nodes so the same
// builders serve training (leaves) and gradient checking.
NodePtr separable_conv2d_apply(const NodePtr& x, const NodePtr& depthwise, const NodePtr& pointwise,
                               const NodePtr& bias, Activation act);
NodePtr conv2d_apply(const NodePtr& x, const NodePtr& w, const NodePtr& bias, Activation act);
NodePtr conv1d_apply(const NodePtr& x, const NodePtr& w, const NodePtr& bias, Activation act);
NodePtr time_distributed_dense_apply(const NodePtr& x, const NodePtr& w, const NodePtr& bias,
                                     Activation act);

struct LstmState {
  NodePtr h;  // [B, units]
  NodePtr c;  // [B, units]
};

// One recurrence step. Weights: w [D, 4U], u [U, 4U], b [4U], gate blocks
// ordered i, f, g, o.
LstmState lstm_step(const NodePtr& x_t, const LstmState& state, const NodePtr& w, const NodePtr& u,
                    const NodePtr& b);

// x [B, T, D] -> [B, T, units], zero initial state, full output sequence.
NodePtr lstm_sequence_apply(const NodePtr& x, const NodePtr& w, const NodePtr& u, const NodePtr& b);

// Weight initialization, seeded through rng.
Tensor glorot_uniform(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
// LSTM kernel [D,4U] + recurrent [U,4U] + bias [4U] with forget bias 1.
void init_lstm_weights(Tensor& w, Tensor& u, Tensor& b, std::size_t in_dim, std::size_t units,
                       Rng& rng);

}  // namespace dclstm
