#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

#include "dclstm/data.hpp"
#include "dclstm/layers.hpp"

namespace dclstm {

enum class Variant {
  DCLSTMt,         // test a: dual CNN+LSTM, separable convs, time marker
  DCLSTMt_Conv2D,  // test b: traditional convs
  CLSTM_S_t,       // test c: space branch only
  CLSTM_T_t,       // test d: time branch only
  DCLSTM_noMarker, // test e: no marker branch
  CNN_t,           // test f: convolutional layers only
  SpeedOnly,       // test j: speed channel input only
  FlowOnly,        // test k: flow channel inputs only
};

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct ModelSpec {
  Variant variant = Variant::DCLSTMt;
  std::size_t sites = 60;       // p
  std::size_t window = 4;       // n
  std::size_t channels = 6;
  std::size_t horizon = 1;      // lead time in slots; forecasts are direct
  std::size_t marker_dim = kMarkerDim;
  std::array<std::size_t, 3> conv_widths{32, 64, 128};
  bool b11_transpose = true;    // axis transpose vs raw reshape for the (n,p)->(p,n) step
  double bn_momentum = 0.99;
  double bn_eps = 1e-3;
  double l2_lambda = 0.0002;    // final dense weight penalty
  std::uint64_t init_seed = 0;
};

ModelSpec make_model_spec(Variant v, std::size_t sites = 60, std::size_t window = 4,
                          std::size_t horizon = 1);

struct NamedLayer {
  std::string name;  // a_0 .. d_1
  LayerSpec spec;
};

struct ForwardGraph {
  NodePtr output;  // [B, p, 1]
  std::unordered_map<std::string, NodePtr> leaves;  // parameter name -> leaf node
};

class Model {
 public:
  static Model build(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  const std::vector<NamedLayer>& layers() const { return layers_; }
  std::size_t total_params() const { return store_.total_size(); }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }
  const std::string& final_dense_weight_name() const { return final_dense_weight_; }
  long train_steps() const { return train_steps_; }
  void set_train_steps(long n) { train_steps_ = n; }

  bool uses_space_branch() const;
  bool uses_time_branch() const;
  bool uses_marker() const;
  bool uses_lstm() const;

  // Training path: parameters enter as autodiff leaves so gradients can be
  // read back off the graph. Train mode also updates batch-norm moving stats.
  ForwardGraph forward_graph(const Tensor& space_in, const Tensor& time_in, const Tensor& marker_in,
                             Mode mode);
  // Inference path, no graph bookkeeping.
  Tensor forward(const Tensor& space_in, const Tensor& time_in, const Tensor& marker_in, Mode mode);
  Tensor forward(const Sample& sample, Mode mode);  // adds the batch axis

 private:
  ModelSpec spec_;
  ParamStore store_;
  std::vector<NamedLayer> layers_;
  std::string final_dense_weight_;
  long train_steps_ = 0;

  NodePtr run(const NodePtr& space_in, const NodePtr& time_in, const NodePtr& marker_in, Mode mode,
              const std::unordered_map<std::string, NodePtr>& leaves);
};

// Checkpoint container: parameters by Table-1 layer naming plus scaler state,
// seed, epoch and validation history.
struct CheckpointExtra {
  bool has_scaler = false;
  Scaler scaler;
  std::uint64_t seed = 0;
  int epoch = 0;
  std::vector<double> val_mse_history;
};

void save_checkpoint(const Model& model, const std::string& path, const CheckpointExtra& extra);
Model load_checkpoint(const std::string& path, CheckpointExtra* extra = nullptr);
// Loading against a caller-supplied spec fails loudly on mismatch.
Model load_checkpoint_expecting(const std::string& path, const ModelSpec& expected,
                                CheckpointExtra* extra = nullptr);

}  // namespace dclstm
