#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dclstm/model.hpp"

namespace dclstm {

struct TrainConfig {
  double learning_rate = 0.003;
  double l2_lambda = 0.0002;
  std::size_t batch_size = 4;
  int max_epochs = 50;
  int patience = 5;  // early-stopping epochs without val-MSE improvement
  std::uint64_t seed = 0;
  bool shuffle = true;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct FitResult {
  std::vector<EpochRow> history;
  int best_epoch = 0;
  double best_val_mse = 0.0;
};

struct EvalReport {
  double mse = 0.0;
  double mae = 0.0;
  std::vector<Tensor> predictions;  // one [p,1] tensor per sample
  std::vector<Tensor> residuals;    // observed minus predicted
  bool normalized_units = true;
};

// MSE over all residuals plus lambda * sum of squared final-dense weights.
NodePtr training_loss(const NodePtr& pred, const Tensor& target, const NodePtr& final_dense_w,
                      double l2_lambda);

// Standard Adam with bias correction.
struct AdamState {
  std::vector<Tensor> m;  // aligned with the trainable entries of the store
  std::vector<Tensor> v;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

AdamState make_adam_state(const ParamStore& store);
void adam_step(ParamStore& store, AdamState& state, double lr);

// Runs forward/backward on one mini-batch, leaves gradients in the store, and
// returns the batch loss.
double train_batch(Model& model, std::span<const Sample* const> batch, double l2_lambda);

FitResult fit(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& config);

EvalReport evaluate(Model& model, const std::vector<Sample>& samples);

// Same accounting for any predictor (used by the analytic baselines).
using Predictor = std::function<Tensor(const Sample&)>;
EvalReport evaluate_predictions(const std::vector<Sample>& samples, const Predictor& predict);

struct GridPoint {
  TrainConfig config;
  double val_mse = 0.0;
  double val_mae = 0.0;
};

struct GridSearchResult {
  TrainConfig best;
  std::vector<GridPoint> table;
};

GridSearchResult grid_search(const std::function<Model()>& factory,
                             const std::vector<double>& learning_rates,
                             const std::vector<double>& lambdas,
                             const std::vector<std::size_t>& batch_sizes,
                             const std::vector<Sample>& train, const std::vector<Sample>& val,
                             int epoch_budget, std::uint64_t seed);

}  // namespace dclstm
