#include "dclstm/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace dclstm {

namespace {

// Stack per-sample tensors along a new leading batch axis; target keeps only
// the final horizon column (direct forecasting).
Tensor stack(const std::vector<const Sample*>& batch, const Tensor Sample::* field) {
  const Tensor& first = (*batch[0]).*field;
  Shape s = first.shape();
  s.insert(s.begin(), batch.size());
  Tensor out(s);
  const std::size_t stride = first.size();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor& t = (*batch[i]).*field;
    std::copy(t.data(), t.data() + stride, out.data() + i * stride);
  }
  return out;
}

Tensor stack_targets_last(const std::vector<const Sample*>& batch) {
  const std::size_t p = batch[0]->target.shape()[0];
  const std::size_t h = batch[0]->target.shape()[1];
  Tensor out(Shape{batch.size(), p, 1});
  for (std::size_t i = 0; i < batch.size(); ++i)
    for (std::size_t s = 0; s < p; ++s)
      out[(i * p + s)] = batch[i]->target[s * h + (h - 1)];
  return out;
}

struct BatchInputs {
  Tensor space, time, marker;
};

BatchInputs batch_inputs(const Model& model, const std::vector<const Sample*>& batch) {
  BatchInputs b;
  if (model.uses_space_branch()) b.space = stack(batch, &Sample::space);
  if (model.uses_time_branch()) b.time = stack(batch, &Sample::time);
  if (model.uses_marker()) b.marker = stack(batch, &Sample::marker);
  return b;
}

}  // namespace

NodePtr training_loss(const NodePtr& pred, const Tensor& target, const NodePtr& final_dense_w,
                      double l2_lambda) {
  if (pred->value.shape() != target.shape()) {
    throw std::invalid_argument("loss: prediction " + shape_str(pred->value.shape()) +
                                " vs target " + shape_str(target.shape()));
  }
  NodePtr loss = mean_all(square(sub(pred, constant(target))));
  if (l2_lambda > 0.0 && final_dense_w) {
    loss = add(loss, scale(sum_all(square(final_dense_w)), l2_lambda));
  }
  return loss;
}

AdamState make_adam_state(const ParamStore& store) {
  AdamState st;
  for (const auto& e : store.entries()) {
    if (!e.trainable) continue;
    st.m.emplace_back(e.value.shape());
    st.v.emplace_back(e.value.shape());
  }
  return st;
}

void adam_step(ParamStore& store, AdamState& state, double lr) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, state.step);
  const double bc2 = 1.0 - std::pow(state.beta2, state.step);
  std::size_t k = 0;
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    ++k;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double g = e.grad[i];
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
      e.value[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + state.eps);
    }
  }
}

double train_batch(Model& model, std::span<const Sample* const> batch, double l2_lambda) {
  std::vector<const Sample*> b(batch.begin(), batch.end());
  BatchInputs in = batch_inputs(model, b);
  ForwardGraph fg = model.forward_graph(in.space, in.time, in.marker, Mode::Train);
  const Tensor target = stack_targets_last(b);
  NodePtr w = fg.leaves.at(model.final_dense_weight_name());
  NodePtr loss = training_loss(fg.output, target, w, l2_lambda);
  backward(loss);
  ParamStore& store = model.params();
  for (auto& e : store.entries()) {
    if (!e.trainable) continue;
    const Tensor& g = fg.leaves.at(e.name)->grad;
    if (g.size() == e.grad.size()) {
      for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad[i] += g[i];
    }
  }
  return loss->value[0];
}

FitResult fit(Model& model, const std::vector<Sample>& train, const std::vector<Sample>& val,
              const TrainConfig& config) {
  if (config.learning_rate < 0 || config.batch_size < 1 || config.patience < 1)
    throw std::invalid_argument("fit: invalid train config");
  if (train.empty() || val.empty()) throw std::invalid_argument("fit: empty split");

  std::mt19937_64 rng(config.seed);
  AdamState adam = make_adam_state(model.params());

  std::vector<const Sample*> order;
  order.reserve(train.size());
  for (const auto& s : train) order.push_back(&s);

  FitResult result;
  double best_mse = std::numeric_limits<double>::infinity();
  std::vector<Tensor> best_params;
  long best_train_steps = 0;
  int since_best = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    if (config.shuffle) std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t off = 0; off < order.size(); off += config.batch_size) {
      const std::size_t len = std::min(config.batch_size, order.size() - off);
      model.params().zero_grads();
      const double loss =
          train_batch(model, std::span<const Sample* const>(order.data() + off, len),
                      config.l2_lambda);
      if (!std::isfinite(loss)) {
        std::ostringstream os;
        os << "fit: non-finite loss at epoch " << epoch << " batch " << n_batches;
        throw NumericError(os.str());
      }
      adam_step(model.params(), adam, config.learning_rate);
      loss_sum += loss;
      ++n_batches;
    }
    EvalReport val_report = evaluate(model, val);
    result.history.push_back(
        EpochRow{epoch, loss_sum / static_cast<double>(n_batches), val_report.mse, val_report.mae});
    if (val_report.mse < best_mse) {
      best_mse = val_report.mse;
      result.best_epoch = epoch;
      since_best = 0;
      best_params.clear();
      for (const auto& e : model.params().entries()) best_params.push_back(e.value);
      best_train_steps = model.train_steps();
    } else if (++since_best >= config.patience) {
      break;
    }
  }

  // restore best-val-MSE weights
  if (!best_params.empty()) {
    auto& entries = model.params().entries();
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i].value = best_params[i];
    model.set_train_steps(best_train_steps);
  }
  result.best_val_mse = best_mse;
  return result;
}

EvalReport evaluate(Model& model, const std::vector<Sample>& samples) {
  return evaluate_predictions(samples,
                              [&](const Sample& s) { return model.forward(s, Mode::Infer); });
}

EvalReport evaluate_predictions(const std::vector<Sample>& samples, const Predictor& predict) {
  if (samples.empty()) throw std::invalid_argument("evaluate: empty sample set");
  EvalReport report;
  double se = 0.0, ae = 0.0;
  std::size_t n_p = 0;
  for (const auto& s : samples) {
    Tensor pred = predict(s);
    const std::size_t p = s.target.shape()[0];
    const std::size_t h = s.target.shape()[1];
    if (pred.size() != p)
      throw std::invalid_argument("evaluate: prediction size " + std::to_string(pred.size()) +
                                  " != sites " + std::to_string(p));
    Tensor resid(Shape{p, 1});
    for (std::size_t i = 0; i < p; ++i) {
      const double y = s.target[i * h + (h - 1)];
      const double e = y - pred[i];
      resid[i] = e;
      se += e * e;
      ae += std::fabs(e);
      ++n_p;
    }
    report.predictions.push_back(std::move(pred));
    report.residuals.push_back(std::move(resid));
  }
  report.mse = se / static_cast<double>(n_p);
  report.mae = ae / static_cast<double>(n_p);
  return report;
}

GridSearchResult grid_search(const std::function<Model()>& factory,
                             const std::vector<double>& learning_rates,
                             const std::vector<double>& lambdas,
                             const std::vector<std::size_t>& batch_sizes,
                             const std::vector<Sample>& train, const std::vector<Sample>& val,
                             int epoch_budget, std::uint64_t seed) {
  if (learning_rates.empty() || lambdas.empty() || batch_sizes.empty())
    throw std::invalid_argument("grid_search: empty grid");
  GridSearchResult result;
  double best_mse = std::numeric_limits<double>::infinity();
  for (double lr : learning_rates)
    for (double lambda : lambdas)
      for (std::size_t bs : batch_sizes) {
        TrainConfig cfg;
        cfg.learning_rate = lr;
        cfg.l2_lambda = lambda;
        cfg.batch_size = bs;
        cfg.max_epochs = epoch_budget;
        cfg.seed = seed;
        Model model = factory();
        FitResult fr = fit(model, train, val, cfg);
        EvalReport er = evaluate(model, val);
        result.table.push_back(GridPoint{cfg, er.mse, er.mae});
        if (er.mse < best_mse) {
          best_mse = er.mse;
          result.best = cfg;
        }
      }
  return result;
}

}  // namespace dclstm
