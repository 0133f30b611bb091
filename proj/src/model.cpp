#include "dclstm/model.hpp"

#include <stdexcept>

#include "dclstm/serialize.hpp"

namespace dclstm {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::DCLSTMt: return "dclstm-t";
    case Variant::DCLSTMt_Conv2D: return "dclstm-t-conv2d";
    case Variant::CLSTM_S_t: return "clstm-s-t";
    case Variant::CLSTM_T_t: return "clstm-t-t";
    case Variant::DCLSTM_noMarker: return "dclstm";
    case Variant::CNN_t: return "cnn-t";
    case Variant::SpeedOnly: return "speed-only";
    case Variant::FlowOnly: return "flow-only";
  }
  throw std::invalid_argument("variant_name: unknown variant");
}

Variant variant_from_name(const std::string& s) {
  for (Variant v : {Variant::DCLSTMt, Variant::DCLSTMt_Conv2D, Variant::CLSTM_S_t,
                    Variant::CLSTM_T_t, Variant::DCLSTM_noMarker, Variant::CNN_t,
                    Variant::SpeedOnly, Variant::FlowOnly}) {
    if (variant_name(v) == s) return v;
  }
  throw std::invalid_argument("unknown model variant: " + s);
}

ModelSpec make_model_spec(Variant v, std::size_t sites, std::size_t window, std::size_t horizon) {
  ModelSpec spec;
  spec.variant = v;
  spec.sites = sites;
  spec.window = window;
  spec.horizon = horizon;
  if (v == Variant::SpeedOnly) spec.channels = 1;
  else if (v == Variant::FlowOnly) spec.channels = kFlowChannels;
  else spec.channels = kChannels;
  return spec;
}

bool Model::uses_space_branch() const { return spec_.variant != Variant::CLSTM_T_t; }
bool Model::uses_time_branch() const { return spec_.variant != Variant::CLSTM_S_t; }
bool Model::uses_marker() const { return spec_.variant != Variant::DCLSTM_noMarker; }
bool Model::uses_lstm() const { return spec_.variant != Variant::CNN_t; }

namespace {

bool is_separable(Variant v) { return v != Variant::DCLSTMt_Conv2D; }

}  // namespace

Model Model::build(const ModelSpec& spec) {
  if (spec.variant == Variant::SpeedOnly && spec.channels != 1)
    throw std::invalid_argument("build: speed-only variant requires channels = 1");
  if (spec.variant == Variant::FlowOnly && spec.channels != kFlowChannels)
    throw std::invalid_argument("build: flow-only variant requires channels = 5");
  if (spec.sites == 0 || spec.window < 2 || spec.channels == 0 || spec.horizon == 0)
    throw std::invalid_argument("build: degenerate model spec");

  Model m;
  m.spec_ = spec;
  Rng rng(spec.init_seed);
  const std::size_t p = spec.sites, n = spec.window, c = spec.channels;
  const auto& w = spec.conv_widths;

  auto listing = [&](const std::string& name, LayerSpec ls) { m.layers_.push_back({name, ls}); };
  auto input_row = [&](const std::string& name) {
    listing(name, LayerSpec{.kind = LayerKind::Reshape});
  };

  auto add_conv_stack = [&](const std::string& prefix,
                            const std::array<std::pair<std::size_t, std::size_t>, 3>& kernels) {
    std::size_t ci = c;
    for (std::size_t i = 0; i < 3; ++i) {
      const auto [kh, kw] = kernels[i];
      const std::size_t co = w[i];
      const std::string conv_name = prefix + std::to_string(2 * i + 1);
      if (is_separable(spec.variant)) {
        listing(conv_name, LayerSpec{.kind = LayerKind::SeparableConv2D,
                                     .kernel_h = kh,
                                     .kernel_w = kw,
                                     .in_channels = ci,
                                     .out_channels = co,
                                     .activation = Activation::Relu});
        m.store_.add(conv_name + ".dw", glorot_uniform(Shape{kh, kw, ci}, kh * kw, kh * kw, rng));
        m.store_.add(conv_name + ".pw", glorot_uniform(Shape{1, 1, ci, co}, ci, co, rng));
        m.store_.add(conv_name + ".b", Tensor(Shape{co}));
      } else {
        listing(conv_name, LayerSpec{.kind = LayerKind::Conv2D,
                                     .kernel_h = kh,
                                     .kernel_w = kw,
                                     .in_channels = ci,
                                     .out_channels = co,
                                     .activation = Activation::Relu});
        m.store_.add(conv_name + ".w",
                     glorot_uniform(Shape{kh, kw, ci, co}, kh * kw * ci, kh * kw * co, rng));
        m.store_.add(conv_name + ".b", Tensor(Shape{co}));
      }
      const std::string bn_name = prefix + std::to_string(2 * i + 2);
      listing(bn_name, LayerSpec{.kind = LayerKind::BatchNorm, .in_channels = co});
      m.store_.add(bn_name + ".gamma", Tensor(Shape{co}, 1.0));
      m.store_.add(bn_name + ".beta", Tensor(Shape{co}));
      m.store_.add(bn_name + ".moving_mean", Tensor(Shape{co}), /*trainable=*/false);
      m.store_.add(bn_name + ".moving_var", Tensor(Shape{co}, 1.0), /*trainable=*/false);
      ci = co;
    }
  };

  auto add_tdd = [&](const std::string& name, std::size_t in_dim, std::size_t units,
                     Activation act, double l2) {
    listing(name, LayerSpec{.kind = LayerKind::TimeDistributedDense,
                            .in_dim = in_dim,
                            .units = units,
                            .activation = act,
                            .l2_lambda = l2});
    m.store_.add(name + ".w", glorot_uniform(Shape{in_dim, units}, in_dim, units, rng));
    m.store_.add(name + ".b", Tensor(Shape{units}));
  };

  auto add_lstm = [&](const std::string& name, std::size_t in_dim, std::size_t units) {
    listing(name, LayerSpec{.kind = LayerKind::LSTM,
                            .in_dim = in_dim,
                            .units = units,
                            .activation = Activation::Tanh});
    Tensor wt, ut, bt;
    init_lstm_weights(wt, ut, bt, in_dim, units, rng);
    m.store_.add(name + ".w", std::move(wt));
    m.store_.add(name + ".u", std::move(ut));
    m.store_.add(name + ".b", std::move(bt));
  };

  if (m.uses_space_branch()) {
    input_row("a_0");
    add_conv_stack("a_", {{{2, 1}, {4, 2}, {8, 4}}});
    listing("a_7", LayerSpec{.kind = LayerKind::TimeDistributedFlatten});
    add_tdd("a_8", n * w[2], c, Activation::Linear, 0.0);
    if (m.uses_lstm()) {
      add_lstm("a_9", c, p);
      add_lstm("a_10", p, c);
    }
  }
  if (m.uses_time_branch()) {
    input_row("b_0");
    add_conv_stack("b_", {{{2, 4}, {2, 8}, {4, 16}}});
    listing("b_7", LayerSpec{.kind = LayerKind::TimeDistributedFlatten});
    add_tdd("b_8", p * w[2], p, Activation::Linear, 0.0);
    if (m.uses_lstm()) {
      add_lstm("b_9", p, p);
      add_lstm("b_10", p, p);
    }
    listing("b_11", LayerSpec{.kind = LayerKind::Reshape});
  }
  if (m.uses_marker()) {
    input_row("c_0");
    listing("c_1", LayerSpec{.kind = LayerKind::Conv1D,
                             .kernel_h = p,
                             .in_channels = spec.marker_dim,
                             .out_channels = 1});
    m.store_.add("c_1.w", glorot_uniform(Shape{p, spec.marker_dim, 1}, p * spec.marker_dim, p, rng));
    m.store_.add("c_1.b", Tensor(Shape{1}));
  }
  listing("d_0", LayerSpec{.kind = LayerKind::Concat});
  const std::size_t concat_dim = (m.uses_space_branch() ? c : 0) +
                                 (m.uses_time_branch() ? n : 0) + (m.uses_marker() ? 1 : 0);
  add_tdd("d_1", concat_dim, 1, Activation::Linear, spec.l2_lambda);
  m.final_dense_weight_ = "d_1.w";
  return m;
}

NodePtr Model::run(const NodePtr& space_in, const NodePtr& time_in, const NodePtr& marker_in,
                   Mode mode, const std::unordered_map<std::string, NodePtr>& leaves) {
  const std::size_t p = spec_.sites, n = spec_.window, c = spec_.channels;
  auto P = [&](const std::string& name) -> const NodePtr& {
    auto it = leaves.find(name);
    if (it == leaves.end()) throw std::out_of_range("forward: missing parameter " + name);
    return it->second;
  };

  auto bn = [&](const std::string& name, const NodePtr& x) {
    if (mode == Mode::Train) {
      Tensor batch_mean, batch_var;
      NodePtr y = batch_norm_train(x, P(name + ".gamma"), P(name + ".beta"), spec_.bn_eps,
                                   &batch_mean, &batch_var);
      Tensor& mm = store_.value(name + ".moving_mean");
      Tensor& mv = store_.value(name + ".moving_var");
      for (std::size_t i = 0; i < mm.size(); ++i) {
        mm[i] = spec_.bn_momentum * mm[i] + (1.0 - spec_.bn_momentum) * batch_mean[i];
        mv[i] = spec_.bn_momentum * mv[i] + (1.0 - spec_.bn_momentum) * batch_var[i];
      }
      return y;
    }
    if (train_steps_ == 0)
      throw std::runtime_error("forward: inference requested before any training step "
                               "(batch-norm moving statistics undefined)");
    return batch_norm_infer(x, P(name + ".gamma"), P(name + ".beta"),
                            store_.value(name + ".moving_mean"), store_.value(name + ".moving_var"),
                            spec_.bn_eps);
  };

  auto conv_stack = [&](const std::string& prefix, NodePtr x) {
    for (std::size_t i = 0; i < 3; ++i) {
      const std::string conv_name = prefix + std::to_string(2 * i + 1);
      if (is_separable(spec_.variant)) {
        x = separable_conv2d_apply(x, P(conv_name + ".dw"), P(conv_name + ".pw"),
                                   P(conv_name + ".b"), Activation::Relu);
      } else {
        x = conv2d_apply(x, P(conv_name + ".w"), P(conv_name + ".b"), Activation::Relu);
      }
      x = bn(prefix + std::to_string(2 * i + 2), x);
    }
    return x;
  };

  const std::size_t B = space_in ? space_in->value.shape()[0]
                                 : (time_in ? time_in->value.shape()[0] : marker_in->value.shape()[0]);
  std::vector<NodePtr> heads;

  if (uses_space_branch()) {
    const Shape expect{B, p, n, c};
    if (space_in->value.shape() != expect)
      throw std::invalid_argument("forward: space input " + shape_str(space_in->value.shape()) +
                                  " != " + shape_str(expect));
    NodePtr x = conv_stack("a_", space_in);
    x = reshape(x, Shape{B, p, n * spec_.conv_widths[2]});  // a_7
    x = time_distributed_dense_apply(x, P("a_8.w"), P("a_8.b"), Activation::Linear);
    if (uses_lstm()) {
      x = lstm_sequence_apply(x, P("a_9.w"), P("a_9.u"), P("a_9.b"));
      x = lstm_sequence_apply(x, P("a_10.w"), P("a_10.u"), P("a_10.b"));
    }
    heads.push_back(x);  // [B, p, c]
  }
  if (uses_time_branch()) {
    const Shape expect{B, n, p, c};
    if (time_in->value.shape() != expect)
      throw std::invalid_argument("forward: time input " + shape_str(time_in->value.shape()) +
                                  " != " + shape_str(expect));
    NodePtr x = conv_stack("b_", time_in);
    x = reshape(x, Shape{B, n, p * spec_.conv_widths[2]});  // b_7
    x = time_distributed_dense_apply(x, P("b_8.w"), P("b_8.b"), Activation::Linear);
    if (uses_lstm()) {
      x = lstm_sequence_apply(x, P("b_9.w"), P("b_9.u"), P("b_9.b"));
      x = lstm_sequence_apply(x, P("b_10.w"), P("b_10.u"), P("b_10.b"));
    }
    // b_11: align row s with site s
    x = spec_.b11_transpose ? transpose(x, 1, 2) : reshape(x, Shape{B, p, n});
    heads.push_back(x);  // [B, p, n]
  }
  if (uses_marker()) {
    const Shape expect{B, p, spec_.marker_dim};
    if (marker_in->value.shape() != expect)
      throw std::invalid_argument("forward: marker input " + shape_str(marker_in->value.shape()) +
                                  " != " + shape_str(expect));
    heads.push_back(conv1d_apply(marker_in, P("c_1.w"), P("c_1.b"), Activation::Linear));
  }

  NodePtr fused = heads.size() == 1 ? heads[0] : concat(heads, 2);  // d_0
  return time_distributed_dense_apply(fused, P("d_1.w"), P("d_1.b"), Activation::Linear);  // d_1
}

ForwardGraph Model::forward_graph(const Tensor& space_in, const Tensor& time_in,
                                  const Tensor& marker_in, Mode mode) {
  ForwardGraph fg;
  for (const auto& e : store_.entries()) {
    fg.leaves[e.name] = e.trainable ? leaf(e.value) : constant(e.value);
  }
  NodePtr s = space_in.empty() ? nullptr : constant(space_in);
  NodePtr t = time_in.empty() ? nullptr : constant(time_in);
  NodePtr mk = marker_in.empty() ? nullptr : constant(marker_in);
  fg.output = run(s, t, mk, mode, fg.leaves);
  if (mode == Mode::Train) ++train_steps_;
  return fg;
}

Tensor Model::forward(const Tensor& space_in, const Tensor& time_in, const Tensor& marker_in,
                      Mode mode) {
  std::unordered_map<std::string, NodePtr> consts;
  for (const auto& e : store_.entries()) consts[e.name] = constant(e.value);
  NodePtr s = space_in.empty() ? nullptr : constant(space_in);
  NodePtr t = time_in.empty() ? nullptr : constant(time_in);
  NodePtr mk = marker_in.empty() ? nullptr : constant(marker_in);
  NodePtr out = run(s, t, mk, mode, consts);
  if (mode == Mode::Train) ++train_steps_;
  if (!out->value.all_finite()) throw std::runtime_error("forward: non-finite output");
  return out->value;
}

Tensor Model::forward(const Sample& sample, Mode mode) {
  auto with_batch = [](const Tensor& t) {
    Shape s = t.shape();
    s.insert(s.begin(), 1);
    return Tensor(s, t.vec());
  };
  Tensor out = forward(with_batch(sample.space), with_batch(sample.time), with_batch(sample.marker),
                       mode);
  Shape s(out.shape().begin() + 1, out.shape().end());
  return Tensor(s, out.vec());
}

// -------- checkpoints --------

namespace {

nlohmann::json spec_to_json(const ModelSpec& s) {
  return {{"variant", variant_name(s.variant)},
          {"sites", s.sites},
          {"window", s.window},
          {"channels", s.channels},
          {"horizon", s.horizon},
          {"marker_dim", s.marker_dim},
          {"conv_widths", s.conv_widths},
          {"b11_transpose", s.b11_transpose},
          {"bn_momentum", s.bn_momentum},
          {"bn_eps", s.bn_eps},
          {"l2_lambda", s.l2_lambda},
          {"init_seed", s.init_seed}};
}

ModelSpec spec_from_json(const nlohmann::json& j) {
  ModelSpec s;
  s.variant = variant_from_name(j.at("variant").get<std::string>());
  s.sites = j.at("sites");
  s.window = j.at("window");
  s.channels = j.at("channels");
  s.horizon = j.at("horizon");
  s.marker_dim = j.at("marker_dim");
  s.conv_widths = j.at("conv_widths");
  s.b11_transpose = j.at("b11_transpose");
  s.bn_momentum = j.at("bn_momentum");
  s.bn_eps = j.at("bn_eps");
  s.l2_lambda = j.at("l2_lambda");
  s.init_seed = j.at("init_seed");
  return s;
}

}  // namespace

void save_checkpoint(const Model& model, const std::string& path, const CheckpointExtra& extra) {
  nlohmann::json header;
  header["kind"] = "checkpoint";
  header["spec"] = spec_to_json(model.spec());
  header["train_steps"] = model.train_steps();
  header["seed"] = extra.seed;
  header["epoch"] = extra.epoch;
  header["val_mse_history"] = extra.val_mse_history;
  if (extra.has_scaler) {
    header["scaler"] = {{"mean", extra.scaler.mean},
                        {"stdev", extra.scaler.stdev},
                        {"speed_divisor", extra.scaler.speed_divisor}};
  }
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (const auto& e : model.params().entries()) arrays.emplace_back(e.name, &e.value);
  write_container(path, header, arrays);
}

Model load_checkpoint(const std::string& path, CheckpointExtra* extra) {
  Container c = read_container(path);
  if (c.header.value("kind", "") != "checkpoint")
    throw std::runtime_error("load_checkpoint: not a checkpoint file: " + path);
  ModelSpec spec = spec_from_json(c.header.at("spec"));
  Model m = Model::build(spec);
  auto& entries = m.params().entries();
  if (entries.size() != c.arrays.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch in " + path);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].name != c.arrays[i].first ||
        entries[i].value.shape() != c.arrays[i].second.shape()) {
      throw std::runtime_error("load_checkpoint: parameter layout mismatch at " + entries[i].name);
    }
    entries[i].value = c.arrays[i].second;
  }
  m.set_train_steps(c.header.value("train_steps", 0L));
  if (extra) {
    extra->seed = c.header.value("seed", 0ULL);
    extra->epoch = c.header.value("epoch", 0);
    extra->val_mse_history = c.header.value("val_mse_history", std::vector<double>{});
    extra->has_scaler = c.header.contains("scaler");
    if (extra->has_scaler) {
      const auto& js = c.header.at("scaler");
      extra->scaler.mean = js.at("mean");
      extra->scaler.stdev = js.at("stdev");
      extra->scaler.speed_divisor = js.at("speed_divisor");
    }
  }
  return m;
}

Model load_checkpoint_expecting(const std::string& path, const ModelSpec& expected,
                                CheckpointExtra* extra) {
  Model m = load_checkpoint(path, extra);
  const ModelSpec& got = m.spec();
  if (got.variant != expected.variant || got.sites != expected.sites ||
      got.window != expected.window || got.channels != expected.channels ||
      got.horizon != expected.horizon || got.marker_dim != expected.marker_dim ||
      got.conv_widths != expected.conv_widths) {
    throw std::runtime_error("load_checkpoint: spec conflict between file and expectation");
  }
  return m;
}

}  // namespace dclstm
