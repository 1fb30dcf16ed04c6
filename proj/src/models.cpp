#include "carbrec/models.hpp"

#include <algorithm>
#include <cmath>

#include "carbrec/error.hpp"

namespace carbrec {

using ad::Graph;
using ad::Shape;
using ad::Var;

std::string_view to_string(Architecture a) { return a == Architecture::lstm ? "lstm" : "nbeats"; }

std::optional<Architecture> parse_architecture(std::string_view name) {
  if (name == "lstm") return Architecture::lstm;
  if (name == "nbeats") return Architecture::nbeats;
  return std::nullopt;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("model config: " + what); };
  if (blocks < 1 || blocks > 10) fail("blocks must be in [1, 10]");
  if (architecture == Architecture::lstm && blocks != 1) fail("the lstm architecture has exactly one block");
  if (fc_layers < 1 || fc_layers > 5) fail("fc_layers must be in [1, 5]");
  if (state_size == 0 || fc_width == 0) fail("state_size and fc_width must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (lambda_forecast < 0.0 || lambda_backcast < 0.0) fail("loss weights must be non-negative");
}

ModelConfig default_model_config(Architecture arch, Scenario scenario, ExampleClass example_class) {
  const bool inertial = example_class == ExampleClass::inertial;
  const Scenario tuned_as = scenario == Scenario::carbs_no_bolus ? Scenario::carbs_all : scenario;
  ModelConfig cfg;
  cfg.architecture = arch;
  cfg.planned_carbs_feature = scenario == Scenario::bolus_with_carbs;
  if (arch == Architecture::lstm) {
    cfg.blocks = 1;
    cfg.lambda_forecast = 0.0;
    cfg.lambda_backcast = 0.0;
    switch (tuned_as) {
      case Scenario::carbs_all: cfg.fc_layers = 3; cfg.dropout = 0.1; break;
      case Scenario::bolus_all:
        cfg.fc_layers = inertial ? 3 : 2;
        cfg.dropout = inertial ? 0.0 : 0.3;
        break;
      case Scenario::bolus_with_carbs:
        cfg.fc_layers = 2;
        cfg.dropout = inertial ? 0.2 : 0.5;
        break;
      case Scenario::carbs_no_bolus: break;
    }
  } else {
    switch (tuned_as) {
      case Scenario::carbs_all:
        cfg.blocks = inertial ? 5 : 3;
        cfg.fc_layers = inertial ? 2 : 3;
        cfg.dropout = 0.3;
        break;
      case Scenario::bolus_all:
        cfg.blocks = inertial ? 5 : 4;
        cfg.fc_layers = 4;
        cfg.dropout = 0.2;
        break;
      case Scenario::bolus_with_carbs:
        cfg.blocks = inertial ? 5 : 3;
        cfg.fc_layers = inertial ? 4 : 5;
        cfg.dropout = inertial ? 0.5 : 0.2;
        break;
      case Scenario::carbs_no_bolus: break;
    }
  }
  if (scenario == Scenario::carbs_no_bolus) {
    cfg.state_size /= 2;
    cfg.fc_width /= 2;
  }
  return cfg;
}

EncodedExample encode(const RecommendationExample& ex, const ScalingParams& scaling, const ModelConfig& config) {
  validate(scaling);
  if (scaling.source != Split::train) throw ConfigError("encode: scaling statistics must come from training data");
  EncodedExample out;
  out.tau = ex.tau;
  for (std::size_t s = 0; s < kHistorySteps; ++s) {
    for (std::size_t c = 0; c < kHistoryChannels; ++c) {
      const std::size_t i = s * kHistoryChannels + c;
      out.history[i] = scale_value(ex.history[i], static_cast<Channel>(c), scaling);
    }
  }
  const std::size_t steps = ex.future_length();
  if (ex.future.size() != steps * kFutureChannels) {
    throw ShapeError("encode: future block has " + std::to_string(ex.future.size()) + " values, expected " +
                     std::to_string(steps * kFutureChannels));
  }
  out.future.resize(ex.future.size());
  constexpr std::array<Channel, 3> kFuture{Channel::carbs, Channel::bolus, Channel::basal};
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t c = 0; c < kFutureChannels; ++c) {
      const std::size_t i = s * kFutureChannels + c;
      out.future[i] = scale_value(ex.future[i], kFuture[c], scaling);
    }
  }
  const Channel label_ch = label_channel(ex.scenario);
  out.features.push_back(scale_value(ex.target_bgl, Channel::bgl, scaling));
  out.features.push_back(static_cast<double>(ex.tau) / 90.0);
  out.features.push_back(scale_value(ex.tod_average, label_ch, scaling));
  if (config.planned_carbs_feature) out.features.push_back(scale_value(ex.planned_carbs, Channel::carbs, scaling));
  out.label = scale_value(ex.label, label_ch, scaling);
  return out;
}

Batch make_batch(std::span<const EncodedExample* const> rows) {
  Batch b;
  if (rows.empty()) return b;
  b.size = rows.size();
  b.future_steps = future_steps(rows[0]->tau);
  b.feature_count = rows[0]->features.size();
  b.history.reserve(b.size * kHistorySteps * kHistoryChannels);
  b.future.reserve(b.size * b.future_steps * kFutureChannels);
  b.features.reserve(b.size * b.feature_count);
  b.labels.reserve(b.size);
  for (const EncodedExample* r : rows) {
    if (r->tau != rows[0]->tau) throw ShapeError("make_batch: rows have different horizons");
    if (r->features.size() != b.feature_count) throw ShapeError("make_batch: rows have different feature widths");
    if (r->future.size() != b.future_steps * kFutureChannels) throw ShapeError("make_batch: future block size");
    b.history.insert(b.history.end(), r->history.begin(), r->history.end());
    b.future.insert(b.future.end(), r->future.begin(), r->future.end());
    b.features.insert(b.features.end(), r->features.begin(), r->features.end());
    b.labels.push_back(r->label);
  }
  return b;
}

Batch make_batch(std::span<const EncodedExample> rows) {
  std::vector<const EncodedExample*> ptrs;
  ptrs.reserve(rows.size());
  for (const auto& r : rows) ptrs.push_back(&r);
  return make_batch(std::span<const EncodedExample* const>(ptrs));
}

RecommenderNet::RecommenderNet(ModelConfig config) : config_(config) {
  config_.validate();
  const std::size_t H = config_.state_size;
  const std::size_t W = config_.fc_width;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    const std::string p = "b" + std::to_string(b) + ".";
    BlockParams bp;
    bp.lstm1.w = params_.add(p + "lstm1.w", {kHistoryChannels + H, 4 * H});
    bp.lstm1.b = params_.add(p + "lstm1.b", {1, 4 * H});
    bp.bridge_w = params_.add(p + "bridge.w", {H, H});
    bp.bridge_b = params_.add(p + "bridge.b", {1, H});
    bp.lstm2.w = params_.add(p + "lstm2.w", {kFutureChannels + H, 4 * H});
    bp.lstm2.b = params_.add(p + "lstm2.b", {1, 4 * H});
    std::size_t in = config_.fcn_input_width();
    for (std::size_t k = 0; k < config_.fc_layers; ++k) {
      bp.fc_w.push_back(params_.add(p + "fc" + std::to_string(k) + ".w", {in, W}));
      bp.fc_b.push_back(params_.add(p + "fc" + std::to_string(k) + ".b", {1, W}));
      in = W;
    }
    if (config_.joint_heads) {
      bp.head_w = params_.add(p + "head.w", {W, 1 + kHistorySteps});
      bp.head_b = params_.add(p + "head.b", {1, 1 + kHistorySteps});
    } else {
      bp.forecast_w = params_.add(p + "forecast.w", {W, 1});
      bp.forecast_b = params_.add(p + "forecast.b", {1, 1});
      bp.backcast_w = params_.add(p + "backcast.w", {W, kHistorySteps});
      bp.backcast_b = params_.add(p + "backcast.b", {1, kHistorySteps});
    }
    blocks_.push_back(std::move(bp));
  }
}

std::string RecommenderNet::group_of(std::string_view name) {
  const auto dot = name.rfind('.');
  return std::string(dot == std::string_view::npos ? name : name.substr(0, dot));
}

void RecommenderNet::initialize(ad::Rng& rng) {
  const std::size_t H = config_.state_size;
  for (const auto& slot : params_.slots()) {
    auto values = params_.values(params_.find(slot.name));
    const bool is_bias = slot.name.ends_with(".b");
    if (is_bias) {
      std::fill(values.begin(), values.end(), 0.0);
      if (slot.name.ends_with("lstm1.b") || slot.name.ends_with("lstm2.b")) {
        // gate order i, f, g, o
        std::fill(values.begin() + static_cast<std::ptrdiff_t>(H), values.begin() + static_cast<std::ptrdiff_t>(2 * H),
                  1.0);
      }
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(slot.shape.rows + slot.shape.cols));
    for (auto& v : values) v = (2.0 * ad::uniform01(rng) - 1.0) * limit;
  }
}

BatchInputs RecommenderNet::bind(Graph& g, const Batch& batch) const {
  if (batch.size == 0) throw ShapeError("bind: empty batch");
  if (batch.feature_count != config_.feature_count()) {
    throw ShapeError("bind: batch has " + std::to_string(batch.feature_count) + " features, model expects " +
                     std::to_string(config_.feature_count()));
  }
  if (batch.history.size() != batch.size * kHistorySteps * kHistoryChannels ||
      batch.future.size() != batch.size * batch.future_steps * kFutureChannels || batch.future_steps == 0) {
    throw ShapeError("bind: history or future window has the wrong length");
  }
  const std::size_t B = batch.size;
  BatchInputs in;
  std::vector<double> buf(B * kHistorySteps);
  for (std::size_t r = 0; r < B; ++r) {
    for (std::size_t s = 0; s < kHistorySteps; ++s) {
      buf[r * kHistorySteps + s] = batch.history[(r * kHistorySteps + s) * kHistoryChannels];
    }
  }
  in.history_bgl = g.constant({B, kHistorySteps}, buf);
  buf.assign(B * 3, 0.0);
  for (std::size_t s = 0; s < kHistorySteps; ++s) {
    for (std::size_t r = 0; r < B; ++r) {
      const double* src = &batch.history[(r * kHistorySteps + s) * kHistoryChannels + 1];
      std::copy_n(src, 3, &buf[r * 3]);
    }
    in.history_events.push_back(g.constant({B, 3}, buf));
  }
  const std::size_t T = batch.future_steps;
  for (std::size_t s = 0; s < T; ++s) {
    for (std::size_t r = 0; r < B; ++r) {
      std::copy_n(&batch.future[(r * T + s) * kFutureChannels], kFutureChannels, &buf[r * 3]);
    }
    in.future_events.push_back(g.constant({B, 3}, buf));
  }
  in.features = g.constant({B, batch.feature_count}, batch.features);
  in.labels = g.constant({B, 1}, batch.labels);
  return in;
}

namespace {

struct LstmState {
  Var h;
  Var c;
};

LstmState lstm_step(Graph& g, Var x, LstmState s, Var w, Var b, std::size_t H) {
  const Var z = g.linear(g.concat({x, s.h}), w, b);
  const Var i = g.sigmoid(g.slice(z, 0, H));
  const Var f = g.sigmoid(g.slice(z, H, 2 * H));
  const Var cand = g.tanh(g.slice(z, 2 * H, 3 * H));
  const Var o = g.sigmoid(g.slice(z, 3 * H, 4 * H));
  const Var c = g.add(g.mul(f, s.c), g.mul(i, cand));
  const Var h = g.mul(o, g.tanh(c));
  return {h, c};
}

}  // namespace

BlockOutputs RecommenderNet::block_forward(Graph& g, std::size_t block, Var glucose_input, const BatchInputs& in,
                                           bool train, ad::Rng& rng) const {
  const BlockParams& bp = blocks_.at(block);
  const std::size_t H = config_.state_size;
  const std::size_t B = g.shape(glucose_input).rows;
  if (g.shape(glucose_input) != Shape{B, kHistorySteps}) {
    throw ShapeError("block_forward: glucose input must be " + ad::to_string(Shape{B, kHistorySteps}) + ", got " +
                     ad::to_string(g.shape(glucose_input)));
  }
  if (in.history_events.size() != kHistorySteps || in.future_events.empty()) {
    throw ShapeError("block_forward: history must have 72 steps and the future at least one");
  }

  const Var w1 = g.parameter(params_, bp.lstm1.w);
  const Var b1 = g.parameter(params_, bp.lstm1.b);
  LstmState s1{g.zeros({B, H}), g.zeros({B, H})};
  for (std::size_t t = 0; t < kHistorySteps; ++t) {
    const Var x = g.concat({g.slice(glucose_input, t, t + 1), in.history_events[t]});
    s1 = lstm_step(g, x, s1, w1, b1, H);
  }

  const Var bw = g.parameter(params_, bp.bridge_w);
  const Var bb = g.parameter(params_, bp.bridge_b);
  LstmState s2{g.linear(s1.h, bw, bb), g.linear(s1.c, bw, bb)};
  const Var w2 = g.parameter(params_, bp.lstm2.w);
  const Var b2 = g.parameter(params_, bp.lstm2.b);
  for (const Var x : in.future_events) s2 = lstm_step(g, x, s2, w2, b2, H);

  Var z = config_.use_s1 ? g.concat({s1.h, s2.h, in.features}) : g.concat({s2.h, in.features});
  for (std::size_t k = 0; k < config_.fc_layers; ++k) {
    z = g.relu(g.linear(z, g.parameter(params_, bp.fc_w[k]), g.parameter(params_, bp.fc_b[k])));
    z = g.dropout(z, config_.dropout, train, rng);
  }

  if (config_.joint_heads) {
    const Var out = g.linear(z, g.parameter(params_, bp.head_w), g.parameter(params_, bp.head_b));
    return {g.slice(out, 0, 1), g.slice(out, 1, 1 + kHistorySteps)};
  }
  return {g.linear(z, g.parameter(params_, bp.forecast_w), g.parameter(params_, bp.forecast_b)),
          g.linear(z, g.parameter(params_, bp.backcast_w), g.parameter(params_, bp.backcast_b))};
}

StackOutputs RecommenderNet::forward(Graph& g, const BatchInputs& in, bool train, ad::Rng& rng) const {
  StackOutputs out;
  out.labels = in.labels;
  Var residual = in.history_bgl;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    out.inputs.push_back(residual);
    const BlockOutputs bo = block_forward(g, b, residual, in, train, rng);
    out.forecasts.push_back(bo.forecast);
    out.backcasts.push_back(bo.backcast);
    out.prediction = b == 0 ? bo.forecast : g.add(out.prediction, bo.forecast);
    if (b + 1 < config_.blocks) residual = g.sub(residual, bo.backcast);
  }
  return out;
}

Var RecommenderNet::loss(Graph& g, const StackOutputs& out) const {
  Var total = g.mse_loss(out.prediction, out.labels);
  const double nb = static_cast<double>(out.forecasts.size());
  if (config_.lambda_forecast > 0.0) {
    Var cumulative = out.forecasts[0];
    Var acc = g.mse_loss(cumulative, out.labels);
    for (std::size_t b = 1; b < out.forecasts.size(); ++b) {
      cumulative = g.add(cumulative, out.forecasts[b]);
      acc = g.add(acc, g.mse_loss(cumulative, out.labels));
    }
    total = g.add(total, g.scale(acc, config_.lambda_forecast / nb));
  }
  if (config_.lambda_backcast > 0.0) {
    Var acc = g.mse_loss(out.backcasts[0], out.inputs[0]);
    for (std::size_t b = 1; b < out.backcasts.size(); ++b) {
      acc = g.add(acc, g.mse_loss(out.backcasts[b], out.inputs[b]));
    }
    total = g.add(total, g.scale(acc, config_.lambda_backcast / nb));
  }
  return total;
}

std::vector<double> RecommenderNet::predict_scaled(const Batch& batch, kernels::Policy policy) const {
  Graph g(policy);
  ad::Rng unused(0);
  const BatchInputs in = bind(g, batch);
  const StackOutputs out = forward(g, in, false, unused);
  auto v = g.value(out.prediction);
  return {v.begin(), v.end()};
}

RecommenderNet ModelCheckpoint::network() const {
  RecommenderNet net(model);
  const auto& slots = net.parameters().slots();
  if (slots.size() != layout.size()) throw ConfigError("checkpoint: parameter layout does not match the model");
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].name != layout[i].name || slots[i].shape != layout[i].shape || slots[i].offset != layout[i].offset) {
      throw ConfigError("checkpoint: parameter '" + layout[i].name + "' does not match the model layout");
    }
  }
  if (weights.size() != net.parameters().size()) throw ConfigError("checkpoint: weight count mismatch");
  std::copy(weights.begin(), weights.end(), net.parameters().values().begin());
  return net;
}

ModelCheckpoint ModelCheckpoint::from(const RecommenderNet& net) {
  ModelCheckpoint c;
  c.model = net.config();
  c.layout = net.parameters().slots();
  auto v = net.parameters().values();
  c.weights.assign(v.begin(), v.end());
  return c;
}

RecommendationExample example_from_query(const RecommendQuery& q, Scenario scenario) {
  for (const auto* ch : {&q.bgl, &q.carbs, &q.bolus, &q.basal}) {
    if (ch->size() != kHistorySteps) {
      throw QueryError("history must hold exactly 72 steps per channel, got " + std::to_string(ch->size()));
    }
  }
  if (!is_valid_horizon(q.tau)) {
    throw QueryError("tau must be one of 30, 35, ..., 90 minutes, got " + std::to_string(q.tau));
  }
  for (double v : q.bgl) {
    if (!std::isfinite(v) || v <= 0.0) throw QueryError("history glucose values must be positive");
  }
  if (!std::isfinite(q.target_bgl)) throw QueryError("target glucose must be finite");

  RecommendationExample ex;
  ex.scenario = scenario;
  ex.t_minute = q.present_minute;
  ex.tau = q.tau;
  for (std::size_t s = 0; s < kHistorySteps; ++s) {
    ex.history[s * 4 + 0] = q.bgl[s];
    ex.history[s * 4 + 1] = q.carbs[s];
    ex.history[s * 4 + 2] = q.bolus[s];
    ex.history[s * 4 + 3] = q.basal[s];
  }
  const std::size_t steps = future_steps(q.tau);
  if (q.future.empty()) {
    ex.future.assign(steps * kFutureChannels, 0.0);
    for (std::size_t s = 0; s < steps; ++s) ex.future[s * kFutureChannels + 2] = q.basal.back();
  } else {
    if (q.future.size() != steps * kFutureChannels) {
      throw QueryError("future events must hold " + std::to_string(steps) + " steps of 3 channels");
    }
    ex.future = q.future;
  }
  ex.target_bgl = q.target_bgl;
  ex.planned_carbs = scenario == Scenario::bolus_with_carbs ? q.planned_carbs : 0.0;
  return ex;
}

RecommendQuery query_from_example(const RecommendationExample& ex) {
  RecommendQuery q;
  for (std::size_t s = 0; s < kHistorySteps; ++s) {
    q.bgl.push_back(ex.history[s * 4 + 0]);
    q.carbs.push_back(ex.history[s * 4 + 1]);
    q.bolus.push_back(ex.history[s * 4 + 2]);
    q.basal.push_back(ex.history[s * 4 + 3]);
  }
  q.present_minute = ex.t_minute;
  q.tau = ex.tau;
  q.target_bgl = ex.target_bgl;
  q.planned_carbs = ex.planned_carbs;
  q.future = ex.future;
  return q;
}

Recommendation predict(const ModelCheckpoint& ckpt, const RecommenderNet& net, const RecommendQuery& query) {
  RecommendationExample ex = example_from_query(query, ckpt.scenario);
  ex.tod_average = ckpt.tod.tod_average(ex.event_minute());
  const EncodedExample enc = encode(ex, ckpt.scaling, ckpt.model);
  const EncodedExample* rows[] = {&enc};
  const Batch batch = make_batch(std::span<const EncodedExample* const>(rows));

  Graph g(kernels::Policy::serial);
  ad::Rng unused(0);
  const BatchInputs in = net.bind(g, batch);
  const StackOutputs out = net.forward(g, in, false, unused);

  const Channel ch = label_channel(ckpt.scenario);
  Recommendation r;
  r.raw = unscale(g.value(out.prediction)[0], ch, ckpt.scaling);
  r.clamped = r.raw < 0.0;
  r.value = r.clamped ? 0.0 : r.raw;
  const auto& range = ckpt.scaling[ch];
  for (const Var f : out.forecasts) r.block_forecasts.push_back(g.value(f)[0] * (range.max - range.min));
  return r;
}

Recommendation predict(const ModelCheckpoint& ckpt, const RecommendQuery& query) {
  const RecommenderNet net = ckpt.network();
  return predict(ckpt, net, query);
}

}  // namespace carbrec
