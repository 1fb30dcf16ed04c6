#include "support.hpp"

#include <cstdio>

namespace testkit {

namespace {

using Build = std::function<ad::Var(ad::Graph&, const std::vector<ad::Var>&)>;

struct OpCase {
  std::string name;
  std::vector<ad::Shape> inputs;
  Build build;
  bool away_from_zero = false;  // keeps relu inputs off the kink
};

std::vector<OpCase> op_cases() {
  using V = std::vector<ad::Var>;
  std::vector<OpCase> c;
  c.push_back({"matmul", {{3, 4}, {4, 5}}, [](ad::Graph& g, const V& x) { return g.matmul(x[0], x[1]); }});
  c.push_back({"add", {{3, 4}, {3, 4}}, [](ad::Graph& g, const V& x) { return g.add(x[0], x[1]); }});
  c.push_back({"add_row", {{3, 4}, {1, 4}}, [](ad::Graph& g, const V& x) { return g.add(x[0], x[1]); }});
  c.push_back({"sub", {{3, 4}, {3, 4}}, [](ad::Graph& g, const V& x) { return g.sub(x[0], x[1]); }});
  c.push_back({"mul", {{3, 4}, {3, 4}}, [](ad::Graph& g, const V& x) { return g.mul(x[0], x[1]); }});
  c.push_back({"scale", {{3, 4}}, [](ad::Graph& g, const V& x) { return g.scale(x[0], -0.7); }});
  c.push_back({"concat", {{3, 2}, {3, 3}, {3, 1}}, [](ad::Graph& g, const V& x) { return g.concat({x[0], x[1], x[2]}); }});
  c.push_back({"slice", {{3, 6}}, [](ad::Graph& g, const V& x) { return g.slice(x[0], 1, 4); }});
  c.push_back({"sigmoid", {{3, 4}}, [](ad::Graph& g, const V& x) { return g.sigmoid(x[0]); }});
  c.push_back({"tanh", {{3, 4}}, [](ad::Graph& g, const V& x) { return g.tanh(x[0]); }});
  c.push_back({"relu", {{3, 4}}, [](ad::Graph& g, const V& x) { return g.relu(x[0]); }, true});
  c.push_back({"linear", {{3, 4}, {4, 5}, {1, 5}}, [](ad::Graph& g, const V& x) { return g.linear(x[0], x[1], x[2]); }});
  c.push_back({"dropout", {{3, 6}}, [](ad::Graph& g, const V& x) {
                 ad::Rng r(99);
                 return g.dropout(x[0], 0.3, true, r);
               }});
  c.push_back({"mse_loss", {{3, 2}, {3, 2}}, [](ad::Graph& g, const V& x) { return g.mse_loss(x[0], x[1]); }});
  c.push_back({"sum", {{3, 4}}, [](ad::Graph& g, const V& x) { return g.sum(x[0]); }});
  c.push_back({"composite", {{3, 4}, {4, 4}, {1, 4}}, [](ad::Graph& g, const V& x) {
                 const auto h = g.tanh(g.linear(x[0], x[1], x[2]));
                 return g.mul(g.sigmoid(h), g.sub(h, x[0]));
               }});
  return c;
}

GradCheck check_op(const OpCase& op, std::uint64_t seed) {
  ad::Rng rng(seed);
  ad::ParameterStore store;
  std::vector<ad::ParamId> ids;
  for (std::size_t i = 0; i < op.inputs.size(); ++i) ids.push_back(store.add("x" + std::to_string(i), op.inputs[i]));
  for (auto& v : store.values()) {
    do {
      v = 2.0 * ad::uniform01(rng) - 1.0;
    } while (op.away_from_zero && std::abs(v) < 0.05);
  }
  // Output shape, then a fixed random weighting so every output element
  // contributes a distinct gradient.
  ad::Graph probe(kernels::Policy::serial);
  std::vector<ad::Var> xs;
  for (auto id : ids) xs.push_back(probe.parameter(store, id));
  const ad::Shape out = probe.shape(op.build(probe, xs));
  std::vector<double> weights(out.size());
  fill_uniform(weights, rng, -1.0, 1.0);

  std::vector<std::size_t> coords(store.size());
  for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
  return check_gradients(
      store,
      [&](ad::Graph& g) {
        std::vector<ad::Var> in;
        for (auto id : ids) in.push_back(g.parameter(store, id));
        const ad::Var y = op.build(g, in);
        return g.sum(g.mul(y, g.constant(out, weights)));
      },
      coords);
}

struct NetCase {
  std::string name;
  ModelConfig config;
  int tau;
};

std::vector<NetCase> net_cases() {
  std::vector<NetCase> c;
  ModelConfig lstm;
  lstm.architecture = Architecture::lstm;
  lstm.blocks = 1;
  lstm.state_size = 4;
  lstm.fc_width = 6;
  lstm.fc_layers = 2;
  lstm.dropout = 0.2;
  lstm.lambda_forecast = 0.0;
  lstm.lambda_backcast = 0.0;
  c.push_back({"lstm_block", lstm, 30});

  ModelConfig stack = lstm;
  stack.architecture = Architecture::nbeats;
  stack.blocks = 3;
  stack.dropout = 0.1;
  stack.lambda_forecast = 1.0;
  stack.lambda_backcast = 0.5;
  c.push_back({"residual_stack", stack, 35});

  ModelConfig split_heads = stack;
  split_heads.blocks = 2;
  split_heads.joint_heads = false;
  split_heads.use_s1 = false;
  split_heads.fc_layers = 3;
  c.push_back({"residual_stack_split_heads", split_heads, 30});

  ModelConfig planned = stack;
  planned.blocks = 2;
  planned.planned_carbs_feature = true;
  c.push_back({"residual_stack_planned_carbs", planned, 40});
  return c;
}

GradCheck check_net(const NetCase& nc, std::uint64_t seed) {
  ad::Rng rng(seed);
  RecommenderNet net(nc.config);
  net.initialize(rng);
  // Larger weights than Glorot keep the gates away from saturation-free
  // linear regimes, so every nonlinearity is exercised.
  for (auto& v : net.parameters().values()) v *= 1.5;
  // Zero biases put a ReLU input exactly on the kink whenever a whole
  // previous layer is dead for a row; central differences are meaningless
  // there.
  for (const auto& slot : net.parameters().slots()) {
    if (!slot.name.ends_with(".b")) continue;
    fill_uniform(net.parameters().values().subspan(slot.offset, slot.shape.size()), rng, -0.3, 0.3);
  }
  const auto rows = random_encoded(3, nc.tau, nc.config.feature_count(), rng);
  const Batch batch = make_batch(std::span<const EncodedExample>(rows));
  const auto coords = stratified_coords(net.parameters(), 300, rng);
  return check_gradients(
      net.parameters(),
      [&](ad::Graph& g) {
        ad::Rng drop(seed * 7 + 1);
        const auto in = net.bind(g, batch);
        const auto out = net.forward(g, in, true, drop);
        return net.loss(g, out);
      },
      coords);
}

}  // namespace

std::map<std::string, GradCheck> gradient_suite(int seeds) {
  std::map<std::string, GradCheck> worst;
  auto merge = [&](const std::string& name, const GradCheck& r) {
    auto& w = worst[name];
    w.checked += r.checked;
    if (r.max_rel >= w.max_rel) {
      w.max_rel = r.max_rel;
      w.worst = r.worst;
    }
  };
  for (int s = 1; s <= seeds; ++s) {
    for (const auto& op : op_cases()) merge("op:" + op.name, check_op(op, static_cast<std::uint64_t>(s)));
    for (const auto& nc : net_cases()) merge(nc.name, check_net(nc, static_cast<std::uint64_t>(s)));
  }
  return worst;
}

// ---- pre-processing fixtures ----

namespace {

using Meals = std::vector<std::pair<std::size_t, double>>;

std::string describe(const Meals& m) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < m.size(); ++i) os << (i ? ", " : "") << m[i].first << ':' << m[i].second;
  os << '}';
  return os.str();
}

std::optional<std::string> expect_meals(const EventStream& s, const Meals& want) {
  const Meals got = meals_of(s);
  if (got == want) return std::nullopt;
  return "meals " + describe(got) + ", expected " + describe(want);
}

std::optional<std::string> expect_report(const RealignmentReport& r, std::size_t shifted, std::size_t added,
                                         std::size_t unchanged) {
  if (r.meals_shifted == shifted && r.meals_added == added && r.meals_unchanged == unchanged) return std::nullopt;
  std::ostringstream os;
  os << "report shifted/added/unchanged " << r.meals_shifted << '/' << r.meals_added << '/' << r.meals_unchanged
     << ", expected " << shifted << '/' << added << '/' << unchanged;
  return os.str();
}

// Runs realignment on a 200-step stream prepared by `setup` and checks the
// meal channel and report counts.
Fixture realign_case(std::string name, std::function<void(EventStream&)> setup, Meals want, std::size_t shifted,
                     std::size_t added, std::size_t unchanged) {
  return {std::move(name), [=] () -> std::optional<std::string> {
            EventStream s = flat_stream(200);
            setup(s);
            const Realigned r = realign_meals(s);
            if (auto e = expect_meals(r.stream, want)) return e;
            return expect_report(r.report, shifted, added, unchanged);
          }};
}

// Filter decision at t = 100, tau = 30 (target step 108) after dropping
// the given glucose samples and interpolating.
Fixture filter_case(std::string name, std::vector<std::size_t> dropped, bool keep) {
  return {std::move(name), [=] () -> std::optional<std::string> {
            EventStream s = flat_stream(150);
            drop_glucose(s, dropped);
            const bool got = interpolation_filter(interpolate_gaps(s), 100, 30);
            if (got == keep) return std::nullopt;
            return std::string(got ? "kept" : "rejected") + ", expected " + (keep ? "keep" : "reject");
          }};
}

std::vector<std::size_t> range_steps(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v;
  for (std::size_t i = begin; i < end; ++i) v.push_back(i);
  return v;
}

std::vector<std::size_t> join(std::vector<std::size_t> a, const std::vector<std::size_t>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::vector<Fixture> preprocessing_fixtures() {
  std::vector<Fixture> f;
  f.push_back(realign_case(
      "shift: meal 25 min after bolus moves to bolus + 10 min",
      [](EventStream& s) {
        put_bolus(s, 50, 4.0, 40.0);
        put_meal(s, 55, 40.0);
      },
      {{52, 40.0}}, 1, 0, 0));
  f.push_back({"shift: carbs replaced by the wizard value", [] () -> std::optional<std::string> {
                 EventStream s = flat_stream(200);
                 put_bolus(s, 50, 4.5, 45.0);
                 put_meal(s, 53, 30.0);
                 const Realigned r = realign_meals(s);
                 if (auto e = expect_meals(r.stream, {{52, 45.0}})) return e;
                 if (r.report.carbs_replaced_delta != -15.0) return "carbs_replaced_delta " + std::to_string(r.report.carbs_replaced_delta);
                 return expect_report(r.report, 1, 0, 0);
               }});
  f.push_back(realign_case(
      "shift: meal exactly 60 min after bolus is inside the window",
      [](EventStream& s) {
        put_bolus(s, 50, 3.0, 30.0);
        put_meal(s, 62, 30.0);
      },
      {{52, 30.0}}, 1, 0, 0));
  f.push_back(realign_case(
      "shift: meal 50 min before bolus moves forward",
      [](EventStream& s) {
        put_bolus(s, 50, 3.0, 30.0);
        put_meal(s, 40, 25.0);
      },
      {{52, 30.0}}, 1, 0, 0));
  f.push_back(realign_case(
      "add: meal 65 min away stays and a meal is added",
      [](EventStream& s) {
        put_bolus(s, 50, 3.0, 30.0);
        put_meal(s, 63, 30.0);
      },
      {{52, 30.0}, {63, 30.0}}, 0, 1, 1));
  f.push_back({"add: no meal at all adds one marked as added", [] () -> std::optional<std::string> {
                 EventStream s = flat_stream(200);
                 put_bolus(s, 50, 2.5, 25.0);
                 const Realigned r = realign_meals(s);
                 if (auto e = expect_meals(r.stream, {{52, 25.0}})) return e;
                 if (r.stream.meal_origin[52] != MealOrigin::added) return std::string("origin is not added");
                 if (r.report.carbs_added != 25.0) return std::string("carbs_added wrong");
                 if (r.report.added_meal_flags != std::vector<bool>{true}) return std::string("added flags wrong");
                 return expect_report(r.report, 0, 1, 0);
               }});
  f.push_back(realign_case(
      "exact slot: meal already at bolus + 10 min with wizard carbs is unchanged",
      [](EventStream& s) {
        put_bolus(s, 50, 3.0, 30.0);
        put_meal(s, 52, 30.0);
      },
      {{52, 30.0}}, 0, 0, 1));
  f.push_back(realign_case(
      "exact slot: preferred over a nearer meal",
      [](EventStream& s) {
        put_bolus(s, 50, 3.0, 30.0);
        put_meal(s, 51, 12.0);
        put_meal(s, 52, 30.0);
      },
      {{51, 12.0}, {52, 30.0}}, 0, 0, 2));
  f.push_back(realign_case(
      "tie-break: equal distance picks carbs closest to the wizard input",
      [](EventStream& s) {
        put_bolus(s, 50, 4.0, 40.0);
        put_meal(s, 47, 20.0);
        put_meal(s, 53, 38.0);
      },
      {{47, 20.0}, {52, 40.0}}, 1, 0, 1));
  f.push_back(realign_case(
      "tie-break: equal distance and carb gap picks the earlier meal",
      [](EventStream& s) {
        put_bolus(s, 50, 4.0, 40.0);
        put_meal(s, 47, 30.0);
        put_meal(s, 53, 50.0);
      },
      {{52, 40.0}, {53, 50.0}}, 1, 0, 1));
  f.push_back(realign_case(
      "tie-break: a closer meal beats a better carb match",
      [](EventStream& s) {
        put_bolus(s, 50, 4.0, 40.0);
        put_meal(s, 51, 10.0);
        put_meal(s, 58, 40.0);
      },
      {{52, 40.0}, {58, 40.0}}, 1, 0, 1));
  f.push_back(realign_case(
      "single claim: a meal is claimed by the first bolus only",
      [](EventStream& s) {
        put_bolus(s, 50, 3.0, 30.0);
        put_bolus(s, 60, 2.0, 20.0);
        put_meal(s, 54, 28.0);
      },
      {{52, 30.0}, {62, 20.0}}, 1, 1, 0));
  f.push_back(realign_case(
      "single claim: two boluses take the two nearest meals in order",
      [](EventStream& s) {
        put_bolus(s, 50, 3.0, 30.0);
        put_bolus(s, 56, 2.0, 20.0);
        put_meal(s, 55, 30.0);
        put_meal(s, 60, 20.0);
      },
      {{52, 30.0}, {58, 20.0}}, 2, 0, 0));
  f.push_back(realign_case(
      "ignored: bolus without wizard carbs",
      [](EventStream& s) {
        put_bolus(s, 50, 2.0, 0.0);
        put_meal(s, 55, 30.0);
      },
      {{55, 30.0}}, 0, 0, 1));
  f.push_back(realign_case(
      "dual bolus with wizard carbs realigns its meal",
      [](EventStream& s) {
        put_bolus(s, 50, 3.0, 30.0, BolusKind::dual);
        put_meal(s, 56, 30.0);
      },
      {{52, 30.0}}, 1, 0, 0));
  f.push_back(realign_case(
      "end of data: bolus whose meal slot is past the grid is left alone",
      [](EventStream& s) { put_bolus(s, 198, 3.0, 30.0); }, {}, 0, 0, 0));

  f.push_back(filter_case("filter: 2 interpolated in the hour and 12 in six hours keeps",
                          join({99, 98}, range_steps(40, 50)), true));
  f.push_back(filter_case("filter: 3 interpolated in the hour rejects", {99, 98, 97}, false));
  f.push_back(filter_case("filter: 13 interpolated in six hours rejects", join({99}, range_steps(40, 52)), false));
  f.push_back(filter_case("filter: interpolated target rejects", {108}, false));
  f.push_back(filter_case("filter: interpolated present rejects", {100}, false));
  f.push_back({"interpolation: 100 to 180 over a 3-step gap gives 120, 140, 160", [] () -> std::optional<std::string> {
                 EventStream s = flat_stream(10);
                 drop_glucose(s, {4, 5, 6});
                 for (auto& g : s.bgl) {
                   if (g.minute == s.minute_at(3)) g.value = 100.0;
                   if (g.minute == s.minute_at(7)) g.value = 180.0;
                 }
                 const GlucoseGrid grid = glucose_grid(interpolate_gaps(s));
                 const double want[] = {120.0, 140.0, 160.0};
                 for (std::size_t k = 0; k < 3; ++k) {
                   if (grid.value[4 + k] != want[k] || grid.state[4 + k] != GlucoseGrid::interpolated) {
                     return "step " + std::to_string(4 + k) + " = " + std::to_string(grid.value[4 + k]);
                   }
                 }
                 return std::nullopt;
               }});
  return f;
}

}  // namespace testkit
