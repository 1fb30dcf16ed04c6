#pragma once

// Helpers shared by the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "carbrec/autodiff.hpp"
#include "carbrec/baselines.hpp"
#include "carbrec/examples.hpp"
#include "carbrec/ingest.hpp"
#include "carbrec/models.hpp"
#include "carbrec/preprocess.hpp"
#include "carbrec/timeseries.hpp"
#include "carbrec/training.hpp"

namespace testkit {

using namespace carbrec;

// ---- streams ----

/// `steps` grid steps from midnight, glucose measured everywhere.
inline EventStream flat_stream(std::size_t steps, double bgl = 120.0, double basal = 1.0) {
  EventStream s;
  s.subject_id = "fx";
  s.epoch = std::chrono::sys_days{std::chrono::year{2027} / 1 / 1};
  s.resize(steps);
  std::fill(s.basal.begin(), s.basal.end(), basal);
  for (std::size_t i = 0; i < steps; ++i) s.bgl.push_back({s.minute_at(i), bgl, false});
  return s;
}

inline void put_meal(EventStream& s, std::size_t step, double carbs) {
  s.meal[step] = carbs;
  s.meal_origin[step] = MealOrigin::self_reported;
}

inline void put_bolus(EventStream& s, std::size_t step, double units, double bw = 0.0,
                      BolusKind kind = BolusKind::regular) {
  s.bolus[step] = units;
  s.bolus_kind[step] = kind;
  s.bw_carb_input[step] = bw;
}

/// Removes the glucose samples at the given steps.
inline void drop_glucose(EventStream& s, const std::vector<std::size_t>& steps) {
  std::set<std::int64_t> minutes;
  for (auto k : steps) minutes.insert(s.minute_at(k));
  std::erase_if(s.bgl, [&](const GlucoseSample& g) { return minutes.contains(g.minute); });
}

inline std::vector<std::pair<std::size_t, double>> meals_of(const EventStream& s) {
  std::vector<std::pair<std::size_t, double>> out;
  for (std::size_t i = 0; i < s.steps(); ++i) {
    if (s.meal[i] > 0.0) out.emplace_back(i, s.meal[i]);
  }
  return out;
}

// ---- gradient checks ----

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

/// Denominator floor of the relative error. Central differences with h = 1e-5
/// carry rounding noise of roughly 1e-16 * |loss| * ops / h, about 1e-8 for
/// the losses used here, so gradients far below 1e-4 cannot be resolved to a
/// relative 1e-4 and are compared absolutely instead.
inline constexpr double kGradFloor = 1e-4;
inline constexpr double kGradStep = 1e-5;

/// Compares analytic gradients from `build` (which records a scalar loss
/// from `store`) against central differences at `coords`.
template <class Build>
GradCheck check_gradients(ad::ParameterStore& store, Build&& build, const std::vector<std::size_t>& coords) {
  ad::Graph g(kernels::Policy::serial);
  const ad::Var loss = build(g);
  std::vector<double> grads(store.size(), 0.0);
  g.backward(loss, grads);
  auto eval = [&] {
    g.clear();
    return g.scalar(build(g));
  };
  GradCheck r;
  auto values = store.values();
  for (std::size_t c : coords) {
    const double keep = values[c];
    values[c] = keep + kGradStep;
    const double up = eval();
    values[c] = keep - kGradStep;
    const double down = eval();
    values[c] = keep;
    const double numeric = (up - down) / (2.0 * kGradStep);
    const double rel =
        std::abs(grads[c] - numeric) / std::max({std::abs(grads[c]), std::abs(numeric), kGradFloor});
    ++r.checked;
    if (rel > r.max_rel) {
      r.max_rel = rel;
      std::ostringstream os;
      os << "coordinate " << c << ": analytic " << grads[c] << " numeric " << numeric;
      r.worst = os.str();
    }
  }
  return r;
}

/// About `total` coordinates spread evenly over every parameter slot.
inline std::vector<std::size_t> stratified_coords(const ad::ParameterStore& store, std::size_t total, ad::Rng& rng) {
  std::vector<std::size_t> out;
  const std::size_t per = std::max<std::size_t>(1, (total + store.count() - 1) / store.count());
  for (const auto& slot : store.slots()) {
    const std::size_t n = slot.shape.size();
    if (n <= per) {
      for (std::size_t i = 0; i < n; ++i) out.push_back(slot.offset + i);
    } else {
      std::set<std::size_t> pick;
      while (pick.size() < per) pick.insert(static_cast<std::size_t>(rng() % n));
      for (auto i : pick) out.push_back(slot.offset + i);
    }
  }
  return out;
}

inline void fill_uniform(std::span<double> v, ad::Rng& rng, double lo, double hi) {
  for (auto& x : v) x = lo + (hi - lo) * ad::uniform01(rng);
}

/// Random encoded examples for model-level tests.
inline std::vector<EncodedExample> random_encoded(std::size_t count, int tau, std::size_t features, ad::Rng& rng) {
  std::vector<EncodedExample> out(count);
  for (auto& e : out) {
    fill_uniform(e.history, rng, 0.0, 1.0);
    e.tau = tau;
    e.future.resize(future_steps(tau) * kFutureChannels);
    fill_uniform(e.future, rng, 0.0, 1.0);
    e.features.resize(features);
    fill_uniform(e.features, rng, 0.0, 1.0);
    e.label = ad::uniform01(rng);
  }
  return out;
}

/// Per-op and full-network gradient checks over `seeds` seeds. Returns the
/// worst relative error per check name.
std::map<std::string, GradCheck> gradient_suite(int seeds);

// ---- residual algebra ----

struct ResidualCheck {
  double sum_error = 0.0;       // |prediction - sum of forecasts|
  double residual_error = 0.0;  // |input_b - (input_{b-1} - backcast_{b-1})|
  double replay_error = 0.0;    // block b rerun by hand on the composed input
};

/// Random `blocks`-block network on random inputs. The replay reruns every
/// block through block_forward on an input composed outside the stack.
inline ResidualCheck residual_algebra(std::size_t blocks, std::uint64_t seed) {
  ad::Rng rng(seed);
  ModelConfig cfg;
  cfg.blocks = blocks;
  cfg.state_size = 5;
  cfg.fc_width = 7;
  cfg.fc_layers = 2;
  RecommenderNet net(cfg);
  net.initialize(rng);
  for (auto& v : net.parameters().values()) v += 0.2 * (ad::uniform01(rng) - 0.5);
  const int tau = kHorizons[rng() % kHorizons.size()];
  const auto rows = random_encoded(4, tau, cfg.feature_count(), rng);
  const Batch batch = make_batch(std::span<const EncodedExample>(rows));

  ad::Graph g(kernels::Policy::serial);
  ad::Rng unused(0);
  const auto in = net.bind(g, batch);
  const auto out = net.forward(g, in, false, unused);
  ResidualCheck r;
  const auto pred = g.value(out.prediction);
  for (std::size_t row = 0; row < batch.size; ++row) {
    double total = 0.0;
    for (auto f : out.forecasts) total += g.value(f)[row];
    r.sum_error = std::max(r.sum_error, std::abs(pred[row] - total));
  }
  // composed input, starting from the raw glucose history
  std::vector<double> composed(batch.size * kHistorySteps);
  for (std::size_t row = 0; row < batch.size; ++row) {
    for (std::size_t k = 0; k < kHistorySteps; ++k) composed[row * kHistorySteps + k] = batch.history[(row * kHistorySteps + k) * 4];
  }
  for (std::size_t b = 0; b < blocks; ++b) {
    const auto given = g.value(out.inputs[b]);
    for (std::size_t i = 0; i < composed.size(); ++i) r.residual_error = std::max(r.residual_error, std::abs(given[i] - composed[i]));
    ad::Graph h(kernels::Policy::serial);
    const auto in2 = net.bind(h, batch);
    const auto bo = net.block_forward(h, b, h.constant({batch.size, kHistorySteps}, composed), in2, false, unused);
    const auto f_stack = g.value(out.forecasts[b]);
    const auto f_alone = h.value(bo.forecast);
    for (std::size_t row = 0; row < batch.size; ++row) r.replay_error = std::max(r.replay_error, std::abs(f_stack[row] - f_alone[row]));
    const auto back = h.value(bo.backcast);
    for (std::size_t i = 0; i < composed.size(); ++i) composed[i] -= back[i];
  }
  return r;
}

// ---- extraction oracle ----

using ExampleKey = std::tuple<int, std::size_t, int>;  // split, event step, tau

struct OracleResult {
  std::set<ExampleKey> keys;
  std::map<ExampleKey, double> planned_carbs;
};

/// Direct enumeration of every (event, tau) pair from the written rules,
/// without calling any extraction code. `s` must be interpolated.
inline OracleResult brute_force_examples(const EventStream& s, Scenario scenario, ExampleClass cls) {
  OracleResult r;
  const std::size_t n = s.steps();
  const std::int64_t first_day = day_of(s.minute_at(0));
  const std::int64_t last_day = day_of(s.minute_at(n - 1));
  auto split_of = [&](std::int64_t minute) {
    const std::int64_t day = day_of(minute);
    if (day > last_day - 10) return 2;
    if (day > last_day - 20) return 1;
    return day >= first_day ? 0 : -1;
  };
  std::vector<int> state(n, 0);  // 0 missing, 1 measured, 2 interpolated
  for (const auto& g : s.bgl) state[static_cast<std::size_t>((g.minute - s.start_minute) / 5)] = g.interpolated ? 2 : 1;

  for (std::size_t e = 0; e < n; ++e) {
    const bool carb = is_carb_scenario(scenario);
    double planned = 0.0;
    if (carb) {
      if (!(s.meal[e] > 0.0)) continue;
      if (scenario == Scenario::carbs_no_bolus && e >= 2 && s.bolus[e - 2] > 0.0) continue;
    } else {
      if (!(s.bolus[e] > 0.0) || s.bolus_kind[e] != BolusKind::regular) continue;
      if (scenario == Scenario::bolus_with_carbs) {
        if (e + 2 >= n || !(s.meal[e + 2] > 0.0)) continue;
        planned = s.meal[e + 2];
      }
    }
    if (e < 2) continue;
    const std::size_t t = e - 2;
    if (t < 71) continue;
    for (int tau = 30; tau <= 90; tau += 5) {
      const std::size_t target = t + static_cast<std::size_t>((10 + tau) / 5);
      if (target >= n) continue;
      const int sp = split_of(s.minute_at(t));
      if (sp < 0 || split_of(s.minute_at(target)) != sp) continue;
      bool history_ok = true;
      for (std::size_t k = t - 71; k <= t; ++k) history_ok = history_ok && state[k] != 0;
      if (!history_ok) continue;
      if (state[target] != 1 || state[t] != 1) continue;
      int hour = 0, six = 0;
      for (std::size_t k = t - 71; k <= t; ++k) {
        if (state[k] == 1) continue;
        ++six;
        if (k + 12 > t) ++hour;
      }
      if (hour > 2 || six > 12) continue;
      if (cls == ExampleClass::inertial) {
        bool clear = true;
        for (std::size_t k = t + 1; k <= target; ++k) {
          const bool label_meal = carb && k == e;
          const bool label_bolus = !carb && k == e;
          const bool paired_meal = scenario == Scenario::bolus_with_carbs && k == e + 2;
          if (s.meal[k] > 0.0 && !label_meal && !paired_meal) clear = false;
          if (s.bolus[k] > 0.0 && !label_bolus) clear = false;
        }
        if (!clear) continue;
      }
      const ExampleKey key{sp, e, tau};
      r.keys.insert(key);
      r.planned_carbs[key] = planned;
    }
  }
  return r;
}

inline std::vector<RecommendationExample> all_examples(const SplitDatasets& ds) {
  std::vector<RecommendationExample> out;
  for (const auto& d : ds) out.insert(out.end(), d.examples.begin(), d.examples.end());
  return out;
}

inline std::set<ExampleKey> keys_of(const SplitDatasets& ds) {
  std::set<ExampleKey> out;
  for (const auto& d : ds) {
    for (const auto& ex : d.examples) out.insert({static_cast<int>(ex.split), ex.event_step, ex.tau});
  }
  return out;
}

/// Synthetic stream tuned to exercise every extraction rule: dual boluses,
/// dense gaps and a short span.
inline EventStream oracle_stream(std::uint64_t seed) {
  SyntheticConfig c;
  c.subject_id = "oracle" + std::to_string(seed);
  c.days = 23;
  c.seed = seed;
  c.meals_per_day = 4.5;
  c.dual_bolus_probability = 0.2;
  c.gaps_per_day = 3.0;
  c.meal_time_jitter = 40.0;
  return interpolate_gaps(realign_meals(generate_synthetic(c)).stream);
}

// ---- pre-processing fixtures ----

struct Fixture {
  std::string name;
  std::function<std::optional<std::string>()> run;  // nullopt on success
};

std::vector<Fixture> preprocessing_fixtures();

// ---- baseline oracle ----

/// Fits baselines on `sets` random event sets and compares them with plain
/// means over the same values. Returns the first mismatch.
inline std::optional<std::string> baseline_oracle(int sets, std::uint64_t seed) {
  ad::Rng rng(seed);
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); };
  for (int k = 0; k < sets; ++k) {
    const std::size_t n = 1 + rng() % 60;
    std::vector<LabelEvent> events(n);
    std::vector<double> all;
    std::array<std::vector<double>, 5> by_window;
    for (auto& e : events) {
      e.minute = static_cast<std::int64_t>(rng() % (30 * 288)) * 5;
      e.value = std::round(ad::uniform01(rng) * 1000.0) / 10.0;
      e.split = Split::train;
      all.push_back(e.value);
      const int hour = static_cast<int>(e.minute % 1440 / 60);
      const int w = hour < 6 ? 0 : hour < 10 ? 1 : hour < 14 ? 2 : hour < 18 ? 3 : 4;
      by_window[static_cast<std::size_t>(w)].push_back(e.value);
    }
    const BaselineModel m = fit_baseline(events);
    const double mu = mean(all);
    RecommendationExample probe;
    std::ostringstream why;
    if (m.mu != mu) why << "global mean " << m.mu << " vs " << mu;
    for (int w = 0; w < 5 && why.str().empty(); ++w) {
      const auto& vals = by_window[static_cast<std::size_t>(w)];
      const double want = vals.empty() ? mu : mean(vals);
      // an event time inside window w, as t + 10
      const int hour[] = {3, 8, 12, 16, 21};
      probe.t_minute = static_cast<std::int64_t>(rng() % 30) * 1440 + hour[w] * 60 + static_cast<int>(rng() % 12) * 5 - 10;
      if (predict(m, BaselineKind::tod, probe) != want) why << "window " << w << ": " << predict(m, BaselineKind::tod, probe) << " vs " << want;
      if (predict(m, BaselineKind::global, probe) != mu) why << "global prediction differs";
    }
    if (!why.str().empty()) return "set " + std::to_string(k) + ": " + why.str();
  }
  return std::nullopt;
}

// ---- aggregation fixture ----

/// Two subjects, two seeds, given in scrambled order. B ties on validation
/// MAE, so its lower seed is the best run.
inline std::vector<RunResult> aggregation_fixture() {
  auto run = [](std::string id, std::uint64_t seed, double valid_mae, double rmse, double mae) {
    RunResult r;
    r.subject_id = std::move(id);
    r.seed = seed;
    r.valid = {0.0, valid_mae, 10};
    r.test = {rmse, mae, 10};
    return r;
  };
  return {run("B", 2, 0.5, 5.0, 2.5), run("A", 1, 1.0, 2.0, 1.5), run("A", 2, 0.8, 4.0, 3.0),
          run("B", 1, 0.5, 1.0, 0.5)};
}

struct AggregationExpect {
  double mean_rmse, mean_mae, best_rmse, best_mae;
};
// A: mean (2+4)/2 = 3, (1.5+3)/2 = 2.25; best seed 2 -> 4, 3
// B: mean (5+1)/2 = 3, (2.5+0.5)/2 = 1.5; best seed 1 -> 1, 0.5
inline constexpr AggregationExpect kAggregationExpect{3.0, 1.875, 2.5, 1.75};

// ---- small trained corpora ----

inline std::vector<SubjectData> synthetic_subjects(std::size_t count, int days, std::uint64_t seed, Scenario scenario,
                                                   ExampleClass cls) {
  std::vector<SubjectData> out;
  for (const auto& c : synthetic_corpus(count, days, seed)) {
    out.push_back(prepare_subject(realign_meals(generate_synthetic(c)).stream, scenario, cls));
  }
  return out;
}

}  // namespace testkit
