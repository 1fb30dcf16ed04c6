#include <algorithm>
#include <cmath>
#include <random>

#include "carbrec/config.hpp"
#include "carbrec/ingest.hpp"

namespace carbrec {

namespace {

constexpr double kMealTimeConstant = 20.0;     // minutes
constexpr double kInsulinTimeConstant = 30.0;  // minutes
constexpr double kReversionPerStep = 5.0 / 300.0;
constexpr std::array<double, 3> kMealHour{7.5, 12.5, 18.5};
constexpr std::array<double, 3> kMealFactor{0.7, 1.0, 1.3};

struct Pending {
  double amount;  // total BGL effect in mg/dL, signed
  double tau;     // minutes
  double age = 0.0;
};

}  // namespace

SyntheticConfig SyntheticConfig::from_json(const nlohmann::json& j) {
  SyntheticConfig c;
  std::vector<std::string> errors;
  ConfigReader r(j, "", errors);
  r.get("subject_id", c.subject_id);
  r.get("start_date", c.start_date);
  r.get("days", c.days);
  r.get("meals_per_day", c.meals_per_day);
  r.get("carb_mean", c.carb_mean);
  r.get("carb_std", c.carb_std);
  r.get("carb_ratio", c.carb_ratio);
  r.get("insulin_sensitivity", c.insulin_sensitivity);
  r.get("basal", c.basal);
  r.get("noise_std", c.noise_std);
  r.get("baseline_bgl", c.baseline_bgl);
  r.get("bolus_probability", c.bolus_probability);
  r.get("forget_log_probability", c.forget_log_probability);
  r.get("meal_time_jitter", c.meal_time_jitter);
  r.get("dual_bolus_probability", c.dual_bolus_probability);
  r.get("dose_adjust_std", c.dose_adjust_std);
  r.get("correction_threshold", c.correction_threshold);
  r.get("gaps_per_day", c.gaps_per_day);
  r.get("seed", c.seed);
  r.finish();
  throw_if_errors(errors, "synthetic config");
  c.validate();
  return c;
}

nlohmann::json SyntheticConfig::to_json() const {
  return {{"subject_id", subject_id},
          {"start_date", start_date},
          {"days", days},
          {"meals_per_day", meals_per_day},
          {"carb_mean", carb_mean},
          {"carb_std", carb_std},
          {"carb_ratio", carb_ratio},
          {"insulin_sensitivity", insulin_sensitivity},
          {"basal", basal},
          {"noise_std", noise_std},
          {"baseline_bgl", baseline_bgl},
          {"bolus_probability", bolus_probability},
          {"forget_log_probability", forget_log_probability},
          {"meal_time_jitter", meal_time_jitter},
          {"dual_bolus_probability", dual_bolus_probability},
          {"dose_adjust_std", dose_adjust_std},
          {"correction_threshold", correction_threshold},
          {"gaps_per_day", gaps_per_day},
          {"seed", seed}};
}

void SyntheticConfig::validate() const {
  std::vector<std::string> e;
  auto positive = [&](const char* name, double v) {
    if (!(v > 0.0)) e.push_back(std::string(name) + ": must be positive");
  };
  auto non_negative = [&](const char* name, double v) {
    if (!(v >= 0.0)) e.push_back(std::string(name) + ": must be non-negative");
  };
  auto probability = [&](const char* name, double v) {
    if (!(v >= 0.0 && v <= 1.0)) e.push_back(std::string(name) + ": must be in [0, 1]");
  };
  if (subject_id.empty()) e.push_back("subject_id: must not be empty");
  if (!parse_timestamp_seconds(start_date + "T00:00")) e.push_back("start_date: expected YYYY-MM-DD");
  if (days < 1) e.push_back("days: must be at least 1");
  non_negative("meals_per_day", meals_per_day);
  positive("carb_mean", carb_mean);
  non_negative("carb_std", carb_std);
  positive("carb_ratio", carb_ratio);
  positive("insulin_sensitivity", insulin_sensitivity);
  non_negative("basal", basal);
  non_negative("noise_std", noise_std);
  positive("baseline_bgl", baseline_bgl);
  probability("bolus_probability", bolus_probability);
  probability("forget_log_probability", forget_log_probability);
  non_negative("meal_time_jitter", meal_time_jitter);
  probability("dual_bolus_probability", dual_bolus_probability);
  non_negative("dose_adjust_std", dose_adjust_std);
  positive("correction_threshold", correction_threshold);
  non_negative("gaps_per_day", gaps_per_day);
  throw_if_errors(e, "synthetic config");
}

EventStream generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  EventStream s;
  s.subject_id = cfg.subject_id;
  const auto start = *parse_timestamp_seconds(cfg.start_date + "T00:00");
  s.epoch = std::chrono::sys_days{std::chrono::days{start / 86400}};
  s.start_minute = 0;
  const std::size_t per_day = static_cast<std::size_t>(kMinutesPerDay / kStepMinutes);
  const std::size_t n = per_day * static_cast<std::size_t>(cfg.days);
  s.resize(n);
  std::fill(s.basal.begin(), s.basal.end(), cfg.basal);

  // True intake per step (what the body sees) versus the logged meal channel.
  std::vector<double> eaten(n, 0.0);
  const double carb_factor = cfg.insulin_sensitivity / cfg.carb_ratio;  // mg/dL per gram
  const double main_p = std::min(1.0, cfg.meals_per_day / 3.0);
  const double snack_rate = std::max(0.0, cfg.meals_per_day - 3.0);
  const auto jitter_steps = static_cast<int>(std::lround(cfg.meal_time_jitter / kStepMinutes));

  for (int d = 0; d < cfg.days; ++d) {
    const std::size_t day0 = static_cast<std::size_t>(d) * per_day;
    for (std::size_t k = 0; k < 3; ++k) {
      if (unit(rng) >= main_p) continue;
      const double hour = kMealHour[k] + (unit(rng) - 0.5) * 1.5;
      const auto step = day0 + static_cast<std::size_t>(std::lround(hour * 12.0));
      const double carbs = std::max(5.0, std::round(cfg.carb_mean * kMealFactor[k] + cfg.carb_std * normal(rng)));
      eaten[step] += carbs;
      if (unit(rng) < cfg.bolus_probability && step >= 2) {
        const std::size_t b = step - 2;
        double dose = carbs / cfg.carb_ratio;
        // Pump-rounded, skewed by exercise, stress and guesswork.
        if (cfg.dose_adjust_std > 0.0) dose = std::round(dose * std::exp(cfg.dose_adjust_std * normal(rng)) * 10.0) / 10.0;
        s.bolus[b] += dose;
        s.bolus_kind[b] = unit(rng) < cfg.dual_bolus_probability ? BolusKind::dual : BolusKind::regular;
        s.bw_carb_input[b] += carbs;
        const int shift = jitter_steps > 0 ? static_cast<int>(rng() % static_cast<std::uint64_t>(2 * jitter_steps + 1)) -
                                                 jitter_steps
                                           : 0;
        const auto logged = static_cast<std::int64_t>(step) + shift;
        if (unit(rng) >= cfg.forget_log_probability && logged >= 0 && logged < static_cast<std::int64_t>(n)) {
          s.meal[static_cast<std::size_t>(logged)] += carbs;
          s.meal_origin[static_cast<std::size_t>(logged)] = MealOrigin::self_reported;
        }
      } else {
        s.meal[step] += carbs;
        s.meal_origin[step] = MealOrigin::self_reported;
      }
    }
    std::poisson_distribution<int> snacks(snack_rate);
    const int count = snack_rate > 0.0 ? snacks(rng) : 0;
    for (int i = 0; i < count; ++i) {
      const auto step = day0 + 108 + static_cast<std::size_t>(rng() % 156);  // 09:00 to 22:00
      const double carbs = std::max(5.0, std::round(15.0 + 4.0 * normal(rng)));
      eaten[step] += carbs;
      s.meal[step] += carbs;
      s.meal_origin[step] = MealOrigin::self_reported;
    }
  }

  // CGM dropouts.
  std::vector<bool> dropped(n, false);
  std::poisson_distribution<int> gaps(cfg.gaps_per_day * cfg.days);
  const int gap_count = cfg.gaps_per_day > 0.0 ? gaps(rng) : 0;
  for (int i = 0; i < gap_count; ++i) {
    const std::size_t begin = static_cast<std::size_t>(rng() % n);
    const std::size_t len = 1 + static_cast<std::size_t>(rng() % 24);
    for (std::size_t k = begin; k < std::min(n, begin + len); ++k) dropped[k] = true;
  }

  std::vector<Pending> active;
  double g = cfg.baseline_bgl;
  std::int64_t last_bolus = -1000;
  for (std::size_t i = 0; i < n; ++i) {
    if (eaten[i] > 0.0) active.push_back({eaten[i] * carb_factor, kMealTimeConstant});
    if (s.bolus[i] > 0.0) {
      active.push_back({-s.bolus[i] * cfg.insulin_sensitivity, kInsulinTimeConstant});
      last_bolus = static_cast<std::int64_t>(i);
    }
    double delta = -(g - cfg.baseline_bgl) * kReversionPerStep;
    for (auto& p : active) {
      const double before = 1.0 - std::exp(-p.age / p.tau);
      p.age += kStepMinutes;
      const double after = 1.0 - std::exp(-p.age / p.tau);
      delta += p.amount * (after - before);
    }
    std::erase_if(active, [](const Pending& p) { return p.age > 8.0 * p.tau; });
    g = std::clamp(g + delta, 40.0, 400.0);

    const double reading = std::clamp(std::round((g + cfg.noise_std * normal(rng)) * 10.0) / 10.0, 40.0, 400.0);
    if (!dropped[i]) s.bgl.push_back({s.minute_at(i), reading, false});

    // Correction bolus, at most one per two hours.
    if (g > cfg.correction_threshold && static_cast<std::int64_t>(i) - last_bolus >= 24 && i + 1 < n) {
      const double dose = std::round((g - cfg.baseline_bgl) / cfg.insulin_sensitivity * 10.0) / 10.0;
      if (dose > 0.0 && s.bolus[i + 1] == 0.0) {
        s.bolus[i + 1] = dose;
        s.bolus_kind[i + 1] = BolusKind::regular;
      }
    }
  }
  s.validate();
  return s;
}

std::vector<SyntheticConfig> synthetic_corpus(std::size_t subjects, int days, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto between = [&](double lo, double hi) { return lo + (hi - lo) * std::uniform_real_distribution<double>(0, 1)(rng); };
  std::vector<SyntheticConfig> out;
  for (std::size_t i = 0; i < subjects; ++i) {
    SyntheticConfig c;
    c.subject_id = "S" + std::to_string(i + 1);
    c.days = days;
    c.carb_ratio = std::round(between(8.0, 14.0));
    c.insulin_sensitivity = std::round(between(30.0, 55.0));
    c.meals_per_day = between(3.0, 4.2);
    c.carb_mean = std::round(between(35.0, 60.0));
    c.basal = std::round(between(0.6, 1.2) * 100.0) / 100.0;
    c.noise_std = between(3.0, 5.0);
    c.bolus_probability = between(0.75, 0.95);
    c.seed = rng();
    out.push_back(c);
  }
  return out;
}

}  // namespace carbrec
