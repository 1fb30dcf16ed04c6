#include "carbrec/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "carbrec/error.hpp"

namespace carbrec {

namespace {

struct MealEntry {
  std::size_t step;
  double carbs;
  MealOrigin origin;
  bool claimed = false;
  bool changed = false;
  bool fresh = false;
};

std::size_t distance(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

}  // namespace

Realigned realign_meals(const EventStream& stream) {
  stream.validate();
  const std::size_t n = stream.steps();

  std::vector<MealEntry> meals;
  for (std::size_t i = 0; i < n; ++i) {
    if (stream.meal[i] > 0.0) meals.push_back({i, stream.meal[i], stream.meal_origin[i]});
  }

  RealignmentReport report;
  for (std::size_t s = 0; s < n; ++s) {
    const double bw = stream.bw_carb_input[s];
    if (!(stream.bolus[s] > 0.0) || !(bw > 0.0)) continue;
    const std::size_t target = s + kMealOffsetSteps;
    // A bolus whose meal slot would fall past the end of the grid is left alone.
    if (target >= n) continue;

    MealEntry* best = nullptr;
    for (auto& m : meals) {
      if (m.claimed || distance(m.step, s) > kRealignWindowSteps) continue;
      if (m.step == target) {
        best = &m;
        break;
      }
      if (!best) {
        best = &m;
        continue;
      }
      const std::size_t d = distance(m.step, s);
      const std::size_t bd = distance(best->step, s);
      if (d < bd || (d == bd && std::abs(m.carbs - bw) < std::abs(best->carbs - bw))) best = &m;
      // equal distance and equal carb gap keeps the earlier meal (meals are in step order)
    }

    if (best) {
      best->claimed = true;
      if (best->step != target || best->carbs != bw) {
        best->changed = true;
        report.carbs_replaced_delta += best->carbs - bw;
      }
      best->step = target;
      best->carbs = bw;
    } else {
      meals.push_back({target, bw, MealOrigin::added, true, true, true});
      report.carbs_added += bw;
    }
  }

  EventStream out = stream;
  std::fill(out.meal.begin(), out.meal.end(), 0.0);
  std::fill(out.meal_origin.begin(), out.meal_origin.end(), MealOrigin::none);
  std::stable_sort(meals.begin(), meals.end(), [](const MealEntry& a, const MealEntry& b) { return a.step < b.step; });
  for (const auto& m : meals) {
    // An unclaimed meal already sitting on a claimed slot would have been
    // taken by the exact-slot preference, so slots never collide here.
    out.meal[m.step] += m.carbs;
    out.meal_origin[m.step] = m.origin == MealOrigin::added ? MealOrigin::added : MealOrigin::self_reported;
    report.added_meal_flags.push_back(m.origin == MealOrigin::added);
    if (m.fresh) {
      ++report.meals_added;
    } else if (m.changed) {
      ++report.meals_shifted;
    } else {
      ++report.meals_unchanged;
    }
  }
  return {std::move(out), std::move(report)};
}

bool interpolation_filter(const GlucoseGrid& glucose, std::size_t t, int tau_minutes) {
  const std::size_t n = glucose.state.size();
  const std::size_t target = t + static_cast<std::size_t>((10 + tau_minutes) / kStepMinutes);
  if (t + 1 < kHistorySteps || target >= n) {
    throw PreconditionError("interpolation filter: window around step " + std::to_string(t) + " with tau " +
                            std::to_string(tau_minutes) + " does not fit in " + std::to_string(n) + " steps");
  }
  if (!glucose.is_measured(target) || !glucose.is_measured(t)) return false;
  std::size_t hour = 0;
  std::size_t six_hours = 0;
  for (std::size_t k = 0; k < kHistorySteps; ++k) {
    if (glucose.is_measured(t - k)) continue;
    ++six_hours;
    if (k < 12) ++hour;
  }
  return hour <= 2 && six_hours <= 12;
}

bool interpolation_filter(const EventStream& stream, std::size_t t, int tau_minutes) {
  return interpolation_filter(glucose_grid(stream), t, tau_minutes);
}

std::int64_t StreamSplit::days(Split s) const noexcept {
  switch (s) {
    case Split::train: return (valid_begin - train_begin) / kMinutesPerDay;
    case Split::valid: return (test_begin - valid_begin) / kMinutesPerDay;
    case Split::test: return (end - test_begin + kMinutesPerDay - 1) / kMinutesPerDay;
  }
  return 0;
}

StreamSplit split(const EventStream& stream) {
  if (stream.steps() == 0) throw SplitError("stream '" + stream.subject_id + "' is empty");
  const std::int64_t first_day = day_of(stream.minute_at(0));
  const std::int64_t last_day = day_of(stream.minute_at(stream.steps() - 1));
  const std::int64_t days = last_day - first_day + 1;
  if (days <= kTestDays + kValidDays) {
    throw SplitError("stream '" + stream.subject_id + "' covers " + std::to_string(days) +
                     " days; more than 20 are needed for a train/valid/test split");
  }
  StreamSplit p;
  p.train_begin = first_day * kMinutesPerDay;
  p.test_begin = (last_day + 1 - kTestDays) * kMinutesPerDay;
  p.valid_begin = p.test_begin - kValidDays * kMinutesPerDay;
  p.end = (last_day + 1) * kMinutesPerDay;
  return p;
}

ScalingParams fit_scaling(const EventStream& stream, const StreamSplit& parts) {
  ScalingParams p;
  p.source = Split::train;
  constexpr double inf = std::numeric_limits<double>::infinity();
  ChannelRange bgl{inf, -inf};
  for (const auto& s : stream.bgl) {
    if (s.minute >= parts.valid_begin) break;
    bgl.min = std::min(bgl.min, s.value);
    bgl.max = std::max(bgl.max, s.value);
  }
  ChannelRange carbs{0.0, 0.0}, bolus{0.0, 0.0}, basal{inf, -inf};
  for (std::size_t i = 0; i < stream.steps() && stream.minute_at(i) < parts.valid_begin; ++i) {
    carbs.max = std::max(carbs.max, stream.meal[i]);
    bolus.max = std::max(bolus.max, stream.bolus[i]);
    basal.min = std::min(basal.min, stream.basal[i]);
    basal.max = std::max(basal.max, stream.basal[i]);
  }
  if (!std::isfinite(bgl.min)) throw FitError("stream '" + stream.subject_id + "' has no training glucose");
  if (!std::isfinite(basal.min)) basal = {0.0, 0.0};
  for (auto* r : {&bgl, &carbs, &bolus, &basal}) {
    if (!(r->max > r->min)) r->max = r->min + 1.0;
  }
  p[Channel::bgl] = bgl;
  p[Channel::carbs] = carbs;
  p[Channel::bolus] = bolus;
  p[Channel::basal] = basal;
  return p;
}

}  // namespace carbrec
