#include "carbrec/timeseries.hpp"

#include <cmath>
#include <sstream>

#include "carbrec/error.hpp"

namespace carbrec {

std::string_view to_string(Channel c) {
  switch (c) {
    case Channel::bgl: return "bgl";
    case Channel::carbs: return "carbs";
    case Channel::bolus: return "bolus";
    case Channel::basal: return "basal";
  }
  return "?";
}

std::string_view to_string(BolusKind k) {
  switch (k) {
    case BolusKind::none: return "";
    case BolusKind::regular: return "regular";
    case BolusKind::dual: return "dual";
  }
  return "?";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    case Split::test: return "test";
  }
  return "?";
}

std::string_view to_string(TodLabel l) {
  switch (l) {
    case TodLabel::early: return "early";
    case TodLabel::breakfast: return "breakfast";
    case TodLabel::lunch: return "lunch";
    case TodLabel::dinner: return "dinner";
    case TodLabel::late: return "late";
  }
  return "?";
}

std::optional<std::size_t> EventStream::step_of(std::int64_t minute) const noexcept {
  const std::int64_t offset = minute - start_minute;
  if (offset < 0 || offset % kStepMinutes != 0) return std::nullopt;
  const auto step = static_cast<std::size_t>(offset / kStepMinutes);
  if (step >= steps()) return std::nullopt;
  return step;
}

void EventStream::resize(std::size_t n) {
  basal.resize(n, 0.0);
  bolus.resize(n, 0.0);
  bolus_kind.resize(n, BolusKind::none);
  bw_carb_input.resize(n, 0.0);
  meal.resize(n, 0.0);
  meal_origin.resize(n, MealOrigin::none);
}

void EventStream::validate() const {
  const std::size_t n = steps();
  auto fail = [&](const std::string& what) {
    throw PreconditionError("stream '" + subject_id + "': " + what);
  };
  if (basal.size() != n || bolus.size() != n || bolus_kind.size() != n ||
      bw_carb_input.size() != n || meal_origin.size() != n) {
    fail("channel lengths differ");
  }
  if (start_minute % kStepMinutes != 0) fail("start minute is off-grid");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(basal[i] >= 0.0) || !(bolus[i] >= 0.0) || !(meal[i] >= 0.0) || !(bw_carb_input[i] >= 0.0)) {
      std::ostringstream os;
      os << "negative or NaN value at step " << i;
      fail(os.str());
    }
    if ((bolus[i] > 0.0) != (bolus_kind[i] != BolusKind::none)) {
      fail("bolus kind does not match bolus at step " + std::to_string(i));
    }
    if ((meal[i] > 0.0) != (meal_origin[i] != MealOrigin::none)) {
      fail("meal origin does not match meal at step " + std::to_string(i));
    }
  }
  for (std::size_t k = 0; k < bgl.size(); ++k) {
    const auto& s = bgl[k];
    if (!step_of(s.minute)) fail("glucose sample off-grid at minute " + std::to_string(s.minute));
    if (k > 0 && s.minute <= bgl[k - 1].minute) fail("glucose timestamps not strictly increasing");
    if (!s.interpolated && !(s.value > 0.0)) fail("non-positive glucose value");
  }
}

std::int64_t snap_to_grid_seconds(std::int64_t seconds) {
  constexpr std::int64_t step = kStepMinutes * 60;
  const std::int64_t shifted = seconds + step / 2;
  const std::int64_t q = shifted >= 0 ? shifted / step : -((-shifted + step - 1) / step);
  return q * kStepMinutes;
}

GlucoseGrid glucose_grid(const EventStream& stream) {
  GlucoseGrid g;
  g.value.assign(stream.steps(), 0.0);
  g.state.assign(stream.steps(), GlucoseGrid::missing);
  for (const auto& s : stream.bgl) {
    if (auto step = stream.step_of(s.minute)) {
      g.value[*step] = s.value;
      g.state[*step] = s.interpolated ? GlucoseGrid::interpolated : GlucoseGrid::measured;
    }
  }
  return g;
}

EventStream interpolate_gaps(const EventStream& stream) {
  std::vector<GlucoseSample> real;
  real.reserve(stream.bgl.size());
  for (const auto& s : stream.bgl) {
    if (!s.interpolated) real.push_back(s);
  }
  if (real.size() < 2) {
    throw EmptyStreamError("stream '" + stream.subject_id + "' has fewer than 2 measured glucose samples");
  }
  EventStream out = stream;
  out.bgl.clear();
  out.bgl.reserve(static_cast<std::size_t>((real.back().minute - real.front().minute) / kStepMinutes + 1));
  for (std::size_t k = 0; k + 1 < real.size(); ++k) {
    const auto& a = real[k];
    const auto& b = real[k + 1];
    out.bgl.push_back(a);
    const double span = static_cast<double>(b.minute - a.minute);
    for (std::int64_t m = a.minute + kStepMinutes; m < b.minute; m += kStepMinutes) {
      const double w = static_cast<double>(m - a.minute) / span;
      out.bgl.push_back({m, a.value + w * (b.value - a.value), true});
    }
  }
  out.bgl.push_back(real.back());
  return out;
}

void validate(const ScalingParams& params) {
  for (std::size_t c = 0; c < kChannelCount; ++c) {
    const auto& r = params.range[c];
    if (!(r.max > r.min) || !std::isfinite(r.min) || !std::isfinite(r.max)) {
      std::ostringstream os;
      os << "degenerate scaling range for channel " << to_string(static_cast<Channel>(c)) << ": min=" << r.min
         << " max=" << r.max;
      throw ConfigError(os.str());
    }
  }
}

double scale_value(double v, Channel c, const ScalingParams& params) {
  const auto& r = params[c];
  if (!(r.max > r.min)) throw ConfigError("degenerate scaling range for channel " + std::string(to_string(c)));
  return (v - r.min) / (r.max - r.min);
}

double unscale(double v, Channel c, const ScalingParams& params) {
  const auto& r = params[c];
  if (!(r.max > r.min)) throw ConfigError("degenerate scaling range for channel " + std::string(to_string(c)));
  return v * (r.max - r.min) + r.min;
}

EventStream scale(const EventStream& stream, const ScalingParams& params) {
  validate(params);
  EventStream out = stream;
  for (auto& s : out.bgl) s.value = scale_value(s.value, Channel::bgl, params);
  for (auto& v : out.basal) v = scale_value(v, Channel::basal, params);
  for (auto& v : out.bolus) v = scale_value(v, Channel::bolus, params);
  for (auto& v : out.meal) v = scale_value(v, Channel::carbs, params);
  return out;
}

ToDWindow tod_window_of(std::int64_t minute) {
  const std::int64_t hour = minute_of_day(minute) / 60;
  for (const auto& w : kTodWindows) {
    if (hour >= w.start_hour && hour < w.end_hour) return w;
  }
  return kTodWindows.back();
}

}  // namespace carbrec
