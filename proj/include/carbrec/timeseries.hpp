#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace carbrec {

inline constexpr std::int64_t kStepMinutes = 5;
inline constexpr std::int64_t kMinutesPerDay = 1440;
/// 6 h of context at 5-minute resolution.
inline constexpr std::size_t kHistorySteps = 72;

enum class Channel : std::uint8_t { bgl = 0, carbs = 1, bolus = 2, basal = 3 };
inline constexpr std::size_t kChannelCount = 4;

enum class BolusKind : std::uint8_t { none, regular, dual };
enum class MealOrigin : std::uint8_t { none, self_reported, added };

std::string_view to_string(Channel c);
std::string_view to_string(BolusKind k);

struct GlucoseSample {
  std::int64_t minute = 0;  // minutes since subject epoch, multiple of 5
  double value = 0.0;       // mg/dL
  bool interpolated = false;

  friend bool operator==(const GlucoseSample&, const GlucoseSample&) = default;
};

/// Per-subject data on a shared 5-minute grid.
///
/// Grid step `i` sits at minute `start_minute + 5 * i`, counted from `epoch`
/// (subject-local midnight of the first day). The event channels are dense and
/// have one entry per grid step. `bgl` is a sorted list of on-grid samples: it
/// holds only measured values until `interpolate_gaps` fills the span between
/// the first and last measurement.
struct EventStream {
  std::string subject_id;
  std::chrono::sys_days epoch{};
  std::int64_t start_minute = 0;

  std::vector<GlucoseSample> bgl;
  std::vector<double> basal;          // units/hour in effect at step start
  std::vector<double> bolus;          // units delivered at the step
  std::vector<BolusKind> bolus_kind;  // none when bolus == 0
  std::vector<double> bw_carb_input;  // grams entered into the bolus wizard
  std::vector<double> meal;           // grams of carbohydrate
  std::vector<MealOrigin> meal_origin;

  std::size_t steps() const noexcept { return meal.size(); }
  std::int64_t minute_at(std::size_t step) const noexcept {
    return start_minute + kStepMinutes * static_cast<std::int64_t>(step);
  }
  /// Grid step of an on-grid minute, or nullopt when outside the grid.
  std::optional<std::size_t> step_of(std::int64_t minute) const noexcept;
  void resize(std::size_t n);

  /// Throws PreconditionError naming the first violated invariant.
  void validate() const;

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

/// Nearest 5-minute grid point, in minutes, for a time given in seconds.
/// Exact halves round up.
std::int64_t snap_to_grid_seconds(std::int64_t seconds);

/// Dense per-step view of the glucose channel.
struct GlucoseGrid {
  enum State : std::uint8_t { missing = 0, measured = 1, interpolated = 2 };
  std::vector<double> value;
  std::vector<std::uint8_t> state;

  bool available(std::size_t step) const { return state[step] != missing; }
  bool is_measured(std::size_t step) const { return state[step] == measured; }
};
GlucoseGrid glucose_grid(const EventStream& stream);

/// Fills every grid step between the first and last measured sample with a
/// linearly interpolated value. Measured samples are untouched.
/// Throws EmptyStreamError when fewer than two measured samples exist.
EventStream interpolate_gaps(const EventStream& stream);

enum class Split : std::uint8_t { train = 0, valid = 1, test = 2 };
std::string_view to_string(Split s);

struct ChannelRange {
  double min = 0.0;
  double max = 1.0;
  friend bool operator==(const ChannelRange&, const ChannelRange&) = default;
};

/// Per-channel min/max used for [0, 1] scaling. `source` records which split
/// the statistics were computed from; only training statistics are accepted
/// by the model code.
struct ScalingParams {
  std::array<ChannelRange, kChannelCount> range{};
  Split source = Split::train;

  const ChannelRange& operator[](Channel c) const { return range[static_cast<std::size_t>(c)]; }
  ChannelRange& operator[](Channel c) { return range[static_cast<std::size_t>(c)]; }
  friend bool operator==(const ScalingParams&, const ScalingParams&) = default;
};

/// Throws ConfigError when any channel has max <= min.
void validate(const ScalingParams& params);

double scale_value(double v, Channel c, const ScalingParams& params);
double unscale(double v, Channel c, const ScalingParams& params);

/// Scales every channel of a stream. No clamping: values outside the fitted
/// range land outside [0, 1].
EventStream scale(const EventStream& stream, const ScalingParams& params);

enum class TodLabel : std::uint8_t { early = 0, breakfast = 1, lunch = 2, dinner = 3, late = 4 };
std::string_view to_string(TodLabel l);

struct ToDWindow {
  TodLabel label;
  int start_hour;
  int end_hour;
  friend bool operator==(const ToDWindow&, const ToDWindow&) = default;
};

inline constexpr std::array<ToDWindow, 5> kTodWindows{{
    {TodLabel::early, 0, 6},
    {TodLabel::breakfast, 6, 10},
    {TodLabel::lunch, 10, 14},
    {TodLabel::dinner, 14, 18},
    {TodLabel::late, 18, 24},
}};

/// Window containing the hour-of-day of `minute`. A boundary hour belongs to
/// the window it starts.
ToDWindow tod_window_of(std::int64_t minute);

inline std::int64_t minute_of_day(std::int64_t minute) {
  return ((minute % kMinutesPerDay) + kMinutesPerDay) % kMinutesPerDay;
}
inline std::int64_t day_of(std::int64_t minute) {
  return minute >= 0 ? minute / kMinutesPerDay : -((-minute + kMinutesPerDay - 1) / kMinutesPerDay);
}

}  // namespace carbrec
