#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "carbrec/timeseries.hpp"

namespace carbrec {

/// Outcome of meal realignment. One flag per post-processing meal, in
/// chronological order.
struct RealignmentReport {
  std::size_t meals_shifted = 0;
  std::size_t meals_added = 0;
  std::size_t meals_unchanged = 0;
  std::vector<bool> added_meal_flags;
  /// Carbs before minus carbs after for the meals whose value was replaced.
  double carbs_replaced_delta = 0.0;
  double carbs_added = 0.0;

  std::size_t total() const noexcept { return meals_shifted + meals_added + meals_unchanged; }
};

struct Realigned {
  EventStream stream;
  RealignmentReport report;
};

/// Moves each meal associated with a bolus that carries a bolus-wizard carb
/// input to exactly 10 minutes after the bolus, and replaces its carbs with
/// the wizard value.
///
/// Boluses are processed chronologically. The associated meal is the closest
/// unclaimed meal within +-60 minutes (ties: carbs closest to the wizard
/// input, then the earlier meal); a meal already sitting exactly 10 minutes
/// after the bolus is taken first. When no meal qualifies, one is added.
Realigned realign_meals(const EventStream& stream);

inline constexpr std::size_t kRealignWindowSteps = 12;  // +-60 min
inline constexpr std::size_t kMealOffsetSteps = 2;      // bolus + 10 min

/// Keep/reject decision for an example at present step `t` with horizon
/// `tau_minutes`. Rejects when the target or present glucose is not
/// measured, or when (t-60, t] holds more than 2 or (t-360, t] more than 12
/// non-measured samples. Throws PreconditionError when the windows do not fit
/// in the stream.
bool interpolation_filter(const GlucoseGrid& glucose, std::size_t t, int tau_minutes);
bool interpolation_filter(const EventStream& stream, std::size_t t, int tau_minutes);

/// Day-aligned train/valid/test partition, as half-open minute ranges.
struct StreamSplit {
  std::int64_t train_begin = 0;
  std::int64_t valid_begin = 0;
  std::int64_t test_begin = 0;
  std::int64_t end = 0;

  Split split_of(std::int64_t minute) const noexcept {
    if (minute >= test_begin) return Split::test;
    if (minute >= valid_begin) return Split::valid;
    return Split::train;
  }
  bool contains(std::int64_t minute) const noexcept { return minute >= train_begin && minute < end; }
  std::int64_t days(Split s) const noexcept;
};

inline constexpr std::int64_t kTestDays = 10;
inline constexpr std::int64_t kValidDays = 10;

/// Last 10 calendar days are test, the 10 before are validation, the rest is
/// training. Boundaries fall on subject-local midnight. Throws SplitError
/// when the stream covers 20 days or fewer.
StreamSplit split(const EventStream& stream);

/// Min/max per channel over the training range only. Event channels use 0 as
/// their floor (the value at every step without an event). A channel with a
/// constant training value gets max = min + 1.
ScalingParams fit_scaling(const EventStream& stream, const StreamSplit& parts);

}  // namespace carbrec
