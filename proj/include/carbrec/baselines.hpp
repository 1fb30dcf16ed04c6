#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>

#include "carbrec/examples.hpp"
#include "carbrec/timeseries.hpp"

namespace carbrec {

enum class BaselineKind : std::uint8_t { global, tod };
std::string_view to_string(BaselineKind k);

/// Global and time-of-day label averages over a subject's training events.
struct BaselineModel {
  double mu = 0.0;
  std::array<double, 5> window_mean{};
  std::array<std::size_t, 5> window_count{};
  std::size_t count = 0;
  Split source = Split::train;

  /// Average for the window containing `minute`; global mean when that
  /// window had no training events.
  double tod_average(std::int64_t minute) const;

  friend bool operator==(const BaselineModel&, const BaselineModel&) = default;
};

/// Each event counts once (not once per horizon). Throws FitError when
/// `events` is empty or holds a non-training event.
BaselineModel fit_baseline(std::span<const LabelEvent> events);

/// Global kind returns mu; tod kind returns the average of the window that
/// contains the action time t + 10.
double predict(const BaselineModel& model, BaselineKind kind, const RecommendationExample& example);

/// Fills `tod_average` of every example from the fitted model.
void attach_tod_average(std::span<RecommendationExample> examples, const BaselineModel& model);

}  // namespace carbrec
