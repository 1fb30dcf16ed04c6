#include "carbrec/baselines.hpp"

#include "carbrec/error.hpp"

namespace carbrec {

std::string_view to_string(BaselineKind k) { return k == BaselineKind::global ? "global" : "tod"; }

double BaselineModel::tod_average(std::int64_t minute) const {
  const auto w = static_cast<std::size_t>(tod_window_of(minute).label);
  return window_count[w] > 0 ? window_mean[w] : mu;
}

BaselineModel fit_baseline(std::span<const LabelEvent> events) {
  if (events.empty()) throw FitError("baseline: no training events");
  BaselineModel m;
  double total = 0.0;
  std::array<double, 5> sums{};
  for (const auto& e : events) {
    if (e.split != Split::train) {
      throw FitError("baseline: event at minute " + std::to_string(e.minute) + " is from the " +
                     std::string(to_string(e.split)) + " split");
    }
    const auto w = static_cast<std::size_t>(tod_window_of(e.minute).label);
    total += e.value;
    sums[w] += e.value;
    m.window_count[w] += 1;
  }
  m.count = events.size();
  m.mu = total / static_cast<double>(m.count);
  for (std::size_t w = 0; w < 5; ++w) {
    m.window_mean[w] = m.window_count[w] > 0 ? sums[w] / static_cast<double>(m.window_count[w]) : m.mu;
  }
  return m;
}

double predict(const BaselineModel& model, BaselineKind kind, const RecommendationExample& example) {
  if (kind == BaselineKind::global) return model.mu;
  return model.tod_average(example.event_minute());
}

void attach_tod_average(std::span<RecommendationExample> examples, const BaselineModel& model) {
  for (auto& e : examples) e.tod_average = model.tod_average(e.event_minute());
}

}  // namespace carbrec
