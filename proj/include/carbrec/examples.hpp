#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "carbrec/preprocess.hpp"
#include "carbrec/timeseries.hpp"

namespace carbrec {

/// Recommendation datasets.
///   carbs_all         every meal                         (Carbs +-b)
///   carbs_no_bolus    meals without an associated bolus  (Carbs -b)
///   bolus_all         every regular bolus                (Bolus +-c)
///   bolus_with_carbs  regular bolus followed by a meal
///                     10 minutes later                   (Bolus +c)
enum class Scenario : std::uint8_t { carbs_all, carbs_no_bolus, bolus_all, bolus_with_carbs };
inline constexpr std::array<Scenario, 4> kScenarios{Scenario::carbs_all, Scenario::carbs_no_bolus,
                                                    Scenario::bolus_all, Scenario::bolus_with_carbs};

std::string_view to_string(Scenario s);
std::optional<Scenario> parse_scenario(std::string_view name);
std::string scenario_names();  // comma-separated, for error messages

inline bool is_carb_scenario(Scenario s) { return s == Scenario::carbs_all || s == Scenario::carbs_no_bolus; }
inline Channel label_channel(Scenario s) { return is_carb_scenario(s) ? Channel::carbs : Channel::bolus; }
inline std::string_view label_unit(Scenario s) { return is_carb_scenario(s) ? "g" : "u"; }

enum class ExampleClass : std::uint8_t { inertial, unrestricted };
std::string_view to_string(ExampleClass c);
std::optional<ExampleClass> parse_example_class(std::string_view name);

inline constexpr std::array<int, 13> kHorizons{30, 35, 40, 45, 50, 55, 60, 65, 70, 75, 80, 85, 90};
inline bool is_valid_horizon(int tau) { return tau >= 30 && tau <= 90 && tau % 5 == 0; }
/// Steps in (t, t + 10 + tau].
inline std::size_t future_steps(int tau) { return static_cast<std::size_t>((10 + tau) / 5); }

inline constexpr std::size_t kHistoryChannels = 4;  // bgl, carbs, bolus, basal
inline constexpr std::size_t kFutureChannels = 3;   // carbs, bolus, basal

/// One training/evaluation instance. `t` is the present; the label event sits
/// at t + 10 and the target glucose at t + 10 + tau.
struct RecommendationExample {
  std::string subject_id;
  Scenario scenario = Scenario::carbs_all;
  Split split = Split::train;
  std::size_t event_step = 0;  // grid step of the label event
  std::int64_t t_minute = 0;
  int tau = 30;

  /// Steps t-355 .. t, row-major (step, channel) in natural units.
  std::array<double, kHistorySteps * kHistoryChannels> history{};
  /// Steps t+5 .. t+10+tau, row-major (step, channel). The label event and,
  /// for bolus_with_carbs, the paired meal are masked to zero.
  std::vector<double> future;

  double target_bgl = 0.0;
  double tod_average = 0.0;
  double planned_carbs = 0.0;
  double label = 0.0;
  bool inertial = false;
  bool label_added = false;  // label meal was added by pre-processing

  std::int64_t event_minute() const noexcept { return t_minute + 10; }
  std::size_t future_length() const noexcept { return future_steps(tau); }
  double history_at(std::size_t step, Channel c) const {
    return history[step * kHistoryChannels + static_cast<std::size_t>(c)];
  }
};

struct ScenarioDataset {
  Scenario scenario = Scenario::carbs_all;
  ExampleClass example_class = ExampleClass::inertial;
  Split split = Split::train;
  std::vector<RecommendationExample> examples;
};

using SplitDatasets = std::array<ScenarioDataset, 3>;

/// A label event before horizon expansion.
struct LabelEvent {
  std::size_t step = 0;
  std::int64_t minute = 0;
  double value = 0.0;
  double planned_carbs = 0.0;
  Split split = Split::train;
  bool added = false;
};

/// Every label event of `scenario` in chronological order, with the split its
/// present time t = event - 10 falls in.
std::vector<LabelEvent> label_events(const EventStream& stream, Scenario scenario, const StreamSplit& parts);

/// Expands label events into per-horizon examples for each split.
///
/// `stream` must be pre-processed and interpolated. Horizons that run past
/// the end of data, cross into a later split, lack a 6 h history, or fail the
/// interpolation filter are dropped. Inertial examples additionally require
/// no meal or bolus in (t, t + 10 + tau] besides the label event (and the
/// paired meal for bolus_with_carbs).
SplitDatasets extract(const EventStream& stream, Scenario scenario, ExampleClass example_class,
                      const StreamSplit& parts);

/// Event-count and label statistics for one group of events.
struct LabelStats {
  std::size_t count = 0;
  double min = 0.0;
  double max = 0.0;
  double median = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1)
};
LabelStats label_stats(std::vector<double> values);

struct SubjectStats {
  std::string subject_id;
  std::size_t carbs_all = 0;
  std::size_t carbs_no_bolus = 0;
  LabelStats carbs;  // over every meal
  std::size_t bolus_all = 0;
  std::size_t bolus_with_carbs = 0;
  LabelStats insulin;  // over every bolus
  std::vector<double> meal_values;
  std::vector<double> bolus_values;
};

/// Per-subject rows plus pooled totals for each named group of subjects.
struct DatasetStats {
  std::vector<SubjectStats> subjects;
  std::vector<SubjectStats> totals;
};

/// `groups` maps a total-row label to the subject ids it pools. An empty map
/// yields a single "Combined Total" row over every subject.
DatasetStats dataset_stats(const std::vector<EventStream>& streams,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& groups = {});
std::string render_meal_table(const DatasetStats& stats);
std::string render_bolus_table(const DatasetStats& stats);

/// Example counts keyed by horizon and split, plus totals over all horizons.
struct ExampleCounts {
  std::map<int, std::array<std::size_t, 3>> by_horizon;
  std::array<std::size_t, 3> totals{};
  std::size_t total() const noexcept { return totals[0] + totals[1] + totals[2]; }
};
ExampleCounts count_examples(const std::vector<SplitDatasets>& datasets);
std::string render_counts_table(std::string_view title, const ExampleCounts& counts);

/// Tab-separated text, one example per line. See docs/formats.md.
void write_examples(std::ostream& os, const std::vector<RecommendationExample>& examples);
std::vector<RecommendationExample> read_examples(std::istream& is);

}  // namespace carbrec
