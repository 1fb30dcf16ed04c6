#include "carbrec/examples.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "carbrec/error.hpp"

namespace carbrec {

std::string_view to_string(Scenario s) {
  switch (s) {
    case Scenario::carbs_all: return "CarbsAll";
    case Scenario::carbs_no_bolus: return "CarbsNoBolus";
    case Scenario::bolus_all: return "BolusAll";
    case Scenario::bolus_with_carbs: return "BolusWithCarbs";
  }
  return "?";
}

std::optional<Scenario> parse_scenario(std::string_view name) {
  for (Scenario s : kScenarios) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

std::string scenario_names() {
  std::string out;
  for (Scenario s : kScenarios) {
    if (!out.empty()) out += ", ";
    out += to_string(s);
  }
  return out;
}

std::string_view to_string(ExampleClass c) { return c == ExampleClass::inertial ? "inertial" : "unrestricted"; }

std::optional<ExampleClass> parse_example_class(std::string_view name) {
  if (name == "inertial") return ExampleClass::inertial;
  if (name == "unrestricted") return ExampleClass::unrestricted;
  return std::nullopt;
}

std::vector<LabelEvent> label_events(const EventStream& stream, Scenario scenario, const StreamSplit& parts) {
  std::vector<LabelEvent> out;
  const std::size_t n = stream.steps();
  for (std::size_t e = kMealOffsetSteps; e < n; ++e) {
    const std::int64_t t_minute = stream.minute_at(e) - 10;
    if (!parts.contains(t_minute)) continue;
    LabelEvent ev{e, stream.minute_at(e), 0.0, 0.0, parts.split_of(t_minute), false};
    switch (scenario) {
      case Scenario::carbs_all:
      case Scenario::carbs_no_bolus:
        if (!(stream.meal[e] > 0.0)) continue;
        if (scenario == Scenario::carbs_no_bolus && stream.bolus[e - kMealOffsetSteps] > 0.0) continue;
        ev.value = stream.meal[e];
        ev.added = stream.meal_origin[e] == MealOrigin::added;
        break;
      case Scenario::bolus_all:
      case Scenario::bolus_with_carbs:
        if (stream.bolus_kind[e] != BolusKind::regular) continue;
        if (scenario == Scenario::bolus_with_carbs) {
          if (e + kMealOffsetSteps >= n || !(stream.meal[e + kMealOffsetSteps] > 0.0)) continue;
          ev.planned_carbs = stream.meal[e + kMealOffsetSteps];
        }
        ev.value = stream.bolus[e];
        break;
    }
    out.push_back(ev);
  }
  return out;
}

SplitDatasets extract(const EventStream& stream, Scenario scenario, ExampleClass example_class,
                      const StreamSplit& parts) {
  SplitDatasets out;
  for (std::size_t s = 0; s < 3; ++s) out[s] = {scenario, example_class, static_cast<Split>(s), {}};

  const GlucoseGrid grid = glucose_grid(stream);
  const std::size_t n = stream.steps();
  const bool carbs = is_carb_scenario(scenario);

  for (const LabelEvent& ev : label_events(stream, scenario, parts)) {
    const std::size_t e = ev.step;
    const std::size_t t = e - kMealOffsetSteps;
    if (t + 1 < kHistorySteps) continue;
    bool history_ok = true;
    for (std::size_t k = t + 1 - kHistorySteps; k <= t; ++k) history_ok = history_ok && grid.available(k);
    if (!history_ok) continue;

    const std::size_t paired = scenario == Scenario::bolus_with_carbs ? e + kMealOffsetSteps : n;
    for (int tau : kHorizons) {
      const std::size_t steps = future_steps(tau);
      const std::size_t target = t + steps;
      if (target >= n) break;
      if (parts.split_of(stream.minute_at(target)) != ev.split || !parts.contains(stream.minute_at(target))) continue;
      if (!interpolation_filter(grid, t, tau)) continue;

      bool clear = true;
      for (std::size_t k = t + 1; k <= target && clear; ++k) {
        const bool meal = stream.meal[k] > 0.0 && !(carbs && k == e) && k != paired;
        const bool bolus = stream.bolus[k] > 0.0 && !(!carbs && k == e);
        clear = !meal && !bolus;
      }
      if (example_class == ExampleClass::inertial && !clear) continue;

      RecommendationExample ex;
      ex.subject_id = stream.subject_id;
      ex.scenario = scenario;
      ex.split = ev.split;
      ex.event_step = e;
      ex.t_minute = stream.minute_at(t);
      ex.tau = tau;
      for (std::size_t k = 0; k < kHistorySteps; ++k) {
        const std::size_t i = t + 1 - kHistorySteps + k;
        ex.history[k * 4 + 0] = grid.value[i];
        ex.history[k * 4 + 1] = stream.meal[i];
        ex.history[k * 4 + 2] = stream.bolus[i];
        ex.history[k * 4 + 3] = stream.basal[i];
      }
      ex.future.resize(steps * kFutureChannels);
      for (std::size_t k = 0; k < steps; ++k) {
        const std::size_t i = t + 1 + k;
        double meal = stream.meal[i];
        double bolus = stream.bolus[i];
        if (i == e) (carbs ? meal : bolus) = 0.0;
        if (i == paired) meal = 0.0;
        ex.future[k * 3 + 0] = meal;
        ex.future[k * 3 + 1] = bolus;
        ex.future[k * 3 + 2] = stream.basal[i];
      }
      ex.target_bgl = grid.value[target];
      ex.planned_carbs = ev.planned_carbs;
      ex.label = ev.value;
      ex.inertial = clear;
      ex.label_added = ev.added;
      out[static_cast<std::size_t>(ev.split)].examples.push_back(std::move(ex));
    }
  }
  return out;
}

LabelStats label_stats(std::vector<double> values) {
  LabelStats s;
  s.count = values.size();
  if (values.empty()) return s;
  std::sort(values.begin(), values.end());
  s.min = values.front();
  s.max = values.back();
  const std::size_t mid = values.size() / 2;
  s.median = values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

namespace {

SubjectStats subject_stats(const EventStream& stream) {
  SubjectStats s;
  s.subject_id = stream.subject_id;
  const std::size_t n = stream.steps();
  for (std::size_t i = 0; i < n; ++i) {
    if (stream.meal[i] > 0.0) {
      ++s.carbs_all;
      s.meal_values.push_back(stream.meal[i]);
      if (i < kMealOffsetSteps || !(stream.bolus[i - kMealOffsetSteps] > 0.0)) ++s.carbs_no_bolus;
    }
    if (stream.bolus[i] > 0.0) {
      ++s.bolus_all;
      s.bolus_values.push_back(stream.bolus[i]);
      if (i + kMealOffsetSteps < n && stream.meal[i + kMealOffsetSteps] > 0.0) ++s.bolus_with_carbs;
    }
  }
  s.carbs = label_stats(s.meal_values);
  s.insulin = label_stats(s.bolus_values);
  return s;
}

SubjectStats pool(std::string label, const std::vector<const SubjectStats*>& parts) {
  SubjectStats t;
  t.subject_id = std::move(label);
  for (const auto* p : parts) {
    t.carbs_all += p->carbs_all;
    t.carbs_no_bolus += p->carbs_no_bolus;
    t.bolus_all += p->bolus_all;
    t.bolus_with_carbs += p->bolus_with_carbs;
    t.meal_values.insert(t.meal_values.end(), p->meal_values.begin(), p->meal_values.end());
    t.bolus_values.insert(t.bolus_values.end(), p->bolus_values.begin(), p->bolus_values.end());
  }
  t.carbs = label_stats(t.meal_values);
  t.insulin = label_stats(t.bolus_values);
  return t;
}

std::string fixed1(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(1) << v;
  return os.str();
}

std::string render_table(const DatasetStats& stats, bool meals) {
  std::ostringstream os;
  const char* a = meals ? "Carbs(+-b)" : "Bolus(+-c)";
  const char* b = meals ? "Carbs(-b)" : "Bolus(+c)";
  os << std::left << std::setw(16) << "Subject" << std::right << std::setw(12) << a << std::setw(12) << b
     << std::setw(9) << "Min" << std::setw(9) << "Max" << std::setw(9) << "Median" << std::setw(9) << "Average"
     << std::setw(9) << "StdDev" << '\n';
  auto row = [&](const SubjectStats& s) {
    const LabelStats& l = meals ? s.carbs : s.insulin;
    os << std::left << std::setw(16) << s.subject_id << std::right << std::setw(12)
       << (meals ? s.carbs_all : s.bolus_all) << std::setw(12) << (meals ? s.carbs_no_bolus : s.bolus_with_carbs)
       << std::setw(9) << fixed1(l.min) << std::setw(9) << fixed1(l.max) << std::setw(9) << fixed1(l.median)
       << std::setw(9) << fixed1(l.mean) << std::setw(9) << fixed1(l.stddev) << '\n';
  };
  for (const auto& s : stats.subjects) row(s);
  for (const auto& s : stats.totals) row(s);
  return os.str();
}

}  // namespace

DatasetStats dataset_stats(const std::vector<EventStream>& streams,
                           const std::vector<std::pair<std::string, std::vector<std::string>>>& groups) {
  DatasetStats out;
  for (const auto& s : streams) out.subjects.push_back(subject_stats(s));
  if (groups.empty()) {
    std::vector<const SubjectStats*> all;
    for (const auto& s : out.subjects) all.push_back(&s);
    out.totals.push_back(pool("Combined Total", all));
    return out;
  }
  for (const auto& [label, ids] : groups) {
    std::vector<const SubjectStats*> members;
    for (const auto& s : out.subjects) {
      if (std::find(ids.begin(), ids.end(), s.subject_id) != ids.end()) members.push_back(&s);
    }
    out.totals.push_back(pool(label, members));
  }
  return out;
}

std::string render_meal_table(const DatasetStats& stats) { return render_table(stats, true); }
std::string render_bolus_table(const DatasetStats& stats) { return render_table(stats, false); }

ExampleCounts count_examples(const std::vector<SplitDatasets>& datasets) {
  ExampleCounts c;
  for (int tau : kHorizons) c.by_horizon[tau] = {0, 0, 0};
  for (const auto& d : datasets) {
    for (std::size_t s = 0; s < 3; ++s) {
      for (const auto& ex : d[s].examples) {
        ++c.by_horizon[ex.tau][s];
        ++c.totals[s];
      }
    }
  }
  return c;
}

std::string render_counts_table(std::string_view title, const ExampleCounts& counts) {
  std::ostringstream os;
  os << title << '\n';
  os << std::left << std::setw(8) << "tau" << std::right << std::setw(10) << "train" << std::setw(10) << "valid"
     << std::setw(10) << "test" << std::setw(10) << "total" << '\n';
  for (const auto& [tau, c] : counts.by_horizon) {
    os << std::left << std::setw(8) << tau << std::right << std::setw(10) << c[0] << std::setw(10) << c[1]
       << std::setw(10) << c[2] << std::setw(10) << c[0] + c[1] + c[2] << '\n';
  }
  os << std::left << std::setw(8) << "all" << std::right << std::setw(10) << counts.totals[0] << std::setw(10)
     << counts.totals[1] << std::setw(10) << counts.totals[2] << std::setw(10) << counts.total() << '\n';
  return os.str();
}

// Columns: subject scenario split event_step t_minute tau target tod planned
// label inertial added history(288, comma-separated) future(comma-separated)
namespace {

void put_number(std::ostream& os, double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  os.write(buf, r.ptr - buf);
}

template <class It>
void put_list(std::ostream& os, It begin, It end) {
  for (It it = begin; it != end; ++it) {
    if (it != begin) os << ',';
    put_number(os, *it);
  }
}

double get_number(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size()) {
    throw ParseError(where, "not a number: '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split_on(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

void write_examples(std::ostream& os, const std::vector<RecommendationExample>& examples) {
  os << "#subject\tscenario\tsplit\tevent_step\tt_minute\ttau\ttarget_bgl\ttod_average\tplanned_carbs\tlabel\t"
        "inertial\tlabel_added\thistory\tfuture\n";
  for (const auto& ex : examples) {
    os << ex.subject_id << '\t' << to_string(ex.scenario) << '\t' << to_string(ex.split) << '\t' << ex.event_step
       << '\t' << ex.t_minute << '\t' << ex.tau << '\t';
    put_number(os, ex.target_bgl);
    os << '\t';
    put_number(os, ex.tod_average);
    os << '\t';
    put_number(os, ex.planned_carbs);
    os << '\t';
    put_number(os, ex.label);
    os << '\t' << (ex.inertial ? 1 : 0) << '\t' << (ex.label_added ? 1 : 0) << '\t';
    put_list(os, ex.history.begin(), ex.history.end());
    os << '\t';
    put_list(os, ex.future.begin(), ex.future.end());
    os << '\n';
  }
}

std::vector<RecommendationExample> read_examples(std::istream& is) {
  std::vector<RecommendationExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = "line " + std::to_string(line_no);
    const auto f = split_on(line, '\t');
    if (f.size() != 14) throw ParseError(where, "expected 14 fields, got " + std::to_string(f.size()));
    RecommendationExample ex;
    ex.subject_id = std::string(f[0]);
    const auto sc = parse_scenario(f[1]);
    if (!sc) throw ParseError(where, "unknown scenario '" + std::string(f[1]) + "'");
    ex.scenario = *sc;
    if (f[2] == "train") ex.split = Split::train;
    else if (f[2] == "valid") ex.split = Split::valid;
    else if (f[2] == "test") ex.split = Split::test;
    else throw ParseError(where, "unknown split '" + std::string(f[2]) + "'");
    ex.event_step = static_cast<std::size_t>(get_number(f[3], where));
    ex.t_minute = static_cast<std::int64_t>(get_number(f[4], where));
    ex.tau = static_cast<int>(get_number(f[5], where));
    if (!is_valid_horizon(ex.tau)) throw ParseError(where, "invalid horizon");
    ex.target_bgl = get_number(f[6], where);
    ex.tod_average = get_number(f[7], where);
    ex.planned_carbs = get_number(f[8], where);
    ex.label = get_number(f[9], where);
    ex.inertial = f[10] == "1";
    ex.label_added = f[11] == "1";
    const auto hist = split_on(f[12], ',');
    if (hist.size() != ex.history.size()) throw ParseError(where, "history must hold 288 values");
    for (std::size_t i = 0; i < hist.size(); ++i) ex.history[i] = get_number(hist[i], where);
    const auto fut = split_on(f[13], ',');
    if (fut.size() != ex.future_length() * kFutureChannels) throw ParseError(where, "future block has the wrong length");
    for (const auto& v : fut) ex.future.push_back(get_number(v, where));
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace carbrec
