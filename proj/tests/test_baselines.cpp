#include <doctest.h>

#include "carbrec/error.hpp"
#include "support.hpp"

using namespace carbrec;

namespace {

LabelEvent event_at(int hour, int minute, double value, int day = 0) {
  LabelEvent e;
  e.minute = day * 1440 + hour * 60 + minute;
  e.value = value;
  return e;
}

RecommendationExample acting_at(int hour, int minute) {
  RecommendationExample ex;
  ex.t_minute = hour * 60 + minute - 10;
  return ex;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("global mean") {
  const std::vector<LabelEvent> ev{event_at(8, 0, 30.0), event_at(12, 0, 50.0), event_at(19, 0, 70.0)};
  const auto m = fit_baseline(ev);
  CHECK(m.mu == 50.0);
  CHECK(predict(m, BaselineKind::global, acting_at(3, 0)) == 50.0);
  CHECK(m.count == 3);
}

TEST_CASE("time-of-day means with fallback to the global mean") {
  const std::vector<LabelEvent> ev{event_at(7, 0, 20.0), event_at(12, 0, 40.0)};
  const auto m = fit_baseline(ev);
  CHECK(m.mu == 30.0);
  CHECK(m.window_mean[1] == 20.0);
  CHECK(m.window_mean[2] == 40.0);
  // action time t + 10 = 08:30 falls in breakfast
  CHECK(predict(m, BaselineKind::tod, acting_at(8, 30)) == 20.0);
  CHECK(predict(m, BaselineKind::tod, acting_at(12, 5)) == 40.0);
  // no training events in the evening window
  CHECK(predict(m, BaselineKind::tod, acting_at(20, 0)) == 30.0);
}

TEST_CASE("a single event fills every window") {
  const std::vector<LabelEvent> ev{event_at(9, 0, 6.0)};
  const auto m = fit_baseline(ev);
  for (int h : {1, 7, 11, 15, 22}) CHECK(predict(m, BaselineKind::tod, acting_at(h, 0)) == 6.0);
}

TEST_CASE("the window is chosen by t + 10, not t") {
  const std::vector<LabelEvent> ev{event_at(5, 0, 10.0), event_at(7, 0, 50.0)};
  const auto m = fit_baseline(ev);
  // t = 05:55, action at 06:05
  RecommendationExample ex;
  ex.t_minute = 5 * 60 + 55;
  CHECK(predict(m, BaselineKind::tod, ex) == 50.0);
}

TEST_CASE("events count once each") {
  auto s = testkit::flat_stream(25 * 288);
  testkit::put_meal(s, 3 * 288 + 100, 30.0);
  testkit::put_meal(s, 4 * 288 + 100, 60.0);
  const auto parts = split(s);
  auto ev = label_events(s, Scenario::carbs_all, parts);
  const auto m = fit_baseline(ev);
  CHECK(m.mu == 45.0);
  auto ds = extract(s, Scenario::carbs_all, ExampleClass::unrestricted, parts);
  CHECK(ds[0].examples.size() == 26);
  attach_tod_average(ds[0].examples, m);
  for (const auto& e : ds[0].examples) CHECK(e.tod_average == 45.0);
}

TEST_CASE("fit errors") {
  CHECK_THROWS_AS(fit_baseline(std::vector<LabelEvent>{}), FitError);
  auto e = event_at(8, 0, 1.0);
  e.split = Split::valid;
  CHECK_THROWS_AS(fit_baseline(std::vector<LabelEvent>{e}), FitError);
}

TEST_CASE("oracle: 100 random event sets") {
  const auto failure = testkit::baseline_oracle(100, 2024);
  CHECK_MESSAGE(!failure.has_value(), failure.value_or(""));
}

}  // TEST_SUITE
