#include <doctest.h>

#include <sstream>

#include "carbrec/error.hpp"
#include "support.hpp"

using namespace carbrec;
using testkit::flat_stream;
using testkit::put_bolus;
using testkit::put_meal;

namespace {

constexpr std::size_t kEvent = 3 * 288 + 144;  // day 3, 12:00

EventStream month() { return flat_stream(25 * 288); }

std::size_t count(const EventStream& s, Scenario sc, ExampleClass cls) {
  return testkit::all_examples(extract(s, sc, cls, split(s))).size();
}

}  // namespace

TEST_SUITE("examples") {

TEST_CASE("an isolated 40 g meal gives 13 inertial examples labelled 40") {
  auto s = month();
  put_meal(s, kEvent, 40.0);
  const auto ex = testkit::all_examples(extract(s, Scenario::carbs_all, ExampleClass::inertial, split(s)));
  REQUIRE(ex.size() == 13);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    CHECK(ex[i].label == 40.0);
    CHECK(ex[i].tau == kHorizons[i]);
    CHECK(ex[i].split == Split::train);
    CHECK(ex[i].inertial);
    CHECK(ex[i].event_step == kEvent);
    CHECK(ex[i].t_minute == s.minute_at(kEvent) - 10);
    CHECK(ex[i].future.size() == future_steps(ex[i].tau) * 3);
  }
}

TEST_CASE("a second meal 30 minutes later removes every inertial example") {
  auto s = month();
  put_meal(s, kEvent, 40.0);
  put_meal(s, kEvent + 6, 20.0);
  CHECK(count(s, Scenario::carbs_all, ExampleClass::inertial) == 13);  // the second meal has its own 13
  const auto ds = extract(s, Scenario::carbs_all, ExampleClass::inertial, split(s));
  for (const auto& e : testkit::all_examples(ds)) CHECK(e.event_step == kEvent + 6);
  const auto unr = testkit::all_examples(extract(s, Scenario::carbs_all, ExampleClass::unrestricted, split(s)));
  CHECK(std::count_if(unr.begin(), unr.end(), [](const auto& e) { return e.event_step == kEvent; }) == 13);
}

TEST_CASE("a bolus with its meal ten minutes later: Bolus+c inertial, not Bolus+-c inertial") {
  auto s = month();
  put_bolus(s, kEvent, 4.0, 40.0);
  put_meal(s, kEvent + 2, 40.0);
  CHECK(count(s, Scenario::bolus_all, ExampleClass::inertial) == 0);
  CHECK(count(s, Scenario::bolus_all, ExampleClass::unrestricted) == 13);
  const auto ex = testkit::all_examples(extract(s, Scenario::bolus_with_carbs, ExampleClass::inertial, split(s)));
  REQUIRE(ex.size() == 13);
  for (const auto& e : ex) {
    CHECK(e.label == 4.0);
    CHECK(e.planned_carbs == 40.0);
    // future starts at t + 5: the bolus is at index 1 and the meal at 3, both masked
    CHECK(e.future[1 * 3 + 1] == 0.0);
    CHECK(e.future[3 * 3 + 0] == 0.0);
  }
  // the meal itself is bolused, so it is not a Carbs-b event
  CHECK(count(s, Scenario::carbs_no_bolus, ExampleClass::unrestricted) == 0);
  CHECK(count(s, Scenario::carbs_all, ExampleClass::unrestricted) == 13);
}

TEST_CASE("dual boluses are not labels") {
  auto s = month();
  put_bolus(s, kEvent, 4.0, 40.0, BolusKind::dual);
  CHECK(count(s, Scenario::bolus_all, ExampleClass::unrestricted) == 0);
}

TEST_CASE("history and target come from the stream") {
  auto s = month();
  for (std::size_t i = 0; i < s.bgl.size(); ++i) s.bgl[i].value = 100.0 + static_cast<double>(i % 97);
  put_meal(s, kEvent, 40.0);
  put_bolus(s, kEvent - 30, 1.0);
  const auto ex = testkit::all_examples(extract(s, Scenario::carbs_all, ExampleClass::inertial, split(s)));
  REQUIRE_FALSE(ex.empty());
  const auto& e = ex.front();
  const std::size_t t = kEvent - 2;
  CHECK(e.history_at(71, Channel::bgl) == s.bgl[t].value);
  CHECK(e.history_at(0, Channel::bgl) == s.bgl[t - 71].value);
  CHECK(e.history_at(71 - 28, Channel::bolus) == 1.0);
  CHECK(e.history_at(5, Channel::basal) == 1.0);
  CHECK(e.target_bgl == s.bgl[t + future_steps(e.tau)].value);
  CHECK(e.future[1 * 3 + 0] == 0.0);  // the label meal is masked
}

TEST_CASE("examples never cross a split boundary") {
  auto s = month();
  // test split starts at day 15; t = 23:50 on day 14
  const std::size_t e = 15 * 288;
  put_meal(s, e, 40.0);
  const auto ds = extract(s, Scenario::carbs_all, ExampleClass::unrestricted, split(s));
  CHECK(ds[1].examples.empty());
  CHECK(ds[2].examples.empty());
  put_meal(s, e + 2, 30.0);  // t = 00:00 on day 15
  const auto ds2 = extract(s, Scenario::carbs_all, ExampleClass::unrestricted, split(s));
  CHECK(ds2[2].examples.size() == 13);
}

TEST_CASE("examples need six hours of history") {
  auto s = month();
  put_meal(s, 72, 40.0);  // t = 70
  put_meal(s, 300, 40.0);
  testkit::drop_glucose(s, {200});
  s.bgl.erase(s.bgl.begin() + 220, s.bgl.begin() + 240);  // 20-step hole before t = 298
  const auto ex = testkit::all_examples(extract(interpolate_gaps(s), Scenario::carbs_all, ExampleClass::unrestricted, split(s)));
  CHECK(ex.empty());
}

TEST_CASE("extraction oracle: every scenario and class on constructed streams") {
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const auto s = testkit::oracle_stream(seed);
    for (Scenario sc : kScenarios) {
      for (auto cls : {ExampleClass::inertial, ExampleClass::unrestricted}) {
        INFO("seed " << seed << " " << to_string(sc) << " " << to_string(cls));
        const auto got = extract(s, sc, cls, split(s));
        const auto want = testkit::brute_force_examples(s, sc, cls);
        CHECK(testkit::keys_of(got) == want.keys);
        CHECK(want.keys.size() > 20);
        for (const auto& e : testkit::all_examples(got)) {
          CHECK(e.planned_carbs == want.planned_carbs.at({static_cast<int>(e.split), e.event_step, e.tau}));
        }
      }
      const auto in = testkit::keys_of(extract(s, sc, ExampleClass::inertial, split(s)));
      const auto un = testkit::keys_of(extract(s, sc, ExampleClass::unrestricted, split(s)));
      CHECK(std::includes(un.begin(), un.end(), in.begin(), in.end()));
    }
  }
}

TEST_CASE("Bolus+c pairing: every example has its meal exactly ten minutes after the bolus") {
  const auto s = testkit::oracle_stream(5);
  const auto ex = testkit::all_examples(extract(s, Scenario::bolus_with_carbs, ExampleClass::unrestricted, split(s)));
  CHECK(ex.size() > 50);
  for (const auto& e : ex) {
    CHECK(s.meal[e.event_step + 2] > 0.0);
    CHECK(e.planned_carbs == s.meal[e.event_step + 2]);
    CHECK(e.future[3 * 3 + 0] == 0.0);
  }
}

TEST_CASE("label events carry split and values") {
  auto s = month();
  put_meal(s, kEvent, 40.0);
  put_meal(s, 20 * 288, 25.0);
  const auto ev = label_events(s, Scenario::carbs_all, split(s));
  REQUIRE(ev.size() == 2);
  CHECK(ev[0].split == Split::train);
  CHECK(ev[1].split == Split::test);
  CHECK(ev[1].value == 25.0);
}

TEST_CASE("label statistics") {
  const auto l = label_stats({30.0, 50.0});
  CHECK(l.count == 2);
  CHECK(l.mean == 40.0);
  CHECK(l.median == 40.0);
  CHECK(l.min == 30.0);
  CHECK(l.max == 50.0);
  CHECK(l.stddev == doctest::Approx(std::sqrt(200.0)));
  const auto odd = label_stats({5.0, 1.0, 3.0});
  CHECK(odd.median == 3.0);
  const auto none = label_stats({});
  CHECK(none.count == 0);
  CHECK(none.mean == 0.0);
}

TEST_CASE("dataset statistics count events per subject and pool groups") {
  auto a = flat_stream(400);
  a.subject_id = "a";
  put_meal(a, 100, 30.0);
  put_bolus(a, 198, 5.0, 50.0);
  put_meal(a, 200, 50.0);
  put_bolus(a, 300, 1.0);
  auto b = flat_stream(400);
  b.subject_id = "b";
  const auto st = dataset_stats({a, b}, {{"Group", {"a", "b"}}});
  REQUIRE(st.subjects.size() == 2);
  CHECK(st.subjects[0].carbs_all == 2);
  CHECK(st.subjects[0].carbs_no_bolus == 1);
  CHECK(st.subjects[0].bolus_all == 2);
  CHECK(st.subjects[0].bolus_with_carbs == 1);
  CHECK(st.subjects[0].carbs.mean == 40.0);
  CHECK(st.subjects[0].carbs.median == 40.0);
  CHECK(st.subjects[1].carbs_all == 0);
  CHECK(st.subjects[1].bolus_all == 0);
  REQUIRE(st.totals.size() == 1);
  CHECK(st.totals[0].subject_id == "Group");
  CHECK(st.totals[0].carbs_all == 2);
  CHECK(render_meal_table(st).find("Group") != std::string::npos);
  CHECK(dataset_stats({a}).totals[0].subject_id == "Combined Total");
}

TEST_CASE("example counts per horizon") {
  auto s = month();
  put_meal(s, kEvent, 40.0);
  put_meal(s, 16 * 288 + 100, 40.0);
  const auto c = count_examples({extract(s, Scenario::carbs_all, ExampleClass::inertial, split(s))});
  CHECK(c.totals[0] == 13);
  CHECK(c.totals[2] == 13);
  CHECK(c.total() == 26);
  CHECK(c.by_horizon.at(45)[0] == 1);
  CHECK(render_counts_table("x", c).find("all") != std::string::npos);
}

TEST_CASE("TSV round trip") {
  const auto s = testkit::oracle_stream(2);
  auto ex = testkit::all_examples(extract(s, Scenario::bolus_with_carbs, ExampleClass::unrestricted, split(s)));
  REQUIRE_FALSE(ex.empty());
  ex.front().tod_average = 3.25;
  std::stringstream ss;
  write_examples(ss, ex);
  const auto back = read_examples(ss);
  REQUIRE(back.size() == ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    CHECK(back[i].subject_id == ex[i].subject_id);
    CHECK(back[i].history == ex[i].history);
    CHECK(back[i].future == ex[i].future);
    CHECK(back[i].label == ex[i].label);
    CHECK(back[i].planned_carbs == ex[i].planned_carbs);
    CHECK(back[i].tod_average == ex[i].tod_average);
    CHECK(back[i].split == ex[i].split);
    CHECK(back[i].t_minute == ex[i].t_minute);
  }
  std::istringstream bad("s\tCarbsAll\ttrain\t1\t2\t37\n");
  CHECK_THROWS_AS(read_examples(bad), ParseError);
}

TEST_CASE("names parse back") {
  for (Scenario s : kScenarios) CHECK(parse_scenario(to_string(s)) == s);
  CHECK_FALSE(parse_scenario("Carbs").has_value());
  CHECK(parse_example_class("inertial") == ExampleClass::inertial);
  CHECK_FALSE(parse_example_class("all").has_value());
}

}  // TEST_SUITE
