#include "carbrec/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "carbrec/error.hpp"

namespace carbrec {

namespace {

constexpr std::int64_t kDaySeconds = 86400;
constexpr std::int64_t kStepSeconds = kStepMinutes * 60;

std::int64_t floor_div(std::int64_t a, std::int64_t b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }

bool parse_int(std::string_view s, int& out) {
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::optional<double> parse_double(std::string_view s) {
  s = trim(s);
  double v = 0.0;
  auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc{} || r.ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string number(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

// Accumulates raw records in seconds and lays them out on a grid.
struct GridBuilder {
  struct Glucose {
    std::int64_t sec;
    double value;
  };
  struct Bolus {
    std::int64_t sec;
    double dose;
    BolusKind kind;
    double bw;
  };
  struct Meal {
    std::int64_t sec;
    double carbs;
    MealOrigin origin;
  };
  struct Rate {
    std::int64_t begin;
    std::int64_t end;  // exclusive; INT64_MAX for scheduled basal
    double value;
  };

  std::vector<Glucose> glucose;
  std::vector<Bolus> boluses;
  std::vector<Meal> meals;
  std::vector<Rate> basal;
  std::vector<Rate> temp_basal;
  std::int64_t lo = INT64_MAX;
  std::int64_t hi = INT64_MIN;

  void touch(std::int64_t sec) {
    lo = std::min(lo, sec);
    hi = std::max(hi, sec);
  }

  EventStream build(const std::string& subject_id) {
    if (glucose.empty()) throw EmptyStreamError("subject '" + subject_id + "' has no glucose records");
    EventStream s;
    s.subject_id = subject_id;
    const std::int64_t first = snap_to_grid_seconds(lo) * 60;
    const std::int64_t last = snap_to_grid_seconds(hi) * 60;
    const std::int64_t day0 = floor_div(first, kDaySeconds);
    s.epoch = std::chrono::sys_days{std::chrono::days{day0}};
    const std::int64_t epoch_sec = day0 * kDaySeconds;
    s.start_minute = (first - epoch_sec) / 60;
    s.resize(static_cast<std::size_t>((last - first) / kStepSeconds + 1));
    auto step_at = [&](std::int64_t sec) {
      return static_cast<std::size_t>((snap_to_grid_seconds(sec) * 60 - first) / kStepSeconds);
    };

    std::map<std::size_t, double> bgl;
    for (const auto& g : glucose) bgl[step_at(g.sec)] = g.value;
    for (const auto& [step, v] : bgl) s.bgl.push_back({s.minute_at(step), v, false});

    for (const auto& b : boluses) {
      const auto i = step_at(b.sec);
      s.bolus[i] += b.dose;
      s.bw_carb_input[i] += b.bw;
      if (b.dose > 0.0 && s.bolus_kind[i] != BolusKind::dual) s.bolus_kind[i] = b.kind;
    }
    for (const auto& m : meals) {
      const auto i = step_at(m.sec);
      s.meal[i] += m.carbs;
      if (m.carbs > 0.0 && s.meal_origin[i] != MealOrigin::self_reported) s.meal_origin[i] = m.origin;
    }

    std::stable_sort(basal.begin(), basal.end(), [](const Rate& a, const Rate& b) { return a.begin < b.begin; });
    std::size_t k = 0;
    double rate = 0.0;
    for (std::size_t i = 0; i < s.steps(); ++i) {
      const std::int64_t sec = first + static_cast<std::int64_t>(i) * kStepSeconds;
      while (k < basal.size() && basal[k].begin <= sec) rate = basal[k++].value;
      double v = rate;
      for (const auto& t : temp_basal) {
        if (t.begin <= sec && sec < t.end) v = t.value;
      }
      s.basal[i] = v;
    }
    s.validate();
    return s;
  }
};

}  // namespace

std::string_view to_string(FileFormat f) { return f == FileFormat::canonical_csv ? "csv" : "ohio-xml"; }

std::optional<FileFormat> parse_format(std::string_view name) {
  if (name == "csv" || name == "canonical-csv") return FileFormat::canonical_csv;
  if (name == "ohio-xml" || name == "xml") return FileFormat::ohio_xml;
  return std::nullopt;
}

std::optional<std::int64_t> parse_timestamp_seconds(std::string_view text) {
  text = trim(text);
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
  std::string_view date, time;
  const auto sep = text.find_first_of("T ");
  if (sep == std::string_view::npos) return std::nullopt;
  date = text.substr(0, sep);
  time = text.substr(sep + 1);
  if (date.size() == 10 && date[4] == '-' && date[7] == '-') {
    if (!parse_int(date.substr(0, 4), y) || !parse_int(date.substr(5, 2), mo) || !parse_int(date.substr(8, 2), d)) {
      return std::nullopt;
    }
  } else if (date.size() == 10 && date[2] == '-' && date[5] == '-') {
    if (!parse_int(date.substr(0, 2), d) || !parse_int(date.substr(3, 2), mo) || !parse_int(date.substr(6, 4), y)) {
      return std::nullopt;
    }
  } else {
    return std::nullopt;
  }
  if (time.size() != 5 && time.size() != 8) return std::nullopt;
  if (time[2] != ':' || !parse_int(time.substr(0, 2), h) || !parse_int(time.substr(3, 2), mi)) return std::nullopt;
  if (time.size() == 8 && (time[5] != ':' || !parse_int(time.substr(6, 2), sec))) return std::nullopt;
  const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                        std::chrono::day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || sec > 59) return std::nullopt;
  const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
  return static_cast<std::int64_t>(days) * kDaySeconds + h * 3600 + mi * 60 + sec;
}

std::string format_timestamp(std::int64_t unix_sec) {
  const std::int64_t day = floor_div(unix_sec, kDaySeconds);
  const std::int64_t rem = unix_sec - day * kDaySeconds;
  const std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                static_cast<int>(rem % 3600 / 60), static_cast<int>(rem % 60));
  return buf;
}

std::int64_t unix_seconds(const EventStream& stream, std::int64_t minute) {
  return static_cast<std::int64_t>(stream.epoch.time_since_epoch().count()) * kDaySeconds + minute * 60;
}

namespace {

constexpr std::array<std::string_view, 8> kCsvColumns{"timestamp", "bgl",           "basal",
                                                      "bolus",     "bolus_kind",    "bw_carb_input",
                                                      "meal_self_reported", "meal_carbs"};

}  // namespace

Parsed read_canonical_csv(std::istream& is, const std::string& subject_id) {
  Parsed out;
  GridBuilder gb;
  std::string line;
  if (!std::getline(is, line)) throw ParseError("line 1", "missing header");
  const auto header = split_csv(line);
  std::array<std::size_t, 8> col{};
  for (std::size_t c = 0; c < kCsvColumns.size(); ++c) {
    const auto it = std::find(header.begin(), header.end(), kCsvColumns[c]);
    if (it == header.end()) throw ParseError("line 1", "missing column '" + std::string(kCsvColumns[c]) + "'");
    col[c] = static_cast<std::size_t>(it - header.begin());
  }
  for (const auto& h : header) {
    if (std::find(kCsvColumns.begin(), kCsvColumns.end(), h) == kCsvColumns.end()) {
      out.warnings.push_back("ignoring unknown column '" + std::string(h) + "'");
    }
  }

  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = "line " + std::to_string(line_no);
    const auto f = split_csv(line);
    if (f.size() != header.size()) {
      throw ParseError(where, "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    }
    const auto sec = parse_timestamp_seconds(f[col[0]]);
    if (!sec) throw ParseError(where, "bad timestamp '" + std::string(f[col[0]]) + "'");
    gb.touch(*sec);
    auto num = [&](std::size_t c, const char* name) -> std::optional<double> {
      const auto cell = f[col[c]];
      if (cell.empty()) return std::nullopt;
      const auto v = parse_double(cell);
      if (!v || *v < 0.0) throw ParseError(where, std::string("bad ") + name + " '" + std::string(cell) + "'");
      return v;
    };
    if (auto v = num(1, "bgl")) {
      if (!(*v > 0.0)) throw ParseError(where, "glucose must be positive");
      gb.glucose.push_back({*sec, *v});
    }
    if (auto v = num(2, "basal")) gb.basal.push_back({*sec, INT64_MAX, *v});
    const auto dose = num(3, "bolus");
    const auto bw = num(5, "bw_carb_input");
    const auto kind_cell = f[col[4]];
    BolusKind kind = BolusKind::regular;
    if (kind_cell == "dual") kind = BolusKind::dual;
    else if (!kind_cell.empty() && kind_cell != "regular") {
      throw ParseError(where, "bad bolus_kind '" + std::string(kind_cell) + "'");
    }
    if (dose || bw) gb.boluses.push_back({*sec, dose.value_or(0.0), kind, bw.value_or(0.0)});
    if (auto carbs = num(7, "meal_carbs")) {
      const auto sr = f[col[6]];
      if (!sr.empty() && sr != "0" && sr != "1") throw ParseError(where, "meal_self_reported must be 0 or 1");
      gb.meals.push_back({*sec, *carbs, sr == "0" ? MealOrigin::added : MealOrigin::self_reported});
    }
  }
  out.stream = gb.build(subject_id);
  return out;
}

void write_canonical_csv(std::ostream& os, const EventStream& s) {
  os << "timestamp,bgl,basal,bolus,bolus_kind,bw_carb_input,meal_self_reported,meal_carbs\n";
  std::size_t g = 0;
  for (std::size_t i = 0; i < s.steps(); ++i) {
    const std::int64_t minute = s.minute_at(i);
    while (g < s.bgl.size() && s.bgl[g].minute < minute) ++g;
    os << format_timestamp(unix_seconds(s, minute)) << ',';
    if (g < s.bgl.size() && s.bgl[g].minute == minute && !s.bgl[g].interpolated) os << number(s.bgl[g].value);
    os << ',' << number(s.basal[i]) << ',';
    if (s.bolus[i] > 0.0) os << number(s.bolus[i]) << ',' << to_string(s.bolus_kind[i]);
    else os << ',';
    os << ',';
    if (s.bw_carb_input[i] > 0.0) os << number(s.bw_carb_input[i]);
    os << ',';
    if (s.meal[i] > 0.0) os << (s.meal_origin[i] == MealOrigin::added ? '0' : '1') << ',' << number(s.meal[i]);
    else os << ',';
    os << '\n';
  }
}

namespace {

// Adds the events of one XML document to `gb` and returns its patient id.
std::string collect_ohio(std::istream& is, const std::string& subject_id, GridBuilder& gb, Parsed& out) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_xml(is, tree);
  } catch (const pt::xml_parser_error& e) {
    throw ParseError("line " + std::to_string(e.line()), e.message());
  }
  const auto root = tree.get_child_optional("patient");
  if (!root) throw ParseError("xml", "missing <patient> root element");
  std::string id = root->get<std::string>("<xmlattr>.id", subject_id);
  if (id.empty()) id = subject_id;

  for (const auto& [name, section] : *root) {
    if (name == "<xmlattr>") continue;
    const bool known = name == "glucose_level" || name == "basal" || name == "temp_basal" || name == "bolus" ||
                       name == "meal";
    if (!known) {
      out.warnings.push_back("ignoring element <" + name + ">");
      continue;
    }
    std::size_t index = 0;
    for (const auto& [ename, ev] : section) {
      if (ename != "event") continue;
      const std::string where = name + "/event[" + std::to_string(index++) + "]";
      auto attr = [&](const char* key) { return ev.get_optional<std::string>(std::string("<xmlattr>.") + key); };
      auto time = [&](const char* key) -> std::optional<std::int64_t> {
        const auto v = attr(key);
        if (!v) return std::nullopt;
        const auto t = parse_timestamp_seconds(*v);
        if (!t) throw ParseError(where, std::string("bad ") + key + " '" + *v + "'");
        return t;
      };
      auto value = [&](const char* key, bool required) -> double {
        const auto v = attr(key);
        if (!v) {
          if (required) throw ParseError(where, std::string("missing ") + key);
          return 0.0;
        }
        const auto d = parse_double(*v);
        if (!d || *d < 0.0) throw ParseError(where, std::string("bad ") + key + " '" + *v + "'");
        return *d;
      };
      auto when = time("ts");
      if (!when) when = time("ts_begin");
      if (!when) throw ParseError(where, "missing timestamp");
      gb.touch(*when);
      if (name == "glucose_level") {
        const double v = value("value", true);
        if (!(v > 0.0)) throw ParseError(where, "glucose must be positive");
        gb.glucose.push_back({*when, v});
      } else if (name == "basal") {
        gb.basal.push_back({*when, INT64_MAX, value("value", true)});
      } else if (name == "temp_basal") {
        const auto end = time("ts_end");
        if (!end) throw ParseError(where, "missing ts_end");
        gb.temp_basal.push_back({*when, *end, value("value", true)});
      } else if (name == "bolus") {
        const std::string type = attr("type").value_or("normal");
        const BolusKind kind = type.find("dual") != std::string::npos || type.find("square") != std::string::npos
                                   ? BolusKind::dual
                                   : BolusKind::regular;
        gb.boluses.push_back({*when, value("dose", true), kind, value("bwz_carb_input", false)});
      } else {
        gb.meals.push_back({*when, value("carbs", true), MealOrigin::self_reported});
      }
    }
  }
  return id;
}

}  // namespace

Parsed read_ohio_xml(std::istream& is, const std::string& subject_id) {
  Parsed out;
  GridBuilder gb;
  const std::string id = collect_ohio(is, subject_id, gb, out);
  out.stream = gb.build(id);
  return out;
}

Parsed read_ohio_xml_files(const std::vector<std::string>& paths) {
  if (paths.empty()) throw PreconditionError("no XML files to merge");
  Parsed out;
  GridBuilder gb;
  std::string id;
  for (const auto& p : paths) {
    std::ifstream in(p);
    if (!in) throw ParseError(p, "cannot open file");
    const std::string stem = std::filesystem::path(p).stem().string();
    std::string this_id;
    try {
      this_id = collect_ohio(in, stem, gb, out);
    } catch (const ParseError& e) {
      throw ParseError(p, e.what());
    }
    if (!id.empty() && this_id != id) throw ParseError(p, "patient '" + this_id + "' differs from '" + id + "'");
    id = this_id;
  }
  out.stream = gb.build(id);
  return out;
}

Parsed parse_subject_file(const std::string& path, FileFormat format) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  const std::string stem = std::filesystem::path(path).stem().string();
  return format == FileFormat::canonical_csv ? read_canonical_csv(is, stem) : read_ohio_xml(is, stem);
}

void write_canonical_csv_file(const std::string& path, const EventStream& stream) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  write_canonical_csv(os, stream);
  if (!os) throw Error("write to '" + path + "' failed");
}

}  // namespace carbrec
