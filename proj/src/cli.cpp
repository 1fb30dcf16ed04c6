#include "carbrec/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "carbrec/config.hpp"
#include "carbrec/error.hpp"
#include "carbrec/ingest.hpp"
#include "carbrec/kernels.hpp"
#include "carbrec/preprocess.hpp"
#include "carbrec/service.hpp"
#include "carbrec/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace carbrec {

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

// A name that is not one of a fixed set (scenario, class, architecture).
class NameError : public ConfigError {
 public:
  NameError(std::string what, std::vector<std::string> valid)
      : ConfigError(std::move(what)), valid(std::move(valid)) {}
  std::vector<std::string> valid;
};

class NoCheckpointsError : public Error {
 public:
  using Error::Error;
};

std::vector<std::string> all_scenario_names() {
  std::vector<std::string> v;
  for (Scenario s : kScenarios) v.emplace_back(to_string(s));
  return v;
}

Scenario scenario_arg(const std::string& name) {
  if (auto s = parse_scenario(name)) return *s;
  throw NameError("unknown scenario '" + name + "' (valid: " + scenario_names() + ")", all_scenario_names());
}

ExampleClass class_arg(const std::string& name) {
  if (auto c = parse_example_class(name)) return *c;
  throw NameError("unknown example class '" + name + "'", {"inertial", "unrestricted"});
}

Architecture arch_arg(const std::string& name) {
  if (auto a = parse_architecture(name)) return *a;
  throw NameError("unknown architecture '" + name + "'", {"lstm", "nbeats"});
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw PreconditionError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json read_json_file(const fs::path& p) {
  try {
    return json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

// Output directory whose files are only rewritten when their bytes change.
// manifest.json maps every file to its content hash.
class ArtifactDir {
 public:
  explicit ArtifactDir(fs::path dir) : dir_(std::move(dir)) {
    fs::create_directories(dir_);
    if (fs::exists(dir_ / "manifest.json")) {
      try {
        manifest_ = json::parse(read_file(dir_ / "manifest.json"));
      } catch (const json::parse_error&) {
        manifest_ = json::object();
      }
      if (!manifest_.is_object()) manifest_ = json::object();
    }
  }

  fs::path write(const std::string& name, const std::string& bytes) {
    const fs::path p = dir_ / name;
    const std::string h = content_hash(bytes);
    if (!(fs::exists(p) && manifest_.value(name, std::string()) == h && read_file(p) == bytes)) {
      std::ofstream os(p, std::ios::binary | std::ios::trunc);
      os << bytes;
      if (!os) throw PreconditionError("cannot write " + p.string());
    }
    manifest_[name] = h;
    return p;
  }

  ~ArtifactDir() {
    std::ofstream os(dir_ / "manifest.json", std::ios::trunc);
    os << manifest_.dump(2) << '\n';
  }

  const fs::path& path() const { return dir_; }

 private:
  fs::path dir_;
  json manifest_ = json::object();
};

// A directory of subject files, or a single file.
std::vector<EventStream> load_streams(const std::string& dir, std::ostream& out) {
  std::vector<fs::path> files;
  if (fs::is_regular_file(dir)) {
    files.push_back(dir);
  } else if (fs::is_directory(dir)) {
    for (const auto& e : fs::directory_iterator(dir)) {
      const auto ext = e.path().extension();
      if (e.is_regular_file() && (ext == ".csv" || ext == ".xml")) files.push_back(e.path());
    }
  } else {
    throw PreconditionError("no such file or directory: " + dir);
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw PreconditionError("no .csv or .xml subject files in " + dir);
  std::vector<EventStream> streams;
  for (const auto& f : files) {
    auto parsed = parse_subject_file(f.string(), f.extension() == ".xml" ? FileFormat::ohio_xml : FileFormat::canonical_csv);
    for (const auto& w : parsed.warnings) out << "warning: " << f.filename().string() << ": " << w << '\n';
    streams.push_back(std::move(parsed.stream));
  }
  return streams;
}

std::string csv_bytes(const EventStream& s) {
  std::ostringstream os;
  write_canonical_csv(os, s);
  return os.str();
}

std::vector<SubjectData> prepare_all(const std::vector<EventStream>& streams, Scenario scenario, ExampleClass cls,
                                     std::ostream& out) {
  std::vector<SubjectData> subjects;
  for (const auto& s : streams) {
    try {
      subjects.push_back(prepare_subject(s, scenario, cls));
    } catch (const FitError& e) {
      out << "warning: skipping " << s.subject_id << ": " << e.what() << '\n';
    } catch (const SplitError& e) {
      out << "warning: skipping " << s.subject_id << ": " << e.what() << '\n';
    }
  }
  if (subjects.empty()) throw PreconditionError("no subject has usable " + std::string(to_string(scenario)) + " data");
  return subjects;
}

// {"CarbsAll": {"exclude": [...]}, "CarbsNoBolus": {"include": [...]}, ...}
void apply_exclusions(TrainConfig& cfg, const fs::path& file) {
  const json j = read_json_file(file);
  std::vector<std::string> errors;
  ConfigReader top(j, file.filename().string(), errors);
  for (Scenario s : kScenarios) {
    const auto* node = top.child(std::string(to_string(s)));
    if (!node) continue;
    ConfigReader r(*node, top.path(std::string(to_string(s))), errors);
    std::set<std::string> exclude, include;
    r.get("exclude", exclude);
    r.get("include", include);
    r.finish();
    if (s == cfg.scenario) {
      cfg.exclude = exclude;
      cfg.include = include;
    }
  }
  top.finish();
  throw_if_errors(errors, "exclusions");
}

std::string checkpoint_name(const ModelCheckpoint& c) {
  return c.subject_id + "." + std::string(to_string(c.scenario)) + "." + std::string(to_string(c.example_class)) +
         "." + std::string(to_string(c.model.architecture)) + ".seed" + std::to_string(c.seed) + ".ckpt";
}

// ---- subcommands ----

struct SynthArgs {
  std::string out;
  std::string config;
  std::size_t subjects = 4;
  int days = 40;
};

void cmd_synth(const SynthArgs& a, std::uint64_t seed, std::ostream& out) {
  std::vector<SyntheticConfig> configs;
  if (!a.config.empty()) {
    const json j = read_json_file(a.config);
    if (j.is_array()) {
      for (const auto& c : j) configs.push_back(SyntheticConfig::from_json(c));
    } else {
      configs.push_back(SyntheticConfig::from_json(j));
    }
  } else {
    configs = synthetic_corpus(a.subjects, a.days, seed);
  }
  ArtifactDir dir(a.out);
  for (const auto& c : configs) {
    const EventStream s = generate_synthetic(c);
    dir.write(c.subject_id + ".csv", csv_bytes(s));
    std::size_t meals = 0, boluses = 0;
    for (std::size_t i = 0; i < s.steps(); ++i) {
      meals += s.meal[i] > 0.0;
      boluses += s.bolus[i] > 0.0;
    }
    out << c.subject_id << ": " << c.days << " days, " << s.bgl.size() << " glucose samples, " << meals << " meals, "
        << boluses << " boluses\n";
  }
}

struct IngestArgs {
  std::vector<std::string> inputs;
  std::string format;
  std::string out;
};

void cmd_ingest(const IngestArgs& a, std::ostream& out) {
  const auto fmt = parse_format(a.format);
  if (!fmt) throw NameError("unknown format '" + a.format + "'", {"csv", "ohio-xml"});
  // XML files of one patient (training and testing parts) become one stream.
  std::map<std::string, std::vector<std::string>> by_subject;
  std::map<std::string, Parsed> single;
  for (const auto& in : a.inputs) {
    auto parsed = parse_subject_file(in, *fmt);
    for (const auto& w : parsed.warnings) out << "warning: " << in << ": " << w << '\n';
    const std::string id = parsed.stream.subject_id;
    if (*fmt == FileFormat::canonical_csv && by_subject.contains(id)) {
      throw PreconditionError("two CSV inputs for subject '" + id + "'");
    }
    by_subject[id].push_back(in);
    single.insert_or_assign(id, std::move(parsed));
  }
  ArtifactDir dir(a.out);
  for (const auto& [id, paths] : by_subject) {
    const EventStream s = paths.size() == 1 ? single.at(id).stream : read_ohio_xml_files(paths).stream;
    dir.write(id + ".csv", csv_bytes(s));
    out << id << ": " << s.steps() << " steps from " << paths.size() << " file(s)\n";
  }
}

struct DataOutArgs {
  std::string data;
  std::string out;
  std::string report;
};

void cmd_preprocess(const DataOutArgs& a, std::ostream& out) {
  const auto streams = load_streams(a.data, out);
  ArtifactDir dir(a.out);
  json report = json::object();
  for (const auto& s : streams) {
    const Realigned r = realign_meals(s);
    dir.write(s.subject_id + ".csv", csv_bytes(r.stream));
    report[s.subject_id] = {{"meals_shifted", r.report.meals_shifted},
                            {"meals_added", r.report.meals_added},
                            {"meals_unchanged", r.report.meals_unchanged},
                            {"carbs_replaced_delta", r.report.carbs_replaced_delta},
                            {"carbs_added", r.report.carbs_added}};
    out << s.subject_id << ": " << r.report.meals_shifted << " shifted, " << r.report.meals_added << " added, "
        << r.report.meals_unchanged << " unchanged\n";
  }
  dir.write("realignment.json", report.dump(2) + "\n");
  if (!a.report.empty()) std::ofstream(a.report) << report.dump(2) << '\n';
}

struct ExtractArgs {
  std::string data;
  std::string out;
  std::vector<std::string> scenarios;
  std::vector<std::string> classes;
};

void cmd_extract(const ExtractArgs& a, std::ostream& out) {
  std::vector<Scenario> scenarios;
  for (const auto& s : a.scenarios) scenarios.push_back(scenario_arg(s));
  if (scenarios.empty()) scenarios.assign(kScenarios.begin(), kScenarios.end());
  std::vector<ExampleClass> classes;
  for (const auto& c : a.classes) classes.push_back(class_arg(c));
  if (classes.empty()) classes = {ExampleClass::inertial, ExampleClass::unrestricted};

  std::vector<EventStream> streams;
  for (const auto& s : load_streams(a.data, out)) streams.push_back(interpolate_gaps(s));
  std::optional<ArtifactDir> dir;
  if (!a.out.empty()) dir.emplace(a.out);
  json counts = json::object();
  for (Scenario sc : scenarios) {
    for (ExampleClass cl : classes) {
      std::vector<SplitDatasets> all;
      for (const auto& s : streams) {
        StreamSplit parts;
        try {
          parts = split(s);
        } catch (const SplitError& e) {
          out << "warning: skipping " << s.subject_id << ": " << e.what() << '\n';
          continue;
        }
        all.push_back(extract(s, sc, cl, parts));
        if (dir) {
          std::vector<RecommendationExample> rows;
          for (const auto& ds : all.back()) rows.insert(rows.end(), ds.examples.begin(), ds.examples.end());
          std::ostringstream os;
          write_examples(os, rows);
          dir->write(s.subject_id + "." + std::string(to_string(sc)) + "." + std::string(to_string(cl)) + ".tsv",
                     os.str());
        }
      }
      const ExampleCounts c = count_examples(all);
      const std::string title = std::string(to_string(sc)) + " " + std::string(to_string(cl));
      out << render_counts_table(title, c) << '\n';
      json by = json::object();
      for (const auto& [tau, v] : c.by_horizon) by[std::to_string(tau)] = v;
      counts[title] = {{"by_horizon", by}, {"totals", c.totals}, {"total", c.total()}};
    }
  }
  if (dir) dir->write("counts.json", counts.dump(2) + "\n");
}

struct StatsArgs {
  std::string data;
  std::string groups;
  std::string json_out;
};

json stats_row(const SubjectStats& s) {
  auto ls = [](const LabelStats& l) {
    return json{{"count", l.count}, {"min", l.min},   {"max", l.max},
                {"median", l.median}, {"mean", l.mean}, {"std", l.stddev}};
  };
  return {{"subject_id", s.subject_id}, {"carbs_all", s.carbs_all}, {"carbs_no_bolus", s.carbs_no_bolus},
          {"carbs", ls(s.carbs)},       {"bolus_all", s.bolus_all}, {"bolus_with_carbs", s.bolus_with_carbs},
          {"insulin", ls(s.insulin)}};
}

void cmd_stats(const StatsArgs& a, std::ostream& out) {
  std::vector<EventStream> streams = load_streams(a.data, out);
  std::vector<std::pair<std::string, std::vector<std::string>>> groups;
  if (!a.groups.empty()) {
    const json j = read_json_file(a.groups);
    if (!j.is_array()) throw ConfigError("groups: expected an array of {\"label\", \"subjects\"}");
    std::vector<std::string> errors;
    for (std::size_t i = 0; i < j.size(); ++i) {
      ConfigReader r(j[i], "groups[" + std::to_string(i) + "]", errors);
      std::pair<std::string, std::vector<std::string>> g;
      r.get("label", g.first, true);
      r.get("subjects", g.second, true);
      r.finish();
      groups.push_back(g);
    }
    throw_if_errors(errors, "groups");
  }
  const DatasetStats st = dataset_stats(streams, groups);
  out << render_meal_table(st) << '\n' << render_bolus_table(st);
  if (!a.json_out.empty()) {
    json j{{"subjects", json::array()}, {"totals", json::array()}};
    for (const auto& s : st.subjects) j["subjects"].push_back(stats_row(s));
    for (const auto& s : st.totals) j["totals"].push_back(stats_row(s));
    std::ofstream(a.json_out) << j.dump(2) << '\n';
  }
}

struct TrainArgs {
  std::string data;
  std::string out;
  std::string config;
  std::string scenario;
  std::string example_class;
  std::string arch;
  std::string exclusions;
  std::optional<std::size_t> seeds, max_epochs, patience, blocks;
  std::vector<std::size_t> batch_sizes;
  bool no_pretrain = false;
};

TrainConfig train_config(const TrainArgs& a, std::uint64_t seed, bool seed_given) {
  TrainConfig cfg;
  if (!a.config.empty()) cfg = TrainConfig::from_json(read_json_file(a.config));
  if (!a.scenario.empty()) cfg.scenario = scenario_arg(a.scenario);
  if (!a.example_class.empty()) cfg.example_class = class_arg(a.example_class);
  if (!a.arch.empty()) cfg.architecture = arch_arg(a.arch);
  if (a.seeds) cfg.seeds = *a.seeds;
  if (a.max_epochs) cfg.max_epochs = *a.max_epochs;
  if (a.patience) cfg.patience = *a.patience;
  if (a.blocks) cfg.blocks = *a.blocks;
  if (!a.batch_sizes.empty()) cfg.batch_sizes = a.batch_sizes;
  if (a.no_pretrain) cfg.pretrain = false;
  if (seed_given) cfg.seed = seed;
  if (!a.exclusions.empty()) apply_exclusions(cfg, a.exclusions);
  cfg.validate();
  return cfg;
}

std::vector<ModelCheckpoint> run_training(const TrainConfig& cfg, const std::vector<EventStream>& streams,
                                          ArtifactDir& dir, std::ostream& out) {
  const auto subjects = prepare_all(streams, cfg.scenario, cfg.example_class, out);
  out << "training " << to_string(cfg.architecture) << " on " << to_string(cfg.scenario) << " ("
      << to_string(cfg.example_class) << "), " << subjects.size() << " subjects, " << cfg.seeds << " seed(s)\n";
  auto ckpts = train_all(cfg, subjects);
  for (const auto& c : ckpts) {
    dir.write(checkpoint_name(c), checkpoint_bytes(c));
    out << "  " << checkpoint_name(c) << ": best epoch " << c.training.best_epoch << " of " << c.training.epochs_run
        << ", batch " << c.training.batch_size << ", validation MAE " << c.training.validation_mae << '\n';
  }
  return ckpts;
}

struct EvalArgs {
  std::string checkpoints;
  std::string data;
  std::string report;
  std::string text;
};

struct EvalOutput {
  json reports = json::array();
  std::string text;
};

EvalOutput evaluate_checkpoints(const std::vector<ModelCheckpoint>& ckpts, const std::vector<EventStream>& streams,
                                std::ostream& out) {
  std::map<std::tuple<Scenario, ExampleClass, Architecture>, std::vector<ModelCheckpoint>> groups;
  for (const auto& c : ckpts) groups[{c.scenario, c.example_class, c.model.architecture}].push_back(c);
  EvalOutput res;
  std::map<std::pair<Scenario, ExampleClass>, std::map<Architecture, EvalReport>> by_task;
  for (const auto& [key, group] : groups) {
    const auto [sc, cl, arch] = key;
    std::set<std::string> ids;
    for (const auto& c : group) ids.insert(c.subject_id);
    std::vector<EventStream> needed;
    for (const auto& s : streams) {
      if (ids.contains(s.subject_id)) needed.push_back(s);
    }
    const auto subjects = prepare_all(needed, sc, cl, out);
    EvalReport rep = evaluate(group, subjects);
    res.reports.push_back(rep.to_json());
    res.text += rep.render() + "\n";
    by_task[{sc, cl}].emplace(arch, std::move(rep));
  }
  // Paired test across subjects when both architectures were evaluated.
  for (const auto& [task, reps] : by_task) {
    if (reps.size() != 2) continue;
    const auto& l = reps.at(Architecture::lstm).model.subjects;
    const auto& n = reps.at(Architecture::nbeats).model.subjects;
    std::vector<double> a, b;
    for (const auto& s : n) {
      const auto it = std::find_if(l.begin(), l.end(), [&](const SubjectScore& x) { return x.subject_id == s.subject_id; });
      if (it == l.end()) continue;
      a.push_back(s.mean_rmse);
      b.push_back(it->mean_rmse);
    }
    const auto p = significance(a, b);
    res.text += std::string(to_string(task.first)) + " " + std::string(to_string(task.second)) +
                ": p(nbeats < lstm, mean RMSE) = " + (p ? std::to_string(*p) : std::string("n/a")) + "\n";
  }
  return res;
}

std::vector<ModelCheckpoint> load_checkpoints(const std::string& dir) {
  std::vector<ModelCheckpoint> out;
  if (fs::is_directory(dir)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".ckpt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) out.push_back(load_checkpoint(f.string()));
  }
  if (out.empty()) throw NoCheckpointsError("no checkpoints found in '" + dir + "'");
  return out;
}

void cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto ckpts = load_checkpoints(a.checkpoints);
  const auto streams = load_streams(a.data, out);
  const EvalOutput res = evaluate_checkpoints(ckpts, streams, out);
  out << res.text;
  if (!a.report.empty()) std::ofstream(a.report) << json{{"reports", res.reports}}.dump(2) << '\n';
  if (!a.text.empty()) std::ofstream(a.text) << res.text;
}

void cmd_horizons(const std::string& config_path, std::uint64_t seed, bool seed_given, std::ostream& out) {
  const json j = read_json_file(config_path);
  std::vector<std::string> errors;
  ConfigReader r(j, "", errors);
  std::string data, report;
  std::vector<int> taus{30, 45, 60, 75, 90};
  r.get("data", data, true);
  r.get("report", report);
  r.get("taus", taus);
  const json* train = r.child("train");
  r.finish();
  for (int t : taus) {
    if (!is_valid_horizon(t)) errors.push_back("taus: " + std::to_string(t) + " is not on the 30..90 step 5 grid");
  }
  throw_if_errors(errors, "horizon experiment");
  TrainConfig cfg = train ? TrainConfig::from_json(*train) : TrainConfig{};
  if (seed_given) cfg.seed = seed;
  const auto streams = load_streams(data, out);
  const auto subjects = prepare_all(streams, cfg.scenario, cfg.example_class, out);
  const auto rows = horizon_experiment(cfg, subjects, taus);
  out << render_horizon_table(rows, label_unit(cfg.scenario));
  if (!report.empty()) {
    std::ofstream(report) << json{{"config", cfg.to_json()}, {"rows", horizon_json(rows)}}.dump(2) << '\n';
  }
}

struct ServeArgs {
  std::string checkpoints;
  std::string data;
  std::string host = "127.0.0.1";
  std::string ui;
  std::optional<int> port;
};

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

void cmd_serve(ServeArgs a, std::ostream& out) {
  if (a.checkpoints.empty()) a.checkpoints = env_or("CARBREC_CHECKPOINTS", "");
  if (a.data.empty()) a.data = env_or("CARBREC_DATA", "");
  int port = 8080;
  if (a.port) {
    port = *a.port;
  } else if (const auto p = env_or("CARBREC_PORT", ""); !p.empty()) {
    try {
      port = std::stoi(p);
    } catch (const std::exception&) {
      throw ConfigError("CARBREC_PORT is not a number: " + p);
    }
  }
  const Service svc = Service::load(a.checkpoints, a.data);
  HttpServer http(svc, a.ui);
  if (http.bind(a.host, port) < 0) throw PreconditionError("cannot listen on " + a.host + ":" + std::to_string(port));
  out << "loaded " << svc.loaded().size() << " checkpoint(s); listening on " << a.host << ":" << port << std::endl;
  http.run();
}

// ---- pipeline ----

struct PipelineConfig {
  std::string work_dir;
  std::optional<std::size_t> synthetic_subjects;
  int synthetic_days = 40;
  std::vector<std::string> input_files;
  std::string input_format = "ohio-xml";
  std::vector<Scenario> scenarios{kScenarios.begin(), kScenarios.end()};
  std::vector<ExampleClass> classes{ExampleClass::inertial};
  std::vector<Architecture> architectures{Architecture::lstm, Architecture::nbeats};
  json train = json::object();
  std::string exclusions;
  std::uint64_t seed = 1;

  static PipelineConfig from_json(const json& j) {
    PipelineConfig c;
    std::vector<std::string> e;
    ConfigReader r(j, "", e);
    r.get("work_dir", c.work_dir, true);
    r.get("seed", c.seed);
    if (const json* s = r.child("synthetic")) {
      ConfigReader sr(*s, "synthetic", e);
      std::size_t n = 4;
      sr.get("subjects", n);
      sr.get("days", c.synthetic_days);
      sr.finish();
      c.synthetic_subjects = n;
      if (n == 0) e.push_back("synthetic.subjects: must be positive");
      if (c.synthetic_days < 1) e.push_back("synthetic.days: must be positive");
    }
    if (const json* in = r.child("input")) {
      ConfigReader ir(*in, "input", e);
      ir.get("files", c.input_files, true);
      ir.get("format", c.input_format);
      ir.finish();
      if (!parse_format(c.input_format)) e.push_back("input.format: unknown '" + c.input_format + "'");
    }
    if (c.synthetic_subjects.has_value() == !c.input_files.empty()) {
      e.push_back("exactly one of synthetic and input is required");
    }
    std::vector<std::string> names;
    if (r.get("scenarios", names)) {
      c.scenarios.clear();
      for (const auto& n : names) {
        if (auto s = parse_scenario(n)) c.scenarios.push_back(*s);
        else e.push_back("scenarios: unknown '" + n + "' (valid: " + scenario_names() + ")");
      }
    }
    if (r.get("classes", names)) {
      c.classes.clear();
      for (const auto& n : names) {
        if (auto s = parse_example_class(n)) c.classes.push_back(*s);
        else e.push_back("classes: unknown '" + n + "' (valid: inertial, unrestricted)");
      }
    }
    if (r.get("architectures", names)) {
      c.architectures.clear();
      for (const auto& n : names) {
        if (auto s = parse_architecture(n)) c.architectures.push_back(*s);
        else e.push_back("architectures: unknown '" + n + "' (valid: lstm, nbeats)");
      }
    }
    if (const json* t = r.child("train")) c.train = *t;
    r.get("exclusions", c.exclusions);
    r.finish();
    throw_if_errors(e, "pipeline config");
    // Surface train-config violations before any stage runs.
    for (Scenario s : c.scenarios) {
      for (ExampleClass cl : c.classes) {
        for (Architecture a : c.architectures) c.train_for(s, cl, a);
      }
    }
    return c;
  }

  TrainConfig train_for(Scenario s, ExampleClass cl, Architecture a) const {
    json t = train;
    t["scenario"] = to_string(s);
    t["example_class"] = to_string(cl);
    t["architecture"] = to_string(a);
    TrainConfig cfg = TrainConfig::from_json(t);
    cfg.seed = seed;
    if (!exclusions.empty()) apply_exclusions(cfg, exclusions);
    return cfg;
  }
};

void cmd_pipeline(const std::string& config_path, std::uint64_t seed, bool seed_given, std::ostream& out) {
  PipelineConfig pc = PipelineConfig::from_json(read_json_file(config_path));
  if (seed_given) pc.seed = seed;
  const fs::path work(pc.work_dir);
  const fs::path raw = work / "raw", clean = work / "clean", ckpt = work / "checkpoints", reports = work / "reports";

  out << "== ingest\n";
  if (pc.synthetic_subjects) {
    cmd_synth({raw.string(), "", *pc.synthetic_subjects, pc.synthetic_days}, pc.seed, out);
  } else {
    cmd_ingest({pc.input_files, pc.input_format, raw.string()}, out);
  }
  out << "== preprocess\n";
  cmd_preprocess({raw.string(), clean.string()}, out);
  const auto streams = load_streams(clean.string(), out);

  ArtifactDir rep(reports);
  {
    const DatasetStats st = dataset_stats(streams);
    rep.write("stats.txt", render_meal_table(st) + "\n" + render_bolus_table(st));
  }
  out << "== extract\n";
  {
    std::ostringstream counts;
    std::vector<std::string> sc, cl;
    for (auto s : pc.scenarios) sc.emplace_back(to_string(s));
    for (auto c : pc.classes) cl.emplace_back(to_string(c));
    cmd_extract({clean.string(), "", sc, cl}, counts);
    rep.write("counts.txt", counts.str());
    out << counts.str();
  }
  out << "== train\n";
  std::vector<ModelCheckpoint> all;
  {
    ArtifactDir dir(ckpt);
    for (Scenario s : pc.scenarios) {
      for (ExampleClass cl : pc.classes) {
        for (Architecture a : pc.architectures) {
          auto c = run_training(pc.train_for(s, cl, a), streams, dir, out);
          all.insert(all.end(), std::make_move_iterator(c.begin()), std::make_move_iterator(c.end()));
        }
      }
    }
  }
  out << "== eval\n";
  const EvalOutput res = evaluate_checkpoints(all, streams, out);
  rep.write("eval.json", json{{"reports", res.reports}}.dump(2) + "\n");
  rep.write("eval.txt", res.text);
  out << res.text;
}

void write_error(std::ostream& err, int code, std::string_view kind, const std::string& message,
                 const std::vector<std::string>& valid = {}) {
  json e{{"kind", kind}, {"message", message}, {"exit_code", code}};
  if (!valid.empty()) e["valid"] = valid;
  err << json{{"error", e}}.dump() << '\n';
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Carbohydrate and bolus recommendation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  std::uint64_t seed = 1;
  int threads = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random choice of the run");
  app.add_option("--threads", threads, "Kernel threads (0 = OpenMP default)");
  seed_opt->check(CLI::NonNegativeNumber);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic subjects as canonical CSV");
  synth_cmd->add_option("--out", synth.out, "Output directory")->required();
  synth_cmd->add_option("--subjects", synth.subjects, "Number of subjects");
  synth_cmd->add_option("--days", synth.days, "Days per subject");
  synth_cmd->add_option("--config", synth.config, "Generator config JSON (object or array)");

  IngestArgs ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Convert subject files to canonical CSV");
  ingest_cmd->add_option("inputs,--in", ingest.inputs, "Subject files")->required();
  ingest_cmd->add_option("--format", ingest.format, "csv or ohio-xml")->required();
  ingest_cmd->add_option("--out", ingest.out, "Output directory")->required();

  DataOutArgs pre;
  auto* pre_cmd = app.add_subcommand("preprocess", "Realign meals to bolus-wizard entries");
  pre_cmd->add_option("--data,--in", pre.data, "Subject file or directory")->required();
  pre_cmd->add_option("--out", pre.out, "Output directory")->required();
  pre_cmd->add_option("--report", pre.report, "Also write the realignment report here");

  ExtractArgs ext;
  auto* ext_cmd = app.add_subcommand("extract", "Extract examples and print counts per horizon");
  ext_cmd->add_option("--data,--in", ext.data, "Pre-processed subject file or directory")->required();
  ext_cmd->add_option("--out", ext.out, "Write example TSV files here");
  ext_cmd->add_option("--scenario", ext.scenarios, "Scenario(s); default all");
  ext_cmd->add_option("--class", ext.classes, "inertial and/or unrestricted; default both");

  StatsArgs stats;
  auto* stats_cmd = app.add_subcommand("stats", "Meal and bolus statistics per subject");
  stats_cmd->add_option("--data,--in", stats.data, "Pre-processed subject file or directory")->required();
  stats_cmd->add_option("--groups", stats.groups, "JSON array of {label, subjects} total rows");
  stats_cmd->add_option("--json", stats.json_out, "Also write the statistics as JSON");

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Pre-train and fine-tune per-subject models");
  train_cmd->add_option("--data,--in", train.data, "Pre-processed subject file or directory")->required();
  train_cmd->add_option("--out", train.out, "Checkpoint directory")->required();
  train_cmd->add_option("--config", train.config, "Training config JSON; flags override it");
  train_cmd->add_option("--scenario", train.scenario, "CarbsAll, CarbsNoBolus, BolusAll or BolusWithCarbs");
  train_cmd->add_option("--class", train.example_class, "inertial or unrestricted");
  train_cmd->add_option("--arch", train.arch, "lstm or nbeats");
  train_cmd->add_option("--seeds", train.seeds, "Number of seeds");
  train_cmd->add_option("--max-epochs", train.max_epochs, "Epoch cap");
  train_cmd->add_option("--patience", train.patience, "Early-stopping patience");
  train_cmd->add_option("--blocks", train.blocks, "Override the number of blocks");
  train_cmd->add_option("--batch-sizes", train.batch_sizes, "Batch-size grid for fine-tuning");
  train_cmd->add_option("--exclusions", train.exclusions, "Per-scenario evaluated-subject lists (JSON)");
  train_cmd->add_flag("--no-pretrain", train.no_pretrain, "Train each subject from scratch");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "Score checkpoints and baselines on the test split");
  eval_cmd->add_option("--checkpoints", eval.checkpoints, "Checkpoint directory")->required();
  eval_cmd->add_option("--data,--in", eval.data, "Pre-processed subject file or directory")->required();
  eval_cmd->add_option("--report", eval.report, "JSON report path");
  eval_cmd->add_option("--text", eval.text, "Rendered tables path");

  std::string horizons_config;
  auto* exp_cmd = app.add_subcommand("experiment", "Experiments");
  exp_cmd->require_subcommand(1);
  exp_cmd->fallthrough();
  auto* hor_cmd = exp_cmd->add_subcommand("horizons", "All-horizon vs one-horizon training");
  hor_cmd->add_option("--config", horizons_config, "Experiment config JSON")->required();

  ServeArgs serve;
  int port = 0;
  auto* serve_cmd = app.add_subcommand("serve", "HTTP what-if service");
  serve_cmd->add_option("--checkpoints", serve.checkpoints, "Checkpoint directory (env CARBREC_CHECKPOINTS)");
  serve_cmd->add_option("--data", serve.data, "Subject data directory (env CARBREC_DATA)");
  auto* port_opt = serve_cmd->add_option("--port", port, "Port (env CARBREC_PORT, default 8080)");
  serve_cmd->add_option("--host", serve.host, "Bind address");
  serve_cmd->add_option("--ui", serve.ui, "Static UI directory served at /");

  std::string pipeline_config;
  auto* pipe_cmd = app.add_subcommand("pipeline", "Run every stage from one config");
  pipe_cmd->add_option("--config", pipeline_config, "Pipeline config JSON")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    // Help on a subcommand arrives here too.
    if (e.get_exit_code() == 0) {
      for (auto* sub : app.get_subcommands()) {
        const CLI::App* leaf = sub;
        for (auto* inner : sub->get_subcommands()) leaf = inner;
        out << leaf->help();
      }
      if (app.get_subcommands().empty()) out << app.help();
      return kExitOk;
    }
    write_error(err, kExitUsage, "usage", e.what());
    return kExitUsage;
  }

  const bool seed_given = seed_opt->count() > 0;
  try {
    if (threads > 0) kernels::set_thread_count(threads);
    if (synth_cmd->parsed()) cmd_synth(synth, seed, out);
    else if (ingest_cmd->parsed()) cmd_ingest(ingest, out);
    else if (pre_cmd->parsed()) cmd_preprocess(pre, out);
    else if (ext_cmd->parsed()) cmd_extract(ext, out);
    else if (stats_cmd->parsed()) cmd_stats(stats, out);
    else if (train_cmd->parsed()) {
      const TrainConfig cfg = train_config(train, seed, seed_given);
      const auto streams = load_streams(train.data, out);
      ArtifactDir dir(train.out);
      run_training(cfg, streams, dir, out);
    } else if (eval_cmd->parsed()) cmd_eval(eval, out);
    else if (hor_cmd->parsed()) cmd_horizons(horizons_config, seed, seed_given, out);
    else if (serve_cmd->parsed()) {
      if (port_opt->count() > 0) serve.port = port;
      cmd_serve(serve, out);
    } else if (pipe_cmd->parsed()) cmd_pipeline(pipeline_config, seed, seed_given, out);
  } catch (const NameError& e) {
    write_error(err, kExitUsage, "invalid_name", e.what(), e.valid);
    return kExitUsage;
  } catch (const ConfigError& e) {
    write_error(err, kExitUsage, "config", e.what());
    return kExitUsage;
  } catch (const NoCheckpointsError& e) {
    write_error(err, kExitNoCheckpoints, "no_checkpoints", e.what());
    return kExitNoCheckpoints;
  } catch (const std::exception& e) {
    write_error(err, kExitFailure, "failure", e.what());
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace carbrec
