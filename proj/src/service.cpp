#include "carbrec/service.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include <httplib.h>

#include "carbrec/error.hpp"
#include "carbrec/examples.hpp"
#include "carbrec/ingest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace carbrec {

double round_display(double v) { return std::round(v * 10.0) / 10.0; }

namespace {

HttpReply error(int status, const std::string& message) {
  return {status, json{{"error", message}, {"status", status}}};
}

std::vector<fs::path> files_with(const std::string& dir, std::initializer_list<std::string_view> exts) {
  std::vector<fs::path> out;
  if (dir.empty()) return out;
  if (!fs::is_directory(dir)) throw PreconditionError("not a directory: " + dir);
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension().string();
    if (std::find(exts.begin(), exts.end(), ext) != exts.end()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Number field; absent leaves `out` untouched. Returns an error message.
std::optional<std::string> read_number(const json& j, const char* key, double& out, bool required) {
  if (!j.contains(key)) {
    if (required) return std::string(key) + " is required";
    return std::nullopt;
  }
  if (!j[key].is_number()) return std::string(key) + " must be a number";
  out = j[key].get<double>();
  if (!std::isfinite(out)) return std::string(key) + " must be finite";
  return std::nullopt;
}

std::optional<std::string> read_series(const json& j, const char* key, std::vector<double>& out) {
  if (!j.contains(key)) return std::nullopt;
  if (!j[key].is_array()) return std::string("history.") + key + " must be an array";
  out.clear();
  for (const auto& v : j[key]) {
    if (!v.is_number()) return std::string("history.") + key + " must hold numbers";
    out.push_back(v.get<double>());
  }
  return std::nullopt;
}

std::optional<std::int64_t> parse_clock(const std::string& s) {
  int h = 0, m = 0;
  if (s.size() != 5 || s[2] != ':') return std::nullopt;
  for (std::size_t i : {0u, 1u, 3u, 4u}) {
    if (s[i] < '0' || s[i] > '9') return std::nullopt;
  }
  h = (s[0] - '0') * 10 + (s[1] - '0');
  m = (s[3] - '0') * 10 + (s[4] - '0');
  if (h > 23 || m > 59) return std::nullopt;
  return h * 60 + m;
}

json model_json(const LoadedModel& m) {
  const auto& c = m.checkpoint;
  return {{"id", m.id},
          {"subject_id", c.subject_id},
          {"scenario", to_string(c.scenario)},
          {"example_class", to_string(c.example_class)},
          {"architecture", to_string(c.model.architecture)},
          {"blocks", c.model.blocks},
          {"seed", c.seed},
          {"units", label_unit(c.scenario)},
          {"batch_size", c.training.batch_size},
          {"epochs_run", c.training.epochs_run},
          {"best_epoch", c.training.best_epoch},
          {"pretrained", c.training.pretrained},
          {"validation_mse", c.training.validation_mse},
          {"validation_mae", c.training.validation_mae}};
}

}  // namespace

Service::Service(std::vector<LoadedModel> models, std::vector<EventStream> streams) : models_(std::move(models)) {
  std::sort(models_.begin(), models_.end(), [](const LoadedModel& a, const LoadedModel& b) { return a.id < b.id; });
  for (auto& s : streams) {
    const std::string id = s.subject_id;
    streams_.insert_or_assign(id, s.bgl.size() >= 2 ? interpolate_gaps(s) : std::move(s));
  }
}

Service Service::load(const std::string& checkpoint_dir, const std::string& data_dir) {
  std::vector<LoadedModel> models;
  for (const auto& p : files_with(checkpoint_dir, {".ckpt"})) {
    ModelCheckpoint c = load_checkpoint(p.string());
    RecommenderNet net = c.network();
    models.push_back({p.stem().string(), std::move(c), std::move(net)});
  }
  std::vector<EventStream> streams;
  for (const auto& p : files_with(data_dir, {".csv", ".xml"})) {
    const auto fmt = p.extension() == ".xml" ? FileFormat::ohio_xml : FileFormat::canonical_csv;
    streams.push_back(parse_subject_file(p.string(), fmt).stream);
  }
  return Service(std::move(models), std::move(streams));
}

const EventStream* Service::stream_of(const std::string& subject_id) const {
  const auto it = streams_.find(subject_id);
  return it == streams_.end() ? nullptr : &it->second;
}

std::variant<Service::Window, std::string> Service::window(const EventStream& s, std::size_t end_step) const {
  if (end_step + 1 < kHistorySteps) {
    return "stream '" + s.subject_id + "' has fewer than 72 steps before the requested time";
  }
  const GlucoseGrid grid = glucose_grid(s);
  Window w;
  for (std::size_t i = end_step + 1 - kHistorySteps; i <= end_step; ++i) {
    if (!grid.available(i)) {
      return "glucose is missing at " + format_timestamp(unix_seconds(s, s.minute_at(i))) +
             " within the 72-step window";
    }
    w.bgl.push_back(grid.value[i]);
    w.carbs.push_back(s.meal[i]);
    w.bolus.push_back(s.bolus[i]);
    w.basal.push_back(s.basal[i]);
    w.minutes.push_back(s.minute_at(i));
  }
  w.present_minute = s.minute_at(end_step);
  return w;
}

std::variant<Service::Window, std::string> Service::latest_window(const EventStream& s) const {
  if (s.bgl.empty()) return "stream '" + s.subject_id + "' has no glucose samples";
  const auto end = s.step_of(s.bgl.back().minute);
  if (!end) return "stream '" + s.subject_id + "' has glucose outside its grid";
  return window(s, *end);
}

HttpReply Service::recommend_text(const std::string& body) const {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    return error(400, std::string("malformed JSON: ") + e.what());
  }
  return recommend(j);
}

HttpReply Service::recommend(const json& body) const {
  if (!body.is_object()) return error(400, "request body must be a JSON object");
  for (const char* key : {"subject_id", "scenario", "architecture"}) {
    if (!body.contains(key) || !body[key].is_string()) return error(400, std::string(key) + " must be a string");
  }
  const std::string subject = body["subject_id"].get<std::string>();
  const auto arch = parse_architecture(body["architecture"].get<std::string>());
  if (!arch) return error(400, "architecture must be lstm or nbeats");
  std::optional<ExampleClass> cls;
  if (body.contains("example_class")) {
    if (!body["example_class"].is_string()) return error(400, "example_class must be a string");
    cls = parse_example_class(body["example_class"].get<std::string>());
    if (!cls) return error(400, "example_class must be inertial or unrestricted");
  }

  RecommendQuery q;
  if (!body.contains("tau") || !body["tau"].is_number_integer()) return error(400, "tau must be an integer");
  q.tau = body["tau"].get<int>();
  if (!is_valid_horizon(q.tau)) return error(400, "tau must be one of 30, 35, ..., 90 minutes");
  if (auto e = read_number(body, "target_bgl", q.target_bgl, true)) return error(400, *e);
  if (q.target_bgl < 40.0 || q.target_bgl > 400.0) return error(400, "target_bgl must be within [40, 400] mg/dL");
  if (auto e = read_number(body, "planned_carbs", q.planned_carbs, false)) return error(400, *e);
  if (q.planned_carbs < 0.0) return error(400, "planned_carbs must be non-negative");

  if (body.contains("future")) {
    if (!body["future"].is_array()) return error(400, "future must be an array of [carbs, bolus, basal] steps");
    for (const auto& step : body["future"]) {
      if (!step.is_array() || step.size() != 3) return error(400, "future steps must be [carbs, bolus, basal]");
      for (const auto& v : step) {
        if (!v.is_number() || v.get<double>() < 0.0) return error(400, "future values must be non-negative numbers");
        q.future.push_back(v.get<double>());
      }
    }
  }

  // History: inline arrays, or a window from a loaded stream.
  const json hist = body.value("history", json::object());
  if (!hist.is_object()) return error(400, "history must be an object");
  std::optional<std::string> history_end;
  const bool inline_history = hist.contains("bgl");
  if (inline_history) {
    const std::pair<const char*, std::vector<double>*> channels[] = {
        {"bgl", &q.bgl}, {"carbs", &q.carbs}, {"bolus", &q.bolus}, {"basal", &q.basal}};
    for (const auto& [key, out] : channels) {
      if (auto e = read_series(hist, key, *out)) return error(400, *e);
    }
    for (auto* ch : {&q.carbs, &q.bolus, &q.basal}) {
      if (ch->empty()) ch->assign(q.bgl.size(), 0.0);
    }
    if (!hist.contains("present_time") || !hist["present_time"].is_string()) {
      return error(400, "history.present_time (HH:MM) is required with inline history");
    }
    const auto m = parse_clock(hist["present_time"].get<std::string>());
    if (!m) return error(400, "history.present_time must be HH:MM");
    q.present_minute = *m;
  }

  const bool known = stream_of(subject) != nullptr ||
                     std::any_of(models_.begin(), models_.end(),
                                 [&](const LoadedModel& m) { return m.checkpoint.subject_id == subject; });
  if (!known) return error(404, "unknown subject '" + subject + "'");
  const auto scenario = parse_scenario(body["scenario"].get<std::string>());
  if (!scenario) return error(404, "unknown scenario (valid: " + scenario_names() + ")");

  // The checkpoint with the lowest validation MAE wins; the id breaks ties.
  const LoadedModel* chosen = nullptr;
  const std::string wanted = body.value("checkpoint_id", std::string());
  for (const auto& m : models_) {
    const auto& c = m.checkpoint;
    if (c.subject_id != subject || c.scenario != *scenario || c.model.architecture != *arch) continue;
    if (cls && c.example_class != *cls) continue;
    if (!wanted.empty() && m.id != wanted) continue;
    if (!chosen || c.training.validation_mae < chosen->checkpoint.training.validation_mae) chosen = &m;
  }
  if (!chosen) {
    return error(409, "no checkpoint loaded for " + subject + " / " + std::string(to_string(*scenario)) + " / " +
                          std::string(to_string(*arch)));
  }

  if (!inline_history) {
    const std::string sid = hist.value("stream", subject);
    const EventStream* s = stream_of(sid);
    if (!s) return error(404, "unknown stream '" + sid + "'");
    std::variant<Window, std::string> w;
    if (hist.contains("timestamp")) {
      if (!hist["timestamp"].is_string()) return error(400, "history.timestamp must be a string");
      const auto sec = parse_timestamp_seconds(hist["timestamp"].get<std::string>());
      if (!sec) return error(400, "history.timestamp is not a valid timestamp");
      const std::int64_t rel = *sec - unix_seconds(*s, 0);
      const auto step = s->step_of(snap_to_grid_seconds(rel));
      if (!step) return error(400, "history.timestamp lies outside the stream");
      w = window(*s, *step);
    } else {
      w = latest_window(*s);
    }
    if (const auto* msg = std::get_if<std::string>(&w)) return error(400, *msg);
    auto& win = std::get<Window>(w);
    q.bgl = std::move(win.bgl);
    q.carbs = std::move(win.carbs);
    q.bolus = std::move(win.bolus);
    q.basal = std::move(win.basal);
    q.present_minute = win.present_minute;
    history_end = format_timestamp(unix_seconds(*s, win.present_minute));
  }

  Recommendation r;
  try {
    r = predict(chosen->checkpoint, chosen->net, q);
  } catch (const QueryError& e) {
    return error(400, e.what());
  }
  const auto& c = chosen->checkpoint;
  json out{{"recommendation", round_display(r.value)},
           {"value", r.value},
           {"raw", r.raw},
           {"units", label_unit(c.scenario)},
           {"clamped", r.clamped},
           {"tau", q.tau},
           {"target_bgl", q.target_bgl},
           {"model",
            {{"checkpoint_id", chosen->id},
             {"subject_id", c.subject_id},
             {"scenario", to_string(c.scenario)},
             {"example_class", to_string(c.example_class)},
             {"architecture", to_string(c.model.architecture)},
             {"seed", c.seed}}}};
  if (c.model.architecture == Architecture::nbeats) {
    json blocks = json::array();
    for (double f : r.block_forecasts) blocks.push_back({{"value", f}, {"display", round_display(f)}});
    out["block_forecasts"] = blocks;
  }
  if (history_end) out["history_end"] = *history_end;
  return {200, out};
}

HttpReply Service::models() const {
  json list = json::array();
  for (const auto& m : models_) list.push_back(model_json(m));
  return {200, json{{"models", list}}};
}

HttpReply Service::subjects() const {
  std::set<std::string> ids;
  for (const auto& [id, s] : streams_) ids.insert(id);
  for (const auto& m : models_) ids.insert(m.checkpoint.subject_id);
  json list = json::array();
  for (const auto& id : ids) {
    json scen = json::array();
    std::set<std::string> seen;
    for (const auto& m : models_) {
      if (m.checkpoint.subject_id == id && seen.insert(std::string(to_string(m.checkpoint.scenario))).second) {
        scen.push_back(to_string(m.checkpoint.scenario));
      }
    }
    list.push_back({{"subject_id", id}, {"has_data", streams_.contains(id)}, {"scenarios", scen}});
  }
  return {200, json{{"subjects", list}}};
}

HttpReply Service::latest_history(const std::string& subject_id) const {
  const EventStream* s = stream_of(subject_id);
  if (!s) return error(404, "unknown subject '" + subject_id + "'");
  auto w = latest_window(*s);
  if (const auto* msg = std::get_if<std::string>(&w)) return error(404, *msg);
  const auto& win = std::get<Window>(w);
  json ts = json::array(), meals = json::array(), boluses = json::array();
  for (std::size_t i = 0; i < win.minutes.size(); ++i) {
    const auto stamp = format_timestamp(unix_seconds(*s, win.minutes[i]));
    ts.push_back(stamp);
    if (win.carbs[i] > 0.0) meals.push_back({{"timestamp", stamp}, {"carbs", win.carbs[i]}});
    if (win.bolus[i] > 0.0) boluses.push_back({{"timestamp", stamp}, {"units", win.bolus[i]}});
  }
  return {200, json{{"subject_id", subject_id},
                    {"end", format_timestamp(unix_seconds(*s, win.present_minute))},
                    {"step_minutes", kStepMinutes},
                    {"timestamps", ts},
                    {"bgl", win.bgl},
                    {"carbs", win.carbs},
                    {"bolus", win.bolus},
                    {"basal", win.basal},
                    {"meals", meals},
                    {"boluses", boluses}}};
}

HttpServer::HttpServer(const Service& service, const std::string& ui_dir)
    : srv_(std::make_unique<httplib::Server>()) {
  auto send = [](httplib::Response& res, const HttpReply& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  const Service* svc = &service;
  srv_->Post("/api/recommend", [svc, send](const httplib::Request& req, httplib::Response& res) {
    send(res, svc->recommend_text(req.body));
  });
  srv_->Get("/api/models", [svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc->models()); });
  srv_->Get("/api/subjects",
            [svc, send](const httplib::Request&, httplib::Response& res) { send(res, svc->subjects()); });
  srv_->Get(R"(/api/subjects/([^/]+)/latest-history)",
            [svc, send](const httplib::Request& req, httplib::Response& res) {
              send(res, svc->latest_history(req.matches[1]));
            });
  srv_->Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"status":"ok"})", "application/json");
  });
  if (!ui_dir.empty() && !srv_->set_mount_point("/", ui_dir)) {
    throw PreconditionError("cannot serve UI directory " + ui_dir);
  }
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return srv_->bind_to_any_port(host);
  return srv_->bind_to_port(host, port) ? port : -1;
}

bool HttpServer::run() { return srv_->listen_after_bind(); }

void HttpServer::stop() { srv_->stop(); }

}  // namespace carbrec
