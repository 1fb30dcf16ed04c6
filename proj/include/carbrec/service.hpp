#pragma once

#include <map>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "carbrec/models.hpp"
#include "carbrec/timeseries.hpp"

namespace httplib {
class Server;
}

namespace carbrec {

struct HttpReply {
  int status = 200;
  nlohmann::json body;
};

struct LoadedModel {
  std::string id;  // file stem
  ModelCheckpoint checkpoint;
  RecommenderNet net;
};

/// Read-only what-if service over checkpoints loaded at startup. Handlers
/// are const and safe to call concurrently.
class Service {
 public:
  Service(std::vector<LoadedModel> models, std::vector<EventStream> streams);

  /// Every *.ckpt under `checkpoint_dir` and every *.csv / *.xml under
  /// `data_dir` (either may be empty). Throws on unreadable files.
  static Service load(const std::string& checkpoint_dir, const std::string& data_dir);

  /// POST /api/recommend. See docs/openapi.yaml for the body.
  HttpReply recommend(const nlohmann::json& body) const;
  HttpReply recommend_text(const std::string& body) const;
  /// GET /api/models, ordered by id.
  HttpReply models() const;
  /// GET /api/subjects, ordered by id.
  HttpReply subjects() const;
  /// GET /api/subjects/{id}/latest-history: 72 steps ending at the latest
  /// measured glucose sample.
  HttpReply latest_history(const std::string& subject_id) const;

  const std::vector<LoadedModel>& loaded() const noexcept { return models_; }

 private:
  struct Window {
    std::vector<double> bgl, carbs, bolus, basal;
    std::vector<std::int64_t> minutes;
    std::int64_t present_minute = 0;
  };
  const EventStream* stream_of(const std::string& subject_id) const;
  /// Window of 72 steps ending at `end_step`; an error message when glucose
  /// is unavailable anywhere in it.
  std::variant<Window, std::string> window(const EventStream& s, std::size_t end_step) const;
  std::variant<Window, std::string> latest_window(const EventStream& s) const;

  std::vector<LoadedModel> models_;
  std::map<std::string, EventStream> streams_;  // interpolated
};

/// HTTP/1.1 front end over a Service; requests are handled on a thread pool.
class HttpServer {
 public:
  /// `ui_dir`, when non-empty, is served as static files at /.
  explicit HttpServer(const Service& service, const std::string& ui_dir = "");
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Port 0 picks a free port. Returns the bound port, or -1.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after a successful bind().
  bool run();
  void stop();

 private:
  std::unique_ptr<httplib::Server> srv_;
};

/// Round to one decimal for display fields.
double round_display(double v);

}  // namespace carbrec
