#include "carbrec/training.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>

#include "carbrec/config.hpp"
#include "carbrec/error.hpp"

namespace carbrec {

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t mix(std::uint64_t seed, std::string_view subject, std::uint64_t extra) {
  // splitmix64 finalizer over the combined inputs
  std::uint64_t z = seed * 0x9E3779B97F4A7C15ull ^ fnv1a(subject) ^ (extra << 32);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::map<int, std::vector<std::size_t>> buckets_of(const EncodedSet& set) {
  std::map<int, std::vector<std::size_t>> b;
  for (std::size_t i = 0; i < set.rows.size(); ++i) b[set.rows[i].tau].push_back(i);
  return b;
}

Batch gather(const EncodedSet& set, std::span<const std::size_t> idx) {
  std::vector<const EncodedExample*> rows;
  rows.reserve(idx.size());
  for (std::size_t i : idx) rows.push_back(&set.rows[i]);
  return make_batch(std::span<const EncodedExample* const>(rows));
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

ModelConfig TrainConfig::model() const {
  ModelConfig m = default_model_config(architecture, scenario, example_class);
  if (blocks) m.blocks = *blocks;
  if (fc_layers) m.fc_layers = *fc_layers;
  if (dropout) m.dropout = *dropout;
  if (state_size) m.state_size = *state_size;
  if (fc_width) m.fc_width = *fc_width;
  if (architecture == Architecture::nbeats) {
    m.lambda_forecast = lambda_forecast;
    m.lambda_backcast = lambda_backcast;
  }
  m.use_s1 = use_s1;
  m.joint_heads = joint_heads;
  return m;
}

bool TrainConfig::evaluates(const std::string& subject_id) const {
  if (!include.empty() && !include.contains(subject_id)) return false;
  return !exclude.contains(subject_id);
}

void TrainConfig::validate() const {
  std::vector<std::string> e;
  if (!(learning_rate > 0.0)) e.push_back("learning_rate: must be positive");
  if (batch_sizes.empty()) e.push_back("batch_sizes: must not be empty");
  for (auto b : batch_sizes) {
    if (b == 0) e.push_back("batch_sizes: entries must be positive");
  }
  if (max_epochs == 0) e.push_back("max_epochs: must be positive");
  if (patience == 0) e.push_back("patience: must be positive");
  if (seeds == 0) e.push_back("seeds: must be positive");
  try {
    model().validate();
  } catch (const ConfigError& err) {
    e.push_back(err.what());
  }
  throw_if_errors(e, "train config");
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  std::vector<std::string> e;
  ConfigReader r(j, "", e);
  std::string s;
  if (r.get("scenario", s)) {
    if (auto v = parse_scenario(s)) c.scenario = *v;
    else e.push_back("scenario: unknown '" + s + "' (valid: " + scenario_names() + ")");
  }
  if (r.get("example_class", s)) {
    if (auto v = parse_example_class(s)) c.example_class = *v;
    else e.push_back("example_class: unknown '" + s + "' (valid: inertial, unrestricted)");
  }
  if (r.get("architecture", s)) {
    if (auto v = parse_architecture(s)) c.architecture = *v;
    else e.push_back("architecture: unknown '" + s + "' (valid: lstm, nbeats)");
  }
  r.get("learning_rate", c.learning_rate);
  r.get("batch_sizes", c.batch_sizes);
  r.get("patience", c.patience);
  r.get("max_epochs", c.max_epochs);
  r.get("seeds", c.seeds);
  r.get("seed", c.seed);
  r.get("pretrain", c.pretrain);
  std::size_t z = 0;
  double d = 0.0;
  if (r.get("blocks", z)) c.blocks = z;
  if (r.get("fc_layers", z)) c.fc_layers = z;
  if (r.get("dropout", d)) c.dropout = d;
  if (r.get("state_size", z)) c.state_size = z;
  if (r.get("fc_width", z)) c.fc_width = z;
  r.get("lambda_forecast", c.lambda_forecast);
  r.get("lambda_backcast", c.lambda_backcast);
  r.get("use_s1", c.use_s1);
  r.get("joint_heads", c.joint_heads);
  r.get("exclude", c.exclude);
  r.get("include", c.include);
  r.get("threads", c.threads);
  r.finish();
  throw_if_errors(e, "train config");
  c.validate();
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j{{"scenario", to_string(scenario)},
                   {"example_class", to_string(example_class)},
                   {"architecture", to_string(architecture)},
                   {"learning_rate", learning_rate},
                   {"batch_sizes", batch_sizes},
                   {"patience", patience},
                   {"max_epochs", max_epochs},
                   {"seeds", seeds},
                   {"seed", seed},
                   {"pretrain", pretrain},
                   {"lambda_forecast", lambda_forecast},
                   {"lambda_backcast", lambda_backcast},
                   {"use_s1", use_s1},
                   {"joint_heads", joint_heads},
                   {"exclude", exclude},
                   {"include", include},
                   {"threads", threads}};
  if (blocks) j["blocks"] = *blocks;
  if (fc_layers) j["fc_layers"] = *fc_layers;
  if (dropout) j["dropout"] = *dropout;
  if (state_size) j["state_size"] = *state_size;
  if (fc_width) j["fc_width"] = *fc_width;
  return j;
}

SubjectData prepare_subject(const EventStream& stream, Scenario scenario, ExampleClass example_class) {
  const EventStream s = interpolate_gaps(stream);
  const StreamSplit parts = split(s);
  SubjectData d;
  d.subject_id = s.subject_id;
  d.scaling = fit_scaling(s, parts);
  d.datasets = extract(s, scenario, example_class, parts);
  d.events = label_events(s, scenario, parts);
  std::vector<LabelEvent> train;
  for (const auto& e : d.events) {
    if (e.split == Split::train) train.push_back(e);
  }
  if (train.empty()) {
    throw FitError("subject '" + d.subject_id + "' has no " + std::string(to_string(scenario)) + " training events");
  }
  d.tod = fit_baseline(train);
  for (auto& ds : d.datasets) attach_tod_average(ds.examples, d.tod);
  return d;
}

EncodedSet encode_set(const std::vector<RecommendationExample>& examples, const ScalingParams& scaling,
                      const ModelConfig& config) {
  EncodedSet s;
  s.rows.reserve(examples.size());
  for (const auto& ex : examples) s.rows.push_back(encode(ex, scaling, config));
  return s;
}

std::vector<double> predict_rows(const RecommenderNet& net, const EncodedSet& set, std::size_t chunk) {
  std::vector<double> out(set.rows.size(), 0.0);
  for (const auto& [tau, idx] : buckets_of(set)) {
    for (std::size_t b = 0; b < idx.size(); b += chunk) {
      const std::span<const std::size_t> part(idx.data() + b, std::min(chunk, idx.size() - b));
      const auto pred = net.predict_scaled(gather(set, part));
      for (std::size_t k = 0; k < part.size(); ++k) out[part[k]] = pred[k];
    }
  }
  return out;
}

double mse_scaled(const RecommenderNet& net, const EncodedSet& set) {
  if (set.rows.empty()) return 0.0;
  const auto pred = predict_rows(net, set);
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - set.rows[i].label;
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

TrainResult train_network(RecommenderNet& net, const EncodedSet& train, const EncodedSet& valid,
                          const TrainConfig& cfg, std::size_t batch_size, ad::Rng& rng) {
  if (train.rows.empty()) throw FitError("training set is empty");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  const EncodedSet& monitor = valid.rows.empty() ? train : valid;
  auto params = net.parameters().values();
  std::vector<double> grads(params.size(), 0.0);
  ad::AdamState adam(ad::AdamConfig{cfg.learning_rate}, params.size());
  ad::Graph g(kernels::Policy::parallel);
  auto buckets = buckets_of(train);

  TrainResult result;
  result.best_valid_mse = std::numeric_limits<double>::infinity();
  result.weights.assign(params.begin(), params.end());

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::vector<std::span<const std::size_t>> batches;
    for (auto& [tau, idx] : buckets) {
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t b = 0; b < idx.size(); b += batch_size) {
        batches.emplace_back(idx.data() + b, std::min(batch_size, idx.size() - b));
      }
    }
    std::shuffle(batches.begin(), batches.end(), rng);

    double loss_sum = 0.0;
    for (const auto& part : batches) {
      g.clear();
      const Batch batch = gather(train, part);
      const BatchInputs in = net.bind(g, batch);
      const StackOutputs out = net.forward(g, in, true, rng);
      const ad::Var loss = net.loss(g, out);
      loss_sum += g.scalar(loss) * static_cast<double>(part.size());
      g.backward(loss, grads);
      ad::adam_step(params, grads, adam);
    }

    EpochRecord rec;
    rec.train_loss = loss_sum / static_cast<double>(train.rows.size());
    rec.valid_mse = mse_scaled(net, monitor);
    result.history.push_back(rec);
    result.epochs_run = epoch;
    if (rec.valid_mse < result.best_valid_mse) {
      result.best_valid_mse = rec.valid_mse;
      result.best_epoch = epoch;
      result.weights.assign(params.begin(), params.end());
    } else if (epoch - result.best_epoch >= cfg.patience) {
      break;
    }
  }
  std::copy(result.weights.begin(), result.weights.end(), params.begin());
  return result;
}

TrainResult pretrain(const TrainConfig& cfg, const std::vector<SubjectData>& subjects, std::uint64_t seed,
                     std::size_t batch_size) {
  const ModelConfig model = cfg.model();
  EncodedSet train, valid;
  for (const auto& s : subjects) {
    auto t = encode_set(s.datasets[0].examples, s.scaling, model);
    auto v = encode_set(s.datasets[1].examples, s.scaling, model);
    train.rows.insert(train.rows.end(), t.rows.begin(), t.rows.end());
    valid.rows.insert(valid.rows.end(), v.rows.begin(), v.rows.end());
  }
  if (train.rows.empty()) throw FitError("pre-training pool is empty");
  ad::Rng rng(mix(seed, "pretrain", 0));
  RecommenderNet net(model);
  net.initialize(rng);
  return train_network(net, train, valid, cfg, batch_size, rng);
}

std::optional<ModelCheckpoint> finetune(const std::vector<double>* generic, const SubjectData& subject,
                                        const TrainConfig& cfg, std::uint64_t seed) {
  const ModelConfig model = cfg.model();
  const EncodedSet train = encode_set(subject.datasets[0].examples, subject.scaling, model);
  const EncodedSet valid = encode_set(subject.datasets[1].examples, subject.scaling, model);
  if (train.rows.empty()) return std::nullopt;

  std::optional<RecommenderNet> best;
  TrainResult best_result;
  std::size_t best_batch = 0;
  for (std::size_t bs : cfg.batch_sizes) {
    RecommenderNet net(model);
    ad::Rng rng(mix(seed, subject.subject_id, bs));
    if (generic) {
      if (generic->size() != net.parameters().size()) throw ContractError("generic weights do not fit the model");
      std::copy(generic->begin(), generic->end(), net.parameters().values().begin());
    } else {
      net.initialize(rng);
    }
    TrainResult r = train_network(net, train, valid, cfg, bs, rng);
    if (!best || r.best_valid_mse < best_result.best_valid_mse) {
      best = std::move(net);
      best_result = std::move(r);
      best_batch = bs;
    }
  }

  ModelCheckpoint ckpt = ModelCheckpoint::from(*best);
  ckpt.subject_id = subject.subject_id;
  ckpt.scenario = subject.datasets[0].scenario;
  ckpt.example_class = subject.datasets[0].example_class;
  ckpt.scaling = subject.scaling;
  ckpt.tod = subject.tod;
  ckpt.seed = seed;
  ckpt.training.learning_rate = cfg.learning_rate;
  ckpt.training.batch_size = best_batch;
  ckpt.training.epochs_run = best_result.epochs_run;
  ckpt.training.best_epoch = best_result.best_epoch;
  ckpt.training.validation_mse = best_result.best_valid_mse;
  ckpt.training.pretrained = generic != nullptr;
  const auto& vex = subject.datasets[1].examples;
  if (!vex.empty()) {
    std::vector<double> labels;
    for (const auto& e : vex) labels.push_back(e.label);
    ckpt.training.validation_mae = compute_metrics(predict_examples(ckpt, vex), labels).mae;
  }
  return ckpt;
}

Metrics compute_metrics(const std::vector<double>& predictions, const std::vector<double>& labels) {
  if (predictions.size() != labels.size()) throw ShapeError("metrics: prediction and label counts differ");
  Metrics m;
  m.count = labels.size();
  if (labels.empty()) return m;
  double se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double d = predictions[i] - labels[i];
    se += d * d;
    ae += std::abs(d);
  }
  m.rmse = std::sqrt(se / static_cast<double>(m.count));
  m.mae = ae / static_cast<double>(m.count);
  return m;
}

std::vector<double> predict_examples(const ModelCheckpoint& ckpt, const std::vector<RecommendationExample>& examples) {
  const RecommenderNet net = ckpt.network();
  EncodedSet set;
  set.rows.reserve(examples.size());
  for (auto ex : examples) {
    ex.tod_average = ckpt.tod.tod_average(ex.event_minute());
    set.rows.push_back(encode(ex, ckpt.scaling, ckpt.model));
  }
  auto pred = predict_rows(net, set);
  const Channel ch = label_channel(ckpt.scenario);
  for (auto& p : pred) p = std::max(0.0, unscale(p, ch, ckpt.scaling));
  return pred;
}

Aggregate aggregate(const std::vector<RunResult>& runs) {
  std::map<std::string, std::vector<const RunResult*>> by_subject;
  for (const auto& r : runs) {
    if (r.test.count > 0) by_subject[r.subject_id].push_back(&r);
  }
  Aggregate a;
  for (auto& [id, rs] : by_subject) {
    std::sort(rs.begin(), rs.end(), [](const RunResult* x, const RunResult* y) { return x->seed < y->seed; });
    SubjectScore s;
    s.subject_id = id;
    const RunResult* best = rs.front();
    for (const auto* r : rs) {
      s.mean_rmse += r->test.rmse;
      s.mean_mae += r->test.mae;
      if (r->valid.mae < best->valid.mae) best = r;
    }
    s.mean_rmse /= static_cast<double>(rs.size());
    s.mean_mae /= static_cast<double>(rs.size());
    s.best_rmse = best->test.rmse;
    s.best_mae = best->test.mae;
    s.best_seed = best->seed;
    a.subjects.push_back(s);
  }
  if (a.subjects.empty()) return a;
  for (const auto& s : a.subjects) {
    a.mean_rmse += s.mean_rmse;
    a.mean_mae += s.mean_mae;
    a.best_rmse += s.best_rmse;
    a.best_mae += s.best_mae;
  }
  const double n = static_cast<double>(a.subjects.size());
  a.mean_rmse /= n;
  a.mean_mae /= n;
  a.best_rmse /= n;
  a.best_mae /= n;
  return a;
}

BaselineScores evaluate_baselines(const SubjectData& subject) {
  BaselineScores b;
  b.subject_id = subject.subject_id;
  std::vector<double> labels, global, tod;
  for (const auto& ex : subject.datasets[2].examples) {
    labels.push_back(ex.label);
    global.push_back(predict(subject.tod, BaselineKind::global, ex));
    tod.push_back(predict(subject.tod, BaselineKind::tod, ex));
  }
  b.global = compute_metrics(global, labels);
  b.tod = compute_metrics(tod, labels);
  return b;
}

namespace {

RunResult score_run(const ModelCheckpoint& ckpt, const SubjectData& subject) {
  RunResult r;
  r.subject_id = ckpt.subject_id;
  r.seed = ckpt.seed;
  for (std::size_t s : {std::size_t{1}, std::size_t{2}}) {
    const auto& ex = subject.datasets[s].examples;
    const auto pred = predict_examples(ckpt, ex);
    std::vector<double> labels;
    for (const auto& e : ex) labels.push_back(e.label);
    (s == 1 ? r.valid : r.test) = compute_metrics(pred, labels);
    if (s == 2) {
      std::map<int, std::pair<std::vector<double>, std::vector<double>>> by_tau;
      for (std::size_t i = 0; i < ex.size(); ++i) {
        by_tau[ex[i].tau].first.push_back(pred[i]);
        by_tau[ex[i].tau].second.push_back(labels[i]);
      }
      for (const auto& [tau, pl] : by_tau) r.test_by_horizon[tau] = compute_metrics(pl.first, pl.second);
    }
  }
  return r;
}

const SubjectData& find_subject(const std::vector<SubjectData>& subjects, const std::string& id) {
  for (const auto& s : subjects) {
    if (s.subject_id == id) return s;
  }
  throw PreconditionError("no data for subject '" + id + "'");
}

}  // namespace

EvalReport evaluate(const std::vector<ModelCheckpoint>& checkpoints, const std::vector<SubjectData>& subjects) {
  if (checkpoints.empty()) throw PreconditionError("evaluate: no checkpoints");
  EvalReport rep;
  rep.scenario = checkpoints.front().scenario;
  rep.example_class = checkpoints.front().example_class;
  rep.architecture = checkpoints.front().model.architecture;
  std::set<std::string> seen;
  for (const auto& c : checkpoints) {
    const SubjectData& s = find_subject(subjects, c.subject_id);
    rep.runs.push_back(score_run(c, s));
    if (seen.insert(c.subject_id).second) rep.baselines.push_back(evaluate_baselines(s));
  }
  rep.model = aggregate(rep.runs);
  std::size_t n = 0;
  for (const auto& b : rep.baselines) {
    if (b.global.count == 0) continue;
    ++n;
    rep.global_mean.rmse += b.global.rmse;
    rep.global_mean.mae += b.global.mae;
    rep.tod_mean.rmse += b.tod.rmse;
    rep.tod_mean.mae += b.tod.mae;
    rep.global_mean.count += b.global.count;
    rep.tod_mean.count += b.tod.count;
  }
  if (n > 0) {
    rep.global_mean.rmse /= static_cast<double>(n);
    rep.global_mean.mae /= static_cast<double>(n);
    rep.tod_mean.rmse /= static_cast<double>(n);
    rep.tod_mean.mae /= static_cast<double>(n);
  }
  return rep;
}

namespace {

nlohmann::json metrics_json(const Metrics& m) { return {{"rmse", m.rmse}, {"mae", m.mae}, {"count", m.count}}; }

nlohmann::json aggregate_json(const Aggregate& a) {
  nlohmann::json subjects = nlohmann::json::array();
  for (const auto& s : a.subjects) {
    subjects.push_back({{"subject_id", s.subject_id},
                        {"mean_rmse", s.mean_rmse},
                        {"mean_mae", s.mean_mae},
                        {"best_rmse", s.best_rmse},
                        {"best_mae", s.best_mae},
                        {"best_seed", s.best_seed}});
  }
  return {{"mean", {{"rmse", a.mean_rmse}, {"mae", a.mean_mae}}},
          {"best", {{"rmse", a.best_rmse}, {"mae", a.best_mae}}},
          {"subjects", subjects}};
}

std::string f2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

}  // namespace

nlohmann::json EvalReport::to_json() const {
  nlohmann::json runs_j = nlohmann::json::array();
  for (const auto& r : runs) {
    nlohmann::json h = nlohmann::json::object();
    for (const auto& [tau, m] : r.test_by_horizon) h[std::to_string(tau)] = metrics_json(m);
    runs_j.push_back({{"subject_id", r.subject_id},
                      {"seed", r.seed},
                      {"valid", metrics_json(r.valid)},
                      {"test", metrics_json(r.test)},
                      {"test_by_horizon", h}});
  }
  nlohmann::json base = nlohmann::json::array();
  for (const auto& b : baselines) {
    base.push_back({{"subject_id", b.subject_id}, {"global", metrics_json(b.global)}, {"tod", metrics_json(b.tod)}});
  }
  return {{"scenario", to_string(scenario)},
          {"example_class", to_string(example_class)},
          {"architecture", to_string(architecture)},
          {"model", aggregate_json(model)},
          {"baselines", {{"global", metrics_json(global_mean)}, {"tod", metrics_json(tod_mean)}, {"subjects", base}}},
          {"runs", runs_j}};
}

std::string EvalReport::render() const {
  std::ostringstream os;
  const std::string arch(to_string(architecture));
  os << to_string(scenario) << " (" << to_string(example_class) << "), units " << label_unit(scenario) << '\n';
  os << std::left << std::setw(16) << "Model" << std::right << std::setw(10) << "RMSE" << std::setw(10) << "MAE"
     << '\n';
  auto row = [&](const std::string& name, double rmse, double mae) {
    os << std::left << std::setw(16) << name << std::right << std::setw(10) << f2(rmse) << std::setw(10) << f2(mae)
       << '\n';
  };
  row("Global", global_mean.rmse, global_mean.mae);
  row("ToD", tod_mean.rmse, tod_mean.mae);
  row(arch + ".mean", model.mean_rmse, model.mean_mae);
  row(arch + ".best", model.best_rmse, model.best_mae);
  os << '\n'
     << std::left << std::setw(12) << "Subject" << std::right << std::setw(10) << "Global" << std::setw(10) << "ToD"
     << std::setw(10) << "mean" << std::setw(10) << "best" << "   (RMSE)\n";
  for (const auto& s : model.subjects) {
    const auto it = std::find_if(baselines.begin(), baselines.end(),
                                 [&](const BaselineScores& b) { return b.subject_id == s.subject_id; });
    os << std::left << std::setw(12) << s.subject_id << std::right << std::setw(10)
       << (it != baselines.end() ? f2(it->global.rmse) : "-") << std::setw(10)
       << (it != baselines.end() ? f2(it->tod.rmse) : "-") << std::setw(10) << f2(s.mean_rmse) << std::setw(10)
       << f2(s.best_rmse) << '\n';
  }
  return os.str();
}

std::optional<double> significance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeError("significance: score vectors differ in length");
  const std::size_t n = a.size();
  if (n < 2) return std::nullopt;
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = b[i] - a[i];
  const double mean = mean_of(d);
  double ss = 0.0;
  for (double x : d) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd == 0.0) {
    if (mean == 0.0) return 0.5;
    return mean > 0.0 ? 0.0 : 1.0;
  }
  const double t = mean / (sd / std::sqrt(static_cast<double>(n)));
  const boost::math::students_t dist(static_cast<double>(n - 1));
  return boost::math::cdf(boost::math::complement(dist, t));
}

std::vector<ModelCheckpoint> train_all(const TrainConfig& cfg, const std::vector<SubjectData>& subjects) {
  cfg.validate();
  if (cfg.threads > 0) kernels::set_thread_count(cfg.threads);
  std::vector<ModelCheckpoint> out;
  for (std::size_t k = 0; k < cfg.seeds; ++k) {
    const std::uint64_t seed = cfg.seed + k;
    std::optional<TrainResult> generic;
    if (cfg.pretrain) generic = pretrain(cfg, subjects, seed, cfg.batch_sizes.front());
    for (const auto& s : subjects) {
      if (!cfg.evaluates(s.subject_id)) continue;
      auto ckpt = finetune(generic ? &generic->weights : nullptr, s, cfg, seed);
      if (ckpt) out.push_back(std::move(*ckpt));
    }
  }
  return out;
}

SubjectData restrict_horizon(const SubjectData& subject, int tau) {
  SubjectData out = subject;
  for (auto& ds : out.datasets) {
    std::erase_if(ds.examples, [tau](const RecommendationExample& e) { return e.tau != tau; });
  }
  return out;
}

std::vector<HorizonRow> horizon_experiment(const TrainConfig& cfg, const std::vector<SubjectData>& subjects,
                                           const std::vector<int>& taus) {
  for (int tau : taus) {
    if (!is_valid_horizon(tau)) throw ConfigError("horizon experiment: invalid tau " + std::to_string(tau));
  }
  const auto all_ckpts = train_all(cfg, subjects);
  std::vector<HorizonRow> rows;
  for (int tau : taus) {
    HorizonRow row;
    row.tau = tau;
    std::vector<SubjectData> restricted;
    bool ok = true;
    for (const auto& s : subjects) {
      restricted.push_back(restrict_horizon(s, tau));
      if (!cfg.evaluates(s.subject_id)) continue;
      const auto& ds = restricted.back().datasets;
      ok = ok && !ds[0].examples.empty() && !ds[1].examples.empty() && !ds[2].examples.empty();
    }
    row.available = ok && !all_ckpts.empty();
    if (row.available) {
      std::vector<RunResult> all_runs, one_runs;
      for (const auto& c : all_ckpts) all_runs.push_back(score_run(c, find_subject(restricted, c.subject_id)));
      for (const auto& c : train_all(cfg, restricted)) {
        one_runs.push_back(score_run(c, find_subject(restricted, c.subject_id)));
      }
      row.all_horizons = aggregate(all_runs);
      row.one_horizon = aggregate(one_runs);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string render_horizon_table(const std::vector<HorizonRow>& rows, std::string_view unit) {
  std::ostringstream os;
  os << "Trained on all horizons vs one horizon (" << unit << ")\n";
  os << std::left << std::setw(6) << "tau" << std::right << std::setw(11) << "all.mean" << std::setw(11) << "one.mean"
     << std::setw(11) << "all.best" << std::setw(11) << "one.best" << "   (RMSE / MAE)\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(6) << r.tau << std::right;
    if (!r.available) {
      os << std::setw(11) << "n/a" << std::setw(11) << "n/a" << std::setw(11) << "n/a" << std::setw(11) << "n/a"
         << '\n';
      continue;
    }
    auto pair = [](double rmse, double mae) { return f2(rmse) + "/" + f2(mae); };
    os << std::setw(11) << pair(r.all_horizons.mean_rmse, r.all_horizons.mean_mae) << std::setw(11)
       << pair(r.one_horizon.mean_rmse, r.one_horizon.mean_mae) << std::setw(11)
       << pair(r.all_horizons.best_rmse, r.all_horizons.best_mae) << std::setw(11)
       << pair(r.one_horizon.best_rmse, r.one_horizon.best_mae) << '\n';
  }
  return os.str();
}

nlohmann::json horizon_json(const std::vector<HorizonRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row{{"tau", r.tau}, {"available", r.available}};
    if (r.available) {
      row["all_horizons"] = aggregate_json(r.all_horizons);
      row["one_horizon"] = aggregate_json(r.one_horizon);
    }
    j.push_back(row);
  }
  return j;
}

}  // namespace carbrec
