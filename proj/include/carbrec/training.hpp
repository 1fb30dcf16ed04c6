#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "carbrec/baselines.hpp"
#include "carbrec/examples.hpp"
#include "carbrec/models.hpp"

namespace carbrec {

struct TrainConfig {
  Scenario scenario = Scenario::carbs_all;
  ExampleClass example_class = ExampleClass::inertial;
  Architecture architecture = Architecture::nbeats;

  double learning_rate = 0.001;
  std::vector<std::size_t> batch_sizes{32, 64, 128};
  std::size_t patience = 10;
  std::size_t max_epochs = 200;
  std::size_t seeds = 10;
  std::uint64_t seed = 1;  // seed k of a run uses seed + k
  bool pretrain = true;

  // Overrides of the tuned defaults from default_model_config.
  std::optional<std::size_t> blocks;
  std::optional<std::size_t> fc_layers;
  std::optional<double> dropout;
  std::optional<std::size_t> state_size;
  std::optional<std::size_t> fc_width;
  double lambda_forecast = 1.0;
  double lambda_backcast = 1.0;
  bool use_s1 = true;
  bool joint_heads = true;

  /// Subjects left out of fine-tuning and evaluation; they still contribute
  /// to pre-training. `include`, when non-empty, keeps only those subjects.
  std::set<std::string> exclude;
  std::set<std::string> include;
  int threads = 0;

  ModelConfig model() const;
  bool evaluates(const std::string& subject_id) const;
  static TrainConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

/// Everything needed to train and evaluate one subject on one scenario.
struct SubjectData {
  std::string subject_id;
  ScalingParams scaling;
  BaselineModel tod;  // training events only; feeds the ToD feature
  SplitDatasets datasets;
  std::vector<LabelEvent> events;
};

/// Interpolates, splits, fits scaling and baselines on the training range and
/// extracts examples with the ToD feature attached. `stream` is expected to be
/// realigned already. Throws FitError when there are no training events.
SubjectData prepare_subject(const EventStream& stream, Scenario scenario, ExampleClass example_class);

struct EpochRecord {
  double train_loss = 0.0;  // composite loss, scaled units
  double valid_mse = 0.0;   // final prediction, scaled units
};

struct TrainResult {
  std::vector<double> weights;  // best epoch
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;  // 1-based
  double best_valid_mse = 0.0;
  std::vector<EpochRecord> history;
};

struct EncodedSet {
  std::vector<EncodedExample> rows;
};

EncodedSet encode_set(const std::vector<RecommendationExample>& examples, const ScalingParams& scaling,
                      const ModelConfig& config);

/// Mini-batch Adam with early stopping on the validation MSE of the final
/// prediction. Batches are bucketed by horizon. When `valid` is empty the
/// training MSE is monitored instead. Starts from the current weights of
/// `net` and leaves the best-epoch weights in it.
TrainResult train_network(RecommenderNet& net, const EncodedSet& train, const EncodedSet& valid,
                          const TrainConfig& cfg, std::size_t batch_size, ad::Rng& rng);

/// Scaled predictions for every row, in row order.
std::vector<double> predict_rows(const RecommenderNet& net, const EncodedSet& set, std::size_t chunk = 256);
double mse_scaled(const RecommenderNet& net, const EncodedSet& set);

/// Generic model trained on the union of every subject's training examples,
/// each encoded with that subject's own scaling. Throws FitError for an empty
/// pool.
TrainResult pretrain(const TrainConfig& cfg, const std::vector<SubjectData>& subjects, std::uint64_t seed,
                     std::size_t batch_size);

/// Continues training from `generic` on one subject. Tries every batch size
/// in the grid and keeps the one with the lowest validation MSE. Returns
/// nullopt when the subject has no training examples.
std::optional<ModelCheckpoint> finetune(const std::vector<double>* generic, const SubjectData& subject,
                                        const TrainConfig& cfg, std::uint64_t seed);

struct Metrics {
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t count = 0;
};
Metrics compute_metrics(const std::vector<double>& predictions, const std::vector<double>& labels);

/// Clamped natural-unit predictions of a checkpoint on examples.
std::vector<double> predict_examples(const ModelCheckpoint& ckpt, const std::vector<RecommendationExample>& examples);

struct RunResult {
  std::string subject_id;
  std::uint64_t seed = 0;
  Metrics valid;
  Metrics test;
  std::map<int, Metrics> test_by_horizon;
};

struct SubjectScore {
  std::string subject_id;
  double mean_rmse = 0.0;
  double mean_mae = 0.0;
  double best_rmse = 0.0;
  double best_mae = 0.0;
  std::uint64_t best_seed = 0;
};

struct Aggregate {
  double mean_rmse = 0.0;
  double mean_mae = 0.0;
  double best_rmse = 0.0;
  double best_mae = 0.0;
  std::vector<SubjectScore> subjects;
};

/// Mean: average over seeds, then over subjects. Best: per subject the seed
/// with the lowest validation MAE (lowest seed on ties), then averaged.
Aggregate aggregate(const std::vector<RunResult>& runs);

struct BaselineScores {
  std::string subject_id;
  Metrics global;
  Metrics tod;
};

struct EvalReport {
  Scenario scenario = Scenario::carbs_all;
  ExampleClass example_class = ExampleClass::inertial;
  Architecture architecture = Architecture::nbeats;
  std::vector<RunResult> runs;
  Aggregate model;
  std::vector<BaselineScores> baselines;
  Metrics global_mean;  // baseline metrics averaged over subjects
  Metrics tod_mean;

  nlohmann::json to_json() const;
  std::string render() const;
};

/// Scores checkpoints on the test split of their subject. Baselines come
/// from the ToD model stored in each subject's data.
EvalReport evaluate(const std::vector<ModelCheckpoint>& checkpoints, const std::vector<SubjectData>& subjects);

/// Baseline test metrics for one subject.
BaselineScores evaluate_baselines(const SubjectData& subject);

/// One-tailed paired t-test that `a` has lower scores than `b`. Returns
/// nullopt for fewer than two pairs. Zero variance gives 0.5 for a zero mean
/// difference and 0 or 1 otherwise.
std::optional<double> significance(const std::vector<double>& a, const std::vector<double>& b);

/// Pre-train (when enabled) and fine-tune every evaluated subject for each
/// seed. Returns the checkpoints in seed-major order.
std::vector<ModelCheckpoint> train_all(const TrainConfig& cfg, const std::vector<SubjectData>& subjects);

struct HorizonRow {
  int tau = 0;
  bool available = false;
  Aggregate all_horizons;
  Aggregate one_horizon;
};

/// For each tau, scores models trained on every horizon against models
/// trained on that horizon alone, both on the test examples with that tau.
std::vector<HorizonRow> horizon_experiment(const TrainConfig& cfg, const std::vector<SubjectData>& subjects,
                                           const std::vector<int>& taus = {30, 45, 60, 75, 90});
std::string render_horizon_table(const std::vector<HorizonRow>& rows, std::string_view unit);
nlohmann::json horizon_json(const std::vector<HorizonRow>& rows);

/// Keeps only examples with horizon `tau`.
SubjectData restrict_horizon(const SubjectData& subject, int tau);

}  // namespace carbrec
