#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "carbrec/autodiff.hpp"
#include "carbrec/baselines.hpp"
#include "carbrec/examples.hpp"
#include "carbrec/timeseries.hpp"

namespace carbrec {

enum class Architecture : std::uint8_t { lstm, nbeats };
std::string_view to_string(Architecture a);
std::optional<Architecture> parse_architecture(std::string_view name);

struct ModelConfig {
  Architecture architecture = Architecture::nbeats;
  std::size_t blocks = 1;
  std::size_t state_size = 32;
  std::size_t fc_width = 64;
  std::size_t fc_layers = 2;
  double dropout = 0.0;
  bool use_s1 = true;
  bool joint_heads = true;
  bool planned_carbs_feature = false;
  double lambda_forecast = 1.0;
  double lambda_backcast = 1.0;

  /// target, tau, ToD average, and planned carbs for bolus_with_carbs.
  std::size_t feature_count() const noexcept { return planned_carbs_feature ? 4 : 3; }
  std::size_t fcn_input_width() const noexcept {
    return (use_s1 ? 2 * state_size : state_size) + feature_count();
  }
  void validate() const;  // throws ConfigError
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Tuned defaults per architecture, scenario and example class. The LSTM
/// architecture is a single block trained on the final-prediction MSE only.
/// carbs_no_bolus reuses the carbs_all values with halved widths.
ModelConfig default_model_config(Architecture arch, Scenario scenario, ExampleClass example_class);

/// Scaled model inputs for one example.
struct EncodedExample {
  std::array<double, kHistorySteps * kHistoryChannels> history{};
  std::vector<double> future;    // future_steps x 3
  std::vector<double> features;  // feature_count
  double label = 0.0;
  int tau = 30;
};

/// Scales an example for a network. tau enters as tau / 90; the target uses
/// the glucose range, the ToD average the label-channel range and planned
/// carbs the carb range.
EncodedExample encode(const RecommendationExample& example, const ScalingParams& scaling,
                      const ModelConfig& config);

/// Row-stacked encoded examples. Every row shares one horizon so the second
/// LSTM runs over the true sequence length without padding.
struct Batch {
  std::size_t size = 0;
  std::size_t future_steps = 0;
  std::size_t feature_count = 0;
  std::vector<double> history;   // size x 72 x 4
  std::vector<double> future;    // size x future_steps x 3
  std::vector<double> features;  // size x feature_count
  std::vector<double> labels;    // size
};

/// Throws ShapeError when the examples do not share a horizon or feature width.
Batch make_batch(std::span<const EncodedExample* const> rows);
Batch make_batch(std::span<const EncodedExample> rows);

struct BatchInputs {
  ad::Var history_bgl;                 // B x 72
  std::vector<ad::Var> history_events;  // 72 x (B x 3): carbs, bolus, basal
  std::vector<ad::Var> future_events;   // T x (B x 3)
  ad::Var features;                    // B x F
  ad::Var labels;                      // B x 1
};

struct BlockOutputs {
  ad::Var forecast;  // B x 1
  ad::Var backcast;  // B x 72
};

struct StackOutputs {
  ad::Var prediction;               // sum of forecasts, B x 1
  std::vector<ad::Var> forecasts;   // per block
  std::vector<ad::Var> backcasts;   // per block
  std::vector<ad::Var> inputs;      // per block input glucose, B x 72
  ad::Var labels;
};

/// Chained-LSTM recommendation block, stacked residually.
///
/// Each block runs LSTM1 over 72 history steps of (glucose, carbs, bolus,
/// basal), maps its final (h, c) through a shared linear bridge to start
/// LSTM2 over the future (carbs, bolus, basal) steps, and feeds
/// [h1 (optional), h2, features] through ReLU layers into a final layer that
/// yields one forecast and a 72-step glucose backcast. Block b+1 sees the
/// glucose history minus the backcast of block b; forecasts are summed.
class RecommenderNet {
 public:
  explicit RecommenderNet(ModelConfig config);

  const ModelConfig& config() const noexcept { return config_; }
  ad::ParameterStore& parameters() noexcept { return params_; }
  const ad::ParameterStore& parameters() const noexcept { return params_; }

  /// Glorot-uniform weights, zero biases, LSTM forget-gate bias 1.
  void initialize(ad::Rng& rng);

  BatchInputs bind(ad::Graph& g, const Batch& batch) const;
  BlockOutputs block_forward(ad::Graph& g, std::size_t block, ad::Var glucose_input, const BatchInputs& in,
                             bool train, ad::Rng& rng) const;
  StackOutputs forward(ad::Graph& g, const BatchInputs& in, bool train, ad::Rng& rng) const;

  /// MSE(sum of forecasts, label)
  ///   + lambda_f / |B| * sum_b MSE(forecast_1 + ... + forecast_b, label)
  ///   + lambda_c / |B| * sum_b MSE(backcast_b, input glucose of block b)
  ad::Var loss(ad::Graph& g, const StackOutputs& out) const;

  /// Eval-mode scaled predictions, one per batch row.
  std::vector<double> predict_scaled(const Batch& batch, kernels::Policy policy = kernels::Policy::parallel) const;

  /// Parameter name prefix of a group, e.g. "b0.lstm1" or "b2.fc1".
  static std::string group_of(std::string_view param_name);

 private:
  struct LstmParams {
    ad::ParamId w;
    ad::ParamId b;
  };
  struct BlockParams {
    LstmParams lstm1, lstm2;
    ad::ParamId bridge_w, bridge_b;
    std::vector<ad::ParamId> fc_w, fc_b;
    ad::ParamId head_w, head_b;          // joint head: 1 + 72 outputs
    ad::ParamId forecast_w, forecast_b;  // separate heads
    ad::ParamId backcast_w, backcast_b;
  };

  ModelConfig config_;
  ad::ParameterStore params_;
  std::vector<BlockParams> blocks_;
};

struct TrainingMeta {
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double validation_mse = 0.0;  // scaled units
  double validation_mae = 0.0;  // natural units
  bool pretrained = false;
  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

/// Everything needed to serve a model without the training data.
struct ModelCheckpoint {
  static constexpr std::uint32_t kFormatVersion = 1;

  std::string subject_id;
  Scenario scenario = Scenario::carbs_all;
  ExampleClass example_class = ExampleClass::inertial;
  ModelConfig model;
  TrainingMeta training;
  ScalingParams scaling;
  BaselineModel tod;
  std::uint64_t seed = 0;
  std::vector<ad::ParamSlot> layout;
  std::vector<double> weights;

  /// Rebuilds the network; throws ConfigError when the layout disagrees.
  RecommenderNet network() const;
  static ModelCheckpoint from(const RecommenderNet& net);
};

/// Binary layout (little-endian):
///   8 bytes  magic "CRBCKPT1"
///   u32      format version
///   u64      header length N
///   N bytes  UTF-8 JSON header (metadata, hyper-parameters, scaling, ToD
///            averages, parameter layout)
///   u64      weight count W
///   W x f64  weights in layout order
void save_checkpoint(const ModelCheckpoint& ckpt, std::ostream& os);
ModelCheckpoint load_checkpoint(std::istream& is);
void save_checkpoint(const ModelCheckpoint& ckpt, const std::string& path);
ModelCheckpoint load_checkpoint(const std::string& path);
std::string checkpoint_bytes(const ModelCheckpoint& ckpt);

/// A what-if query in natural units.
struct RecommendQuery {
  std::vector<double> bgl, carbs, bolus, basal;  // 72 steps ending at the present
  std::int64_t present_minute = 0;               // for the time-of-day window of t + 10
  int tau = 60;
  double target_bgl = 0.0;
  double planned_carbs = 0.0;
  /// Optional events in (t, t+10+tau], steps x 3 (carbs, bolus, basal). Empty
  /// means no events and the last basal rate held.
  std::vector<double> future;
};

struct Recommendation {
  double value = 0.0;  // natural units, >= 0
  double raw = 0.0;    // before clamping
  bool clamped = false;
  std::vector<double> block_forecasts;  // natural-unit contribution per block
};

/// Throws QueryError for a history that is not 72 steps long, a horizon off
/// the 30..90 step 5 grid, or a future block of the wrong length.
RecommendationExample example_from_query(const RecommendQuery& query, Scenario scenario);
RecommendQuery query_from_example(const RecommendationExample& example);
Recommendation predict(const ModelCheckpoint& ckpt, const RecommendQuery& query);
Recommendation predict(const ModelCheckpoint& ckpt, const RecommenderNet& net, const RecommendQuery& query);

}  // namespace carbrec
