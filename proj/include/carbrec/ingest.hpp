#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "carbrec/timeseries.hpp"

namespace carbrec {

enum class FileFormat : std::uint8_t { canonical_csv, ohio_xml };
std::string_view to_string(FileFormat f);
/// Accepts "csv", "canonical-csv" and "ohio-xml".
std::optional<FileFormat> parse_format(std::string_view name);

struct Parsed {
  EventStream stream;
  std::vector<std::string> warnings;  // unknown columns or elements
};

/// Canonical CSV: header
///   timestamp,bgl,basal,bolus,bolus_kind,bw_carb_input,meal_self_reported,meal_carbs
/// then one row per 5-minute step with ISO-8601 local timestamps. Empty cells
/// mean absent. Rows missing from the grid are treated as empty steps with the
/// previous basal rate; off-grid timestamps snap to the nearest step and
/// colliding meals or boluses are summed.
Parsed read_canonical_csv(std::istream& is, const std::string& subject_id);
void write_canonical_csv(std::ostream& os, const EventStream& stream);

/// OhioT1DM-style XML (glucose_level, basal, temp_basal, bolus, meal).
Parsed read_ohio_xml(std::istream& is, const std::string& subject_id = "");
/// One stream from several files of the same patient (e.g. its training and
/// testing files). Throws ParseError when the patient ids differ.
Parsed read_ohio_xml_files(const std::vector<std::string>& paths);

/// Dispatches on format. The subject id is the file stem for CSV and the
/// patient id attribute (falling back to the stem) for XML.
Parsed parse_subject_file(const std::string& path, FileFormat format);
void write_canonical_csv_file(const std::string& path, const EventStream& stream);

/// Time helpers for "YYYY-MM-DDTHH:MM[:SS]" and "DD-MM-YYYY HH:MM:SS".
std::optional<std::int64_t> parse_timestamp_seconds(std::string_view text);
std::string format_timestamp(std::int64_t unix_seconds);
std::int64_t unix_seconds(const EventStream& stream, std::int64_t minute);

/// Parameters of the synthetic subject generator.
///
/// Up to three main meals per day (breakfast, lunch, dinner) whose mean size is
/// 0.7, 1.0 and 1.3 times carb_mean; extra meals beyond three become small
/// unbolused snacks. A bolused meal is preceded by exactly carbs / carb_ratio
/// units ten minutes earlier with the carbs entered in the wizard.
struct SyntheticConfig {
  std::string subject_id = "synth";
  std::string start_date = "2027-01-01";
  int days = 40;
  double meals_per_day = 3.5;
  double carb_mean = 45.0;
  double carb_std = 12.0;
  double carb_ratio = 10.0;            // g per unit
  double insulin_sensitivity = 40.0;   // mg/dL per unit
  double basal = 0.8;                  // units/hour
  double noise_std = 4.0;              // mg/dL
  double baseline_bgl = 120.0;
  double bolus_probability = 0.85;     // main meal is bolused
  double forget_log_probability = 0.05;
  double meal_time_jitter = 30.0;      // minutes, self-report error of bolused meals
  double dual_bolus_probability = 0.0;
  double dose_adjust_std = 0.0;        // log-normal spread of meal doses around carbs / ratio
  double correction_threshold = 250.0; // mg/dL
  double gaps_per_day = 0.3;           // CGM dropouts
  std::uint64_t seed = 1;

  /// Strict parse: unknown keys and every invalid value are reported.
  static SyntheticConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
  void validate() const;
};

/// Deterministic given the config (mt19937_64 seeded with cfg.seed).
EventStream generate_synthetic(const SyntheticConfig& cfg);

/// Configs for subjects "S1".."Sn" whose carb ratio, sensitivity, meal habits
/// and logging behaviour vary per subject, all derived from `seed`.
std::vector<SyntheticConfig> synthetic_corpus(std::size_t subjects, int days, std::uint64_t seed);

}  // namespace carbrec
