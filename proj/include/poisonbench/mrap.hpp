#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "poisonbench/csv.hpp"

namespace poisonbench::mrap {

// Accuracies and poison levels are percentages in [0, 100].
struct SeriesPoint {
  double poison_percent = 0.0;
  double val_accuracy = 0.0;
  double train_accuracy = 0.0;
};

struct AccuracySeries {
  std::string model_id;
  std::string dataset_id;
  std::vector<SeriesPoint> points;  // strictly increasing poison_percent, at least 2
};

void validate(const AccuracySeries& series);

// Denominators smaller than this in magnitude are replaced by +/- this value
// (sign kept, exact zero becomes positive).
inline constexpr double kDenominatorFloor = 1e-6;
double clamp_denominator(double denominator);

// Rate of accuracy change for one poison-level transition:
//   p_prev <  50: (p_prev - p_cur) / (a_prev - a_cur)
//   p_prev >= 50: (a_cur - a_prev) / (p_prev - p_cur)
// The two branches are deliberately asymmetric.
double rate_segment(double p_prev, double p_cur, double a_prev, double a_cur);

enum class RateMode {
  kLiteral,    // average the signed rates
  kMagnitude,  // average |R_i|
};

RateMode parse_rate_mode(const std::string& name);
std::string to_string(RateMode mode);

// Mean of the transition rates of a validation-accuracy series.
double mrap_dataset(const AccuracySeries& series, RateMode mode = RateMode::kLiteral);

// Mean over datasets.
double mrap_model(const std::map<std::string, double>& per_dataset);

// Min-max normalisation into [0,1]; requires >= 2 entries with distinct extremes.
std::map<std::string, double> min_max_normalize(const std::map<std::string, double>& values);

// NMRAP across a model group.
std::map<std::string, double> nmrap(const std::map<std::string, double>& group);

struct MrapResult {
  std::map<std::string, std::map<std::string, double>> per_dataset;  // model -> dataset -> mrap
  std::map<std::string, double> model_mrap;
  std::optional<std::map<std::string, double>> nmrap;  // absent when the group is degenerate
};

MrapResult compute(const std::vector<AccuracySeries>& series, RateMode mode = RateMode::kLiteral);

// CSV: model,dataset,poison_percent,train_accuracy,val_accuracy
csv::Table series_to_table(const std::vector<AccuracySeries>& series);
std::vector<AccuracySeries> series_from_table(const csv::Table& table);

// CSV: model,dataset,mrap  and  model,mrap,nmrap
csv::Table dataset_mrap_table(const MrapResult& result);
csv::Table model_mrap_table(const MrapResult& result);

}  // namespace poisonbench::mrap
