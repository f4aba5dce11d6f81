#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poisonbench/corpus.hpp"
#include "poisonbench/embed.hpp"
#include "poisonbench/linmod.hpp"
#include "poisonbench/mrap.hpp"

namespace poisonbench::harness {

struct DatasetSpec {
  std::string name;
  std::filesystem::path path;
  bool has_header = false;
  double train_fraction = 0.8;
  std::uint64_t split_seed = 0;
};

struct ModelSpec {
  std::string model_id;
  embed::ProviderSpec provider;
  linmod::TrainConfig trainer;
};

// How validation predictions are read once most training labels are flipped.
enum class LabelInterpretation {
  // Above 50% poisoning the learned class names are swapped back before
  // scoring against the validation labels (produces the V-shaped curve).
  kMajority,
  // Raw predictions against validation labels.
  kLiteral,
};

struct ExperimentConfig {
  std::vector<DatasetSpec> datasets;
  std::vector<ModelSpec> models;
  std::vector<double> poison_levels{0, 30, 50, 70, 90};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::map<std::string, std::string> category_map;  // model_id -> category
  mrap::RateMode rate_mode = mrap::RateMode::kLiteral;
  LabelInterpretation label_interpretation = LabelInterpretation::kMajority;
  std::size_t threads = 1;  // 0 = hardware concurrency
};

void validate(const ExperimentConfig& cfg);

// Relative paths in the JSON are resolved against `base_dir`.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const ExperimentConfig& cfg);
// SHA-256 of the canonical JSON rendering.
std::string config_hash(const ExperimentConfig& cfg);

// One (dataset, model, level, seed) job.
struct CellResult {
  std::string dataset_id;
  std::string model_id;
  double poison_percent = 0.0;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;  // percent, against the labels the model was trained on
  double val_accuracy = 0.0;    // percent, against the untouched validation labels
  double realized_poison_percent = 0.0;
  std::string validation_digest;  // SHA-256 of the validation split as TSV
};

struct SweepResult {
  std::vector<CellResult> cells;               // sorted by (dataset, model, level, seed)
  std::vector<mrap::AccuracySeries> series;    // seed-averaged, sorted by (model, dataset)
};

// Seeds a sweep cell uses, so any single cell can be reproduced by hand.
std::uint64_t poison_seed(std::uint64_t cell_seed);
std::uint64_t trainer_seed(std::uint64_t cell_seed, std::uint64_t configured_trainer_seed);

SweepResult run_sweep(const ExperimentConfig& cfg);
// Same, with datasets already in memory (names must match cfg.datasets order).
SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<corpus::Dataset>& datasets);

// Seed-averaged series from per-seed cells. Averaging walks seeds in sorted
// order, so the result does not depend on the order seeds were listed.
std::vector<mrap::AccuracySeries> average_over_seeds(const std::vector<CellResult>& cells);

struct GapPoint {
  double poison_percent = 0.0;
  double gap = 0.0;  // train - validation, may be negative
};
std::vector<GapPoint> generalization_gap(const mrap::AccuracySeries& series);

// Per (category, dataset, level) unweighted mean of member accuracies.
std::vector<mrap::AccuracySeries> categorize(const std::vector<mrap::AccuracySeries>& series,
                                             const std::map<std::string, std::string>& category_map);

// Min-max normalised accuracies, same form as NMRAP.
std::map<std::string, double> normalize_accuracy(const std::map<std::string, double>& accuracies);

// Validation accuracy at the lowest poison level, averaged over datasets.
std::map<std::string, double> clean_accuracy(const std::vector<mrap::AccuracySeries>& series);

struct DatasetDifference {
  std::string model_id;
  double poison_percent = 0.0;
  double abs_difference = 0.0;  // |A_first - A_second|
};
// Only defined when exactly two datasets are present; empty otherwise.
std::vector<DatasetDifference> dataset_difference(const std::vector<mrap::AccuracySeries>& series);

struct Analysis {
  mrap::MrapResult model_metrics;
  std::vector<mrap::AccuracySeries> category_series;
  std::optional<mrap::MrapResult> category_metrics;
  std::map<std::string, double> clean_accuracy;
  std::optional<std::map<std::string, double>> normalized_accuracy;
  std::vector<DatasetDifference> dataset_differences;
};

Analysis analyze(const std::vector<mrap::AccuracySeries>& series,
                 const std::map<std::string, std::string>& category_map, mrap::RateMode mode);

}  // namespace poisonbench::harness
