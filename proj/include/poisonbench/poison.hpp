#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "poisonbench/corpus.hpp"

namespace poisonbench::poison {

struct PoisonSpec {
  double level_percent = 0.0;  // [0, 100]
  std::uint64_t seed = 0;
};

struct Flip {
  std::string id;
  corpus::Label original_label = 0;
  corpus::Label flipped_label = 0;
};

struct PoisonManifest {
  std::string dataset_name;
  double level_percent = 0.0;
  std::uint64_t seed = 0;
  std::size_t n_total = 0;
  std::vector<Flip> flips;  // in dataset order
};

// Number of labels to flip: level/100 * N rounded to nearest, ties to even.
std::size_t flip_count(double level_percent, std::size_t n);

// Toggle exactly flip_count(level, N) labels chosen uniformly without
// replacement. Only train-tagged datasets may be poisoned; the validation
// split stays untouched. Samples that are already poisoned toggle back.
std::pair<corpus::Dataset, PoisonManifest> flip_labels(const corpus::Dataset& train,
                                                       const PoisonSpec& spec);

// 100 * (#poisoned) / N.
double verify_level(const corpus::Dataset& dataset);

// `<stem>.csv` (id,original_label,flipped_label) plus `<stem>.json` sidecar.
void save_manifest(const PoisonManifest& manifest, const std::filesystem::path& csv_path);
PoisonManifest load_manifest(const std::filesystem::path& csv_path);

// Mark the samples named in `manifest` as poisoned, checking that each
// sample's current label equals the recorded flipped label.
corpus::Dataset apply_manifest(const corpus::Dataset& dataset, const PoisonManifest& manifest);

}  // namespace poisonbench::poison
