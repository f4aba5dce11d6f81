#include "poisonbench/poison.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "poisonbench/csv.hpp"
#include "poisonbench/error.hpp"
#include "poisonbench/rng.hpp"

namespace poisonbench::poison {

std::size_t flip_count(double level_percent, std::size_t n) {
  if (!(level_percent >= 0.0 && level_percent <= 100.0))
    throw ValidationError("poison level must lie in [0,100], got " + std::to_string(level_percent));
  // level * N is exact for integral levels, so ties are detected exactly.
  const double raw = level_percent * static_cast<double>(n) / 100.0;
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double rounded = std::nearbyint(raw);
  std::fesetround(saved);
  return std::min(n, static_cast<std::size_t>(rounded));
}

std::pair<corpus::Dataset, PoisonManifest> flip_labels(const corpus::Dataset& train,
                                                       const PoisonSpec& spec) {
  if (train.split_tag == corpus::SplitTag::kValidation)
    throw ValidationError("refusing to poison validation split of '" + train.name + "'");
  corpus::validate(train);
  const std::size_t n = train.size();
  const std::size_t k = flip_count(spec.level_percent, n);

  Rng rng(spec.seed);
  std::vector<bool> chosen(n, false);
  if (2 * k <= n) {
    for (auto idx : sample_without_replacement(n, k, rng)) chosen[idx] = true;
  } else {
    // Above half: flip everything, then keep a uniformly chosen N-k unflipped.
    // Same distribution as choosing k directly.
    std::fill(chosen.begin(), chosen.end(), true);
    for (auto idx : sample_without_replacement(n, n - k, rng)) chosen[idx] = false;
  }

  corpus::Dataset out = train;
  PoisonManifest manifest{train.name, spec.level_percent, spec.seed, n, {}};
  manifest.flips.reserve(k);
  for (std::size_t i = 0; i < n; ++i) {
    if (!chosen[i]) continue;
    auto& s = out.samples[i];
    const corpus::Label before = s.label;
    s.label = 1 - s.label;
    s.poisoned = s.label != s.original_label;
    manifest.flips.push_back({s.id, before, s.label});
  }
  return {std::move(out), std::move(manifest)};
}

double verify_level(const corpus::Dataset& dataset) {
  if (dataset.samples.empty()) return 0.0;
  const auto poisoned = std::count_if(dataset.samples.begin(), dataset.samples.end(),
                                      [](const corpus::Sample& s) { return s.poisoned; });
  return 100.0 * static_cast<double>(poisoned) / static_cast<double>(dataset.size());
}

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& csv_path) {
  auto p = csv_path;
  p.replace_extension(".json");
  return p;
}

}  // namespace

void save_manifest(const PoisonManifest& manifest, const std::filesystem::path& csv_path) {
  csv::Table table{{"id", "original_label", "flipped_label"}, {}};
  table.rows.reserve(manifest.flips.size());
  for (const auto& f : manifest.flips)
    table.rows.push_back({f.id, std::to_string(f.original_label), std::to_string(f.flipped_label)});
  csv::write_file(csv_path, table);

  nlohmann::ordered_json meta;
  meta["dataset"] = manifest.dataset_name;
  meta["level_percent"] = manifest.level_percent;
  meta["seed"] = manifest.seed;
  meta["n_total"] = manifest.n_total;
  meta["n_flipped"] = manifest.flips.size();
  std::ofstream out(sidecar_path(csv_path), std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + sidecar_path(csv_path).string());
  out << meta.dump(2) << '\n';
}

PoisonManifest load_manifest(const std::filesystem::path& csv_path) {
  const auto table = csv::read_file(csv_path);
  if (table.header != std::vector<std::string>{"id", "original_label", "flipped_label"})
    throw ParseError("poison manifest header must be id,original_label,flipped_label", 1);
  PoisonManifest manifest;
  std::size_t line = 1;
  for (const auto& row : table.rows) {
    ++line;
    const auto orig = corpus::parse_label(row.at(1));
    const auto flipped = corpus::parse_label(row.at(2));
    if (orig < 0 || flipped < 0) throw ParseError("invalid label in poison manifest", line);
    if (orig == flipped) throw ValidationError("manifest flip for '" + row[0] + "' does not change the label");
    manifest.flips.push_back({row[0], orig, flipped});
  }
  const auto side = sidecar_path(csv_path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    const auto meta = nlohmann::json::parse(in);
    manifest.dataset_name = meta.value("dataset", std::string{});
    manifest.level_percent = meta.value("level_percent", 0.0);
    manifest.seed = meta.value("seed", std::uint64_t{0});
    manifest.n_total = meta.value("n_total", std::size_t{0});
  }
  return manifest;
}

corpus::Dataset apply_manifest(const corpus::Dataset& dataset, const PoisonManifest& manifest) {
  corpus::Dataset out = dataset;
  std::unordered_map<std::string_view, std::size_t> index;
  for (std::size_t i = 0; i < out.samples.size(); ++i) index.emplace(out.samples[i].id, i);
  for (const auto& f : manifest.flips) {
    auto it = index.find(f.id);
    if (it == index.end()) throw ValidationError("manifest names unknown sample '" + f.id + "'");
    auto& s = out.samples[it->second];
    if (s.label != f.flipped_label)
      throw ValidationError("sample '" + f.id + "' label does not match manifest");
    s.original_label = f.original_label;
    s.poisoned = s.label != s.original_label;
  }
  return out;
}

}  // namespace poisonbench::poison
