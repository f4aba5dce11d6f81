#include "poisonbench/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "poisonbench/checksum.hpp"
#include "poisonbench/csv.hpp"
#include "poisonbench/error.hpp"
#include "poisonbench/poison.hpp"
#include "poisonbench/rng.hpp"

namespace poisonbench::harness {

namespace {

constexpr std::uint64_t kPoisonStream = 0x706f69736f6eULL;
constexpr std::uint64_t kTrainStream = 0x747261696eULL;

std::string_view to_string(embed::ProviderSpec::Kind kind) {
  switch (kind) {
    case embed::ProviderSpec::Kind::kBow:
      return "bow";
    case embed::ProviderSpec::Kind::kPooled:
      return "pooled";
    case embed::ProviderSpec::Kind::kExternal:
      return "external";
  }
  return "bow";
}

embed::ProviderSpec provider_from_json(const nlohmann::json& j, const std::filesystem::path& base) {
  embed::ProviderSpec spec;
  const auto kind = j.value("kind", std::string("bow"));
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
  };
  if (kind == "bow") {
    spec.kind = embed::ProviderSpec::Kind::kBow;
    spec.min_frequency = j.value("min_frequency", std::size_t{1});
  } else if (kind == "pooled") {
    spec.kind = embed::ProviderSpec::Kind::kPooled;
    spec.vectors_path = resolve(j.at("vectors").get<std::string>());
    spec.pooling = embed::parse_pooling(j.value("pooling", std::string("mean")));
  } else if (kind == "external") {
    spec.kind = embed::ProviderSpec::Kind::kExternal;
    spec.embeddings_path = resolve(j.at("embeddings").get<std::string>());
  } else {
    throw ValidationError("unknown provider kind '" + kind + "'");
  }
  return spec;
}

nlohmann::ordered_json provider_to_json(const embed::ProviderSpec& spec) {
  nlohmann::ordered_json j;
  j["kind"] = std::string(to_string(spec.kind));
  switch (spec.kind) {
    case embed::ProviderSpec::Kind::kBow:
      j["min_frequency"] = spec.min_frequency;
      break;
    case embed::ProviderSpec::Kind::kPooled:
      j["vectors"] = spec.vectors_path.generic_string();
      j["pooling"] = spec.pooling == embed::Pooling::kSum ? "sum" : "mean";
      break;
    case embed::ProviderSpec::Kind::kExternal:
      j["embeddings"] = spec.embeddings_path.generic_string();
      break;
  }
  return j;
}

std::string level_label(double level) { return csv::fixed(level, 2); }

// Features depend only on text, so they are computed once per (dataset, model)
// and shared by every poison level and seed.
struct FeatureCache {
  embed::EmbeddingMatrix train;
  embed::EmbeddingMatrix validation;
};

struct Job {
  std::size_t dataset_index;
  std::size_t model_index;
  double level;
  std::uint64_t seed;
};

}  // namespace

void validate(const ExperimentConfig& cfg) {
  if (cfg.datasets.empty()) throw ValidationError("config: at least one dataset is required");
  if (cfg.models.empty()) throw ValidationError("config: at least one model is required");
  if (cfg.poison_levels.empty()) throw ValidationError("config: poison_levels is empty");
  for (std::size_t i = 0; i < cfg.poison_levels.size(); ++i) {
    const double p = cfg.poison_levels[i];
    if (!(p >= 0.0 && p <= 100.0)) throw ValidationError("config: poison level outside [0,100]");
    if (i > 0 && !(cfg.poison_levels[i - 1] < p))
      throw ValidationError("config: poison_levels must be sorted ascending and unique");
  }
  if (cfg.seeds.empty()) throw ValidationError("config: seeds is empty");
  std::set<std::uint64_t> seeds(cfg.seeds.begin(), cfg.seeds.end());
  if (seeds.size() != cfg.seeds.size()) throw ValidationError("config: duplicate seed");
  std::set<std::string> names;
  for (const auto& d : cfg.datasets) {
    if (d.name.empty()) throw ValidationError("config: dataset without a name");
    if (!names.insert(d.name).second) throw ValidationError("config: duplicate dataset name '" + d.name + "'");
    if (!(d.train_fraction > 0.0 && d.train_fraction < 1.0))
      throw ValidationError("config: train_fraction of '" + d.name + "' must lie in (0,1)");
  }
  std::set<std::string> ids;
  for (const auto& m : cfg.models) {
    if (m.model_id.empty()) throw ValidationError("config: model without an id");
    if (!ids.insert(m.model_id).second) throw ValidationError("config: duplicate model id '" + m.model_id + "'");
    linmod::validate(m.trainer);
  }
  if (!cfg.category_map.empty())
    for (const auto& m : cfg.models)
      if (!cfg.category_map.contains(m.model_id))
        throw ValidationError("config: model '" + m.model_id + "' has no category");
}

ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  for (const auto& jd : j.at("datasets")) {
    DatasetSpec d;
    std::filesystem::path path(jd.at("path").get<std::string>());
    d.path = path.is_relative() && !base_dir.empty() ? base_dir / path : path;
    d.name = jd.value("name", path.stem().string());
    d.has_header = jd.value("has_header", false);
    d.train_fraction = jd.value("train_fraction", 0.8);
    d.split_seed = jd.value("split_seed", std::uint64_t{0});
    cfg.datasets.push_back(std::move(d));
  }
  for (const auto& jm : j.at("models")) {
    ModelSpec m;
    m.model_id = jm.at("id").get<std::string>();
    m.provider = provider_from_json(jm.value("provider", nlohmann::json::object()), base_dir);
    m.trainer = linmod::train_config_from_json(jm.value("trainer", nlohmann::json::object()));
    cfg.models.push_back(std::move(m));
  }
  if (j.contains("poison_levels")) cfg.poison_levels = j.at("poison_levels").get<std::vector<double>>();
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  if (j.contains("categories")) cfg.category_map = j.at("categories").get<std::map<std::string, std::string>>();
  if (j.contains("mrap_mode")) cfg.rate_mode = mrap::parse_rate_mode(j.at("mrap_mode").get<std::string>());
  if (j.contains("label_interpretation")) {
    const auto v = j.at("label_interpretation").get<std::string>();
    if (v == "majority")
      cfg.label_interpretation = LabelInterpretation::kMajority;
    else if (v == "literal")
      cfg.label_interpretation = LabelInterpretation::kLiteral;
    else
      throw ValidationError("unknown label_interpretation '" + v + "'");
  }
  cfg.threads = j.value("threads", std::size_t{1});
  validate(cfg);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(csv::read_text(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

nlohmann::ordered_json to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  auto datasets = nlohmann::ordered_json::array();
  for (const auto& d : cfg.datasets)
    datasets.push_back({{"name", d.name},
                        {"path", d.path.generic_string()},
                        {"has_header", d.has_header},
                        {"train_fraction", d.train_fraction},
                        {"split_seed", d.split_seed}});
  j["datasets"] = std::move(datasets);
  auto models = nlohmann::ordered_json::array();
  for (const auto& m : cfg.models)
    models.push_back({{"id", m.model_id},
                      {"provider", provider_to_json(m.provider)},
                      {"trainer", linmod::to_json(m.trainer)}});
  j["models"] = std::move(models);
  j["poison_levels"] = cfg.poison_levels;
  j["seeds"] = cfg.seeds;
  j["categories"] = cfg.category_map;
  j["mrap_mode"] = mrap::to_string(cfg.rate_mode);
  j["label_interpretation"] =
      cfg.label_interpretation == LabelInterpretation::kMajority ? "majority" : "literal";
  return j;
}

std::string config_hash(const ExperimentConfig& cfg) { return sha256_hex(to_json(cfg).dump()); }

std::uint64_t poison_seed(std::uint64_t cell_seed) { return derive_seed(cell_seed, kPoisonStream); }

std::uint64_t trainer_seed(std::uint64_t cell_seed, std::uint64_t configured_trainer_seed) {
  return derive_seed(cell_seed, kTrainStream, configured_trainer_seed);
}

SweepResult run_sweep(const ExperimentConfig& cfg) {
  validate(cfg);
  std::vector<corpus::Dataset> datasets;
  datasets.reserve(cfg.datasets.size());
  for (const auto& d : cfg.datasets) {
    try {
      datasets.push_back(corpus::load_tsv(d.path, d.has_header, d.name));
    } catch (const Error& e) {
      throw Error("dataset '" + d.name + "': " + e.what());
    }
  }
  return run_sweep(cfg, datasets);
}

SweepResult run_sweep(const ExperimentConfig& cfg, const std::vector<corpus::Dataset>& datasets) {
  validate(cfg);
  if (datasets.size() != cfg.datasets.size())
    throw ValidationError("run_sweep: " + std::to_string(datasets.size()) + " datasets given, config lists " +
                          std::to_string(cfg.datasets.size()));

  std::vector<std::pair<corpus::Dataset, corpus::Dataset>> splits;
  for (std::size_t i = 0; i < datasets.size(); ++i) {
    auto ds = datasets[i];
    ds.name = cfg.datasets[i].name;
    splits.push_back(corpus::split(ds, cfg.datasets[i].train_fraction, cfg.datasets[i].split_seed));
  }

  std::vector<embed::Provider> providers;
  for (const auto& m : cfg.models) {
    try {
      providers.push_back(embed::Provider::from_spec(m.provider));
    } catch (const Error& e) {
      throw Error("model '" + m.model_id + "': " + e.what());
    }
  }

  std::vector<std::vector<FeatureCache>> features(datasets.size());
  for (std::size_t d = 0; d < datasets.size(); ++d) {
    for (std::size_t m = 0; m < cfg.models.size(); ++m) {
      try {
        const auto fitted = providers[m].fitted(splits[d].first);
        features[d].push_back({fitted.embed(splits[d].first), fitted.embed(splits[d].second)});
      } catch (const Error& e) {
        throw Error("(" + cfg.datasets[d].name + ", " + cfg.models[m].model_id + "): " + e.what());
      }
    }
  }

  std::vector<Job> jobs;
  for (std::size_t d = 0; d < datasets.size(); ++d)
    for (std::size_t m = 0; m < cfg.models.size(); ++m)
      for (double level : cfg.poison_levels)
        for (auto seed : cfg.seeds) jobs.push_back({d, m, level, seed});

  std::vector<CellResult> cells(jobs.size());
  auto run_job = [&](std::size_t index) {
    const auto& job = jobs[index];
    const auto& [train, validation] = splits[job.dataset_index];
    const auto& model_spec = cfg.models[job.model_index];
    const auto& feats = features[job.dataset_index][job.model_index];
    try {
      const auto [poisoned, manifest] =
          poison::flip_labels(train, {job.level, poison_seed(job.seed)});
      auto trainer = model_spec.trainer;
      trainer.seed = trainer_seed(job.seed, model_spec.trainer.seed);
      const auto train_labels = poisoned.labels();
      const auto model = linmod::train(feats.train, train_labels, trainer);

      const auto train_pred = linmod::predict(model, feats.train);
      auto val_pred = linmod::predict(model, feats.validation);
      if (cfg.label_interpretation == LabelInterpretation::kMajority && job.level > 50.0)
        for (auto& p : val_pred) p = 1 - p;
      const auto val_labels = validation.labels();

      CellResult& cell = cells[index];
      cell.dataset_id = cfg.datasets[job.dataset_index].name;
      cell.model_id = model_spec.model_id;
      cell.poison_percent = job.level;
      cell.seed = job.seed;
      cell.train_accuracy = 100.0 * linmod::accuracy(train_pred, train_labels);
      cell.val_accuracy = 100.0 * linmod::accuracy(val_pred, val_labels);
      cell.realized_poison_percent = poison::verify_level(poisoned);
      cell.validation_digest = sha256_hex(corpus::format_tsv(validation, false));
    } catch (const Error& e) {
      throw Error("(" + cfg.datasets[job.dataset_index].name + ", " + model_spec.model_id + ", level " +
                  level_label(job.level) + ", seed " + std::to_string(job.seed) + "): " + e.what());
    }
  };

  std::size_t workers = cfg.threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.threads;
  workers = std::min(workers, jobs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) run_job(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::mutex failure_mutex;
    std::exception_ptr failure;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < jobs.size(); i = next++) {
          try {
            run_job(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
            return;
          }
        }
      });
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);
  }

  std::sort(cells.begin(), cells.end(), [](const CellResult& a, const CellResult& b) {
    return std::tie(a.dataset_id, a.model_id, a.poison_percent, a.seed) <
           std::tie(b.dataset_id, b.model_id, b.poison_percent, b.seed);
  });
  SweepResult result;
  result.series = average_over_seeds(cells);
  result.cells = std::move(cells);
  return result;
}

std::vector<mrap::AccuracySeries> average_over_seeds(const std::vector<CellResult>& cells) {
  // (model, dataset) -> level -> seed -> cell
  std::map<std::pair<std::string, std::string>, std::map<double, std::map<std::uint64_t, const CellResult*>>>
      grouped;
  for (const auto& c : cells) {
    auto& slot = grouped[{c.model_id, c.dataset_id}][c.poison_percent][c.seed];
    if (slot) throw ValidationError("duplicate cell for seed " + std::to_string(c.seed));
    slot = &c;
  }
  std::vector<mrap::AccuracySeries> out;
  for (const auto& [key, levels] : grouped) {
    mrap::AccuracySeries s{key.first, key.second, {}};
    for (const auto& [level, by_seed] : levels) {
      double train = 0.0, val = 0.0;
      for (const auto& [seed, cell] : by_seed) {
        train += cell->train_accuracy;
        val += cell->val_accuracy;
      }
      const auto n = static_cast<double>(by_seed.size());
      s.points.push_back({level, val / n, train / n});
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<GapPoint> generalization_gap(const mrap::AccuracySeries& series) {
  std::vector<GapPoint> out;
  out.reserve(series.points.size());
  for (const auto& p : series.points) out.push_back({p.poison_percent, p.train_accuracy - p.val_accuracy});
  return out;
}

std::vector<mrap::AccuracySeries> categorize(const std::vector<mrap::AccuracySeries>& series,
                                             const std::map<std::string, std::string>& category_map) {
  // (category, dataset) -> members
  std::map<std::pair<std::string, std::string>, std::vector<const mrap::AccuracySeries*>> groups;
  for (const auto& s : series) {
    auto it = category_map.find(s.model_id);
    if (it == category_map.end()) throw ValidationError("model '" + s.model_id + "' has no category");
    groups[{it->second, s.dataset_id}].push_back(&s);
  }
  std::vector<mrap::AccuracySeries> out;
  for (const auto& [key, members] : groups) {
    const auto& first = *members.front();
    mrap::AccuracySeries cat{key.first, key.second, first.points};
    for (std::size_t i = 0; i < cat.points.size(); ++i) {
      double val = 0.0, train = 0.0;
      for (const auto* m : members) {
        if (m->points.size() != first.points.size() ||
            m->points[i].poison_percent != first.points[i].poison_percent)
          throw ValidationError("category '" + key.first + "': members have different poison levels");
        val += m->points[i].val_accuracy;
        train += m->points[i].train_accuracy;
      }
      const auto n = static_cast<double>(members.size());
      cat.points[i].val_accuracy = val / n;
      cat.points[i].train_accuracy = train / n;
    }
    out.push_back(std::move(cat));
  }
  return out;
}

std::map<std::string, double> normalize_accuracy(const std::map<std::string, double>& accuracies) {
  return mrap::min_max_normalize(accuracies);
}

std::map<std::string, double> clean_accuracy(const std::vector<mrap::AccuracySeries>& series) {
  std::map<std::string, std::pair<double, std::size_t>> acc;
  for (const auto& s : series) {
    if (s.points.empty()) continue;
    auto& slot = acc[s.model_id];
    slot.first += s.points.front().val_accuracy;
    slot.second += 1;
  }
  std::map<std::string, double> out;
  for (const auto& [model, sum_count] : acc) out[model] = sum_count.first / static_cast<double>(sum_count.second);
  return out;
}

std::vector<DatasetDifference> dataset_difference(const std::vector<mrap::AccuracySeries>& series) {
  std::set<std::string> dataset_ids;
  for (const auto& s : series) dataset_ids.insert(s.dataset_id);
  if (dataset_ids.size() != 2) return {};
  const std::string first = *dataset_ids.begin();
  const std::string second = *std::next(dataset_ids.begin());

  std::map<std::string, std::pair<const mrap::AccuracySeries*, const mrap::AccuracySeries*>> by_model;
  for (const auto& s : series) (s.dataset_id == first ? by_model[s.model_id].first : by_model[s.model_id].second) = &s;

  std::vector<DatasetDifference> out;
  for (const auto& [model, pair] : by_model) {
    if (!pair.first || !pair.second) continue;
    for (const auto& a : pair.first->points)
      for (const auto& b : pair.second->points)
        if (a.poison_percent == b.poison_percent)
          out.push_back({model, a.poison_percent, std::abs(a.val_accuracy - b.val_accuracy)});
  }
  return out;
}

Analysis analyze(const std::vector<mrap::AccuracySeries>& series,
                 const std::map<std::string, std::string>& category_map, mrap::RateMode mode) {
  Analysis a;
  a.model_metrics = mrap::compute(series, mode);
  if (!category_map.empty()) {
    a.category_series = categorize(series, category_map);
    a.category_metrics = mrap::compute(a.category_series, mode);
  }
  a.clean_accuracy = clean_accuracy(series);
  try {
    a.normalized_accuracy = normalize_accuracy(a.clean_accuracy);
  } catch (const ValidationError&) {
    a.normalized_accuracy.reset();
  }
  a.dataset_differences = dataset_difference(series);
  return a;
}

}  // namespace poisonbench::harness
