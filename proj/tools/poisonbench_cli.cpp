// poisonbench command line: poison, sweep, mrap, afplite, report.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "poisonbench/afplite.hpp"
#include "poisonbench/corpus.hpp"
#include "poisonbench/csv.hpp"
#include "poisonbench/error.hpp"
#include "poisonbench/harness.hpp"
#include "poisonbench/mrap.hpp"
#include "poisonbench/poison.hpp"
#include "poisonbench/report.hpp"

namespace fs = std::filesystem;
using namespace poisonbench;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  fs::path out_dir = "poisonbench_out";
  std::optional<std::int64_t> timestamp;
};

struct PoisonArgs {
  fs::path input;
  bool header = false;
  double level = 0.0;
};

struct SweepArgs {
  fs::path config;
  std::optional<std::size_t> threads;
  std::optional<std::string> mode;
};

struct MrapArgs {
  fs::path series;
  bool magnitude = false;
};

struct AfpliteArgs {
  fs::path input;
  bool header = false;
  std::optional<double> level;
  fs::path manifest;
  std::string provider = "bow";
  std::size_t min_frequency = 1;
  fs::path vectors;
  std::string pooling = "mean";
  fs::path embeddings;
  std::vector<double> taus;
  std::size_t m = 64;
  std::optional<std::size_t> n, t, k;
  double warmup = 0.10;
  std::string direction = "prune_hard";
  std::size_t threads = 1;
  std::string probe_config;
};

struct ReportArgs {
  fs::path series;
  fs::path cells;
  fs::path categories;
  bool magnitude = false;
};

void print_table(const csv::Table& t) { std::cout << csv::format(t); }

std::map<std::string, std::string> load_categories(const fs::path& path) {
  if (path.empty()) return {};
  try {
    return nlohmann::json::parse(csv::read_text(path)).get<std::map<std::string, std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

int run_poison(const Globals& g, const PoisonArgs& a) {
  auto ds = corpus::load_tsv(a.input, a.header);
  ds.split_tag = corpus::SplitTag::kTrain;
  const auto [poisoned, manifest] = poison::flip_labels(ds, {a.level, g.seed.value_or(0)});
  fs::create_directories(g.out_dir);
  const auto stem = a.input.stem().string() + "_p" + csv::fixed(a.level, 0);
  corpus::save_tsv(poisoned, g.out_dir / (stem + ".tsv"), a.header);
  poison::save_manifest(manifest, g.out_dir / (stem + "_manifest.csv"));
  std::printf("flipped %zu of %zu labels (%.4f%%) -> %s\n", manifest.flips.size(), manifest.n_total,
              poison::verify_level(poisoned), (g.out_dir / (stem + ".tsv")).string().c_str());
  return 0;
}

int run_sweep(const Globals& g, const SweepArgs& a) {
  auto cfg = harness::load_config(a.config);
  if (g.seed) cfg.seeds = {*g.seed};
  if (a.threads) cfg.threads = *a.threads;
  if (a.mode) cfg.rate_mode = mrap::parse_rate_mode(*a.mode);
  const auto sweep = harness::run_sweep(cfg);

  report::ReportInputs in;
  in.config = cfg;
  in.cells = sweep.cells;
  in.series = sweep.series;
  in.analysis = harness::analyze(sweep.series, cfg.category_map, cfg.rate_mode);
  in.timestamp = g.timestamp;
  const auto bundle = report::emit(in, g.out_dir);
  print_table(mrap::model_mrap_table(in.analysis->model_metrics));
  std::printf("wrote %zu files and %s\n", bundle.files.size(), bundle.manifest_path.string().c_str());
  return 0;
}

int run_mrap(const Globals& g, const MrapArgs& a) {
  const auto series = mrap::series_from_table(csv::read_file(a.series));
  const auto result = mrap::compute(series, a.magnitude ? mrap::RateMode::kMagnitude : mrap::RateMode::kLiteral);
  fs::create_directories(g.out_dir);
  csv::write_file(g.out_dir / "mrap.csv", mrap::dataset_mrap_table(result));
  csv::write_file(g.out_dir / "nmrap.csv", mrap::model_mrap_table(result));
  print_table(mrap::model_mrap_table(result));
  if (!result.nmrap) std::fprintf(stderr, "note: NMRAP undefined for this group (fewer than two distinct values)\n");
  return 0;
}

int run_afplite(const Globals& g, const AfpliteArgs& a) {
  if (a.level && !a.manifest.empty()) throw ValidationError("use either --level or --manifest, not both");
  auto ds = corpus::load_tsv(a.input, a.header);
  ds.split_tag = corpus::SplitTag::kTrain;
  if (a.level) {
    ds = poison::flip_labels(ds, {*a.level, g.seed.value_or(0)}).first;
  } else if (!a.manifest.empty()) {
    ds = poison::apply_manifest(ds, poison::load_manifest(a.manifest));
  }

  embed::ProviderSpec spec;
  if (a.provider == "bow") {
    spec.kind = embed::ProviderSpec::Kind::kBow;
    spec.min_frequency = a.min_frequency;
  } else if (a.provider == "pooled") {
    if (a.vectors.empty()) throw ValidationError("--provider pooled needs --vectors");
    spec.kind = embed::ProviderSpec::Kind::kPooled;
    spec.vectors_path = a.vectors;
    spec.pooling = embed::parse_pooling(a.pooling);
  } else if (a.provider == "external") {
    if (a.embeddings.empty()) throw ValidationError("--provider external needs --embeddings");
    spec.kind = embed::ProviderSpec::Kind::kExternal;
    spec.embeddings_path = a.embeddings;
  } else {
    throw ValidationError("unknown provider '" + a.provider + "'");
  }
  const auto provider = embed::Provider::from_spec(spec);

  linmod::TrainConfig probe;
  if (!a.probe_config.empty())
    probe = linmod::train_config_from_json(nlohmann::json::parse(csv::read_text(a.probe_config)));

  afplite::AfpliteParams params;
  params.m = a.m;
  params.n = a.n;
  params.t = a.t;
  params.k = a.k;
  params.warmup_fraction = a.warmup;
  params.seed = g.seed.value_or(0);
  params.direction = afplite::parse_direction(a.direction);
  params.threads = a.threads;

  report::ReportInputs in;
  in.timestamp = g.timestamp;
  for (double tau : a.taus.empty() ? afplite::default_tau_sweep() : a.taus) {
    params.tau = tau;
    in.afplite_reports.push_back(afplite::filter_dataset(ds, provider, params, probe));
  }
  const auto bundle = report::emit(in, g.out_dir);
  print_table(report::afplite_summary_table(in.afplite_reports));
  std::printf("wrote %zu files and %s\n", bundle.files.size(), bundle.manifest_path.string().c_str());
  return 0;
}

std::vector<harness::CellResult> load_cells(const fs::path& path) {
  const auto table = csv::read_file(path);
  if (table.header != report::per_seed_table({}).header)
    throw ParseError(path.string() + ": header must be " + csv::format({report::per_seed_table({}).header, {}}), 1);
  std::vector<harness::CellResult> cells;
  std::size_t line = 1;
  for (const auto& r : table.rows) {
    ++line;
    try {
      harness::CellResult c;
      c.model_id = r[0];
      c.dataset_id = r[1];
      c.poison_percent = std::stod(r[2]);
      c.seed = std::stoull(r[3]);
      c.train_accuracy = std::stod(r[4]);
      c.val_accuracy = std::stod(r[5]);
      c.realized_poison_percent = c.poison_percent;
      cells.push_back(std::move(c));
    } catch (const std::logic_error&) {
      throw ParseError(path.string() + ": malformed row", line);
    }
  }
  return cells;
}

int run_report(const Globals& g, const ReportArgs& a) {
  if (a.series.empty() == a.cells.empty()) throw ValidationError("give exactly one of --series or --cells");
  report::ReportInputs in;
  in.timestamp = g.timestamp;
  if (!a.cells.empty()) {
    in.cells = load_cells(a.cells);
    in.series = harness::average_over_seeds(in.cells);
  } else {
    in.series = mrap::series_from_table(csv::read_file(a.series));
  }
  const auto mode = a.magnitude ? mrap::RateMode::kMagnitude : mrap::RateMode::kLiteral;
  in.analysis = harness::analyze(in.series, load_categories(a.categories), mode);
  const auto bundle = report::emit(in, g.out_dir);
  std::printf("wrote %zu files and %s\n", bundle.files.size(), bundle.manifest_path.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Label-flip poisoning benchmark: poisoning, sweeps, MRAP/NMRAP and AFPLite filtering"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(report::kToolVersion));

  Globals g;
  app.add_option("--seed", g.seed, "Seed for poisoning and filtering (sweep: replaces the config's seed list)");
  app.add_option("--out-dir", g.out_dir, "Output directory")->capture_default_str();
  app.add_option("--timestamp", g.timestamp,
                 "Manifest timestamp in epoch seconds (default: SOURCE_DATE_EPOCH, else now)");

  PoisonArgs pa;
  auto* poison_cmd = app.add_subcommand("poison", "Flip a fraction of labels and write the poisoned TSV and manifest");
  poison_cmd->fallthrough();
  poison_cmd->add_option("--input", pa.input, "TSV corpus (id, label, text)")->required()->check(CLI::ExistingFile);
  poison_cmd->add_flag("--header", pa.header, "Input has a header row");
  poison_cmd->add_option("--level", pa.level, "Poison level in percent")->required()->check(CLI::Range(0.0, 100.0));

  SweepArgs sa;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run the (dataset x model x level x seed) sweep and write a report");
  sweep_cmd->fallthrough();
  sweep_cmd->add_option("--config", sa.config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--threads", sa.threads, "Worker threads (0 = all cores)");
  sweep_cmd->add_option("--mrap-mode", sa.mode, "literal or magnitude")->check(CLI::IsMember({"literal", "magnitude"}));

  MrapArgs ma;
  auto* mrap_cmd = app.add_subcommand("mrap", "Compute MRAP/NMRAP from an accuracy series CSV");
  mrap_cmd->fallthrough();
  mrap_cmd->add_option("--series", ma.series, "CSV: model,dataset,poison_percent,train_accuracy,val_accuracy")
      ->required()
      ->check(CLI::ExistingFile);
  mrap_cmd->add_flag("--magnitude", ma.magnitude, "Average |R_i| instead of signed rates");

  AfpliteArgs aa;
  auto* af_cmd = app.add_subcommand("afplite", "Score and prune low-predictability samples (tau sweep by default)");
  af_cmd->fallthrough();
  af_cmd->add_option("--input", aa.input, "TSV corpus")->required()->check(CLI::ExistingFile);
  af_cmd->add_flag("--header", aa.header, "Input has a header row");
  af_cmd->add_option("--level", aa.level, "Poison the input at this level first")->check(CLI::Range(0.0, 100.0));
  af_cmd->add_option("--manifest", aa.manifest, "Poison manifest marking which labels are flipped")
      ->check(CLI::ExistingFile);
  af_cmd->add_option("--provider", aa.provider, "bow, pooled or external")
      ->capture_default_str()
      ->check(CLI::IsMember({"bow", "pooled", "external"}));
  af_cmd->add_option("--min-frequency", aa.min_frequency, "BOW vocabulary cut-off")->capture_default_str();
  af_cmd->add_option("--vectors", aa.vectors, "Word-vector text file (pooled)")->check(CLI::ExistingFile);
  af_cmd->add_option("--pooling", aa.pooling, "mean or sum")->capture_default_str();
  af_cmd->add_option("--embeddings", aa.embeddings, "Per-sample embedding file (external)")->check(CLI::ExistingFile);
  af_cmd->add_option("--tau", aa.taus, "Threshold(s); default sweeps 0.1..1.0")->check(CLI::Range(0.0, 1.0));
  af_cmd->add_option("-m,--iterations", aa.m, "Probe iterations per round")->capture_default_str();
  af_cmd->add_option("-n,--min-size", aa.n, "Stop once |S| <= n (default 10% of the input)");
  af_cmd->add_option("-t,--train-size", aa.t, "Probe training size (default |S|/2, max 5000)");
  af_cmd->add_option("-k,--max-removals", aa.k, "Removals per round (default max(100, 5%))");
  af_cmd->add_option("--warmup", aa.warmup, "Warm-up fraction")->capture_default_str();
  af_cmd->add_option("--direction", aa.direction, "prune_hard or prune_easy")->capture_default_str();
  af_cmd->add_option("--threads", aa.threads, "Worker threads (0 = all cores)")->capture_default_str();
  af_cmd->add_option("--probe-config", aa.probe_config, "Trainer JSON for the probes")->check(CLI::ExistingFile);

  ReportArgs ra;
  auto* report_cmd = app.add_subcommand("report", "Build a report bundle from saved series or per-seed results");
  report_cmd->fallthrough();
  report_cmd->add_option("--series", ra.series, "accuracy_series.csv")->check(CLI::ExistingFile);
  report_cmd->add_option("--cells", ra.cells, "accuracy_per_seed.csv")->check(CLI::ExistingFile);
  report_cmd->add_option("--categories", ra.categories, "JSON object model -> category")->check(CLI::ExistingFile);
  report_cmd->add_flag("--magnitude", ra.magnitude, "Average |R_i| instead of signed rates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*poison_cmd) return run_poison(g, pa);
    if (*sweep_cmd) return run_sweep(g, sa);
    if (*mrap_cmd) return run_mrap(g, ma);
    if (*af_cmd) return run_afplite(g, aa);
    if (*report_cmd) return run_report(g, ra);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
