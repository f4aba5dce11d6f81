#include "poisonbench/report.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <set>

#include "poisonbench/checksum.hpp"
#include "poisonbench/error.hpp"

namespace poisonbench::report {

namespace {

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used == s.size()) return v;
  } catch (const std::exception&) {
  }
  throw ParseError("not a number: '" + s + "'", line);
}

nlohmann::ordered_json series_json(const std::vector<mrap::AccuracySeries>& series) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : series) {
    auto pts = nlohmann::ordered_json::array();
    for (const auto& p : s.points)
      pts.push_back({{"poison_percent", p.poison_percent},
                     {"train_accuracy", p.train_accuracy},
                     {"val_accuracy", p.val_accuracy}});
    arr.push_back({{"model", s.model_id}, {"dataset", s.dataset_id}, {"points", std::move(pts)}});
  }
  return arr;
}

nlohmann::ordered_json metrics_json(const mrap::MrapResult& m) {
  nlohmann::ordered_json j;
  j["per_dataset"] = m.per_dataset;
  j["model_mrap"] = m.model_mrap;
  j["nmrap"] = m.nmrap ? nlohmann::ordered_json(*m.nmrap) : nlohmann::ordered_json(nullptr);
  return j;
}

std::string iso8601(std::int64_t seconds) {
  const std::time_t t = static_cast<std::time_t>(seconds);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class BundleWriter {
 public:
  explicit BundleWriter(std::filesystem::path dir) : dir_(std::move(dir)) {}

  void table(const std::string& name, const csv::Table& t) { text(name, csv::format(t)); }

  void text(const std::string& name, const std::string& content) {
    const auto path = dir_ / name;
    csv::write_text_atomic(path, content);
    files_.push_back({name, sha256_hex(content), content.size()});
  }

  std::vector<FileEntry> files() const { return files_; }

 private:
  std::filesystem::path dir_;
  std::vector<FileEntry> files_;
};

}  // namespace

std::int64_t resolve_timestamp(const std::optional<std::int64_t>& requested) {
  if (requested) return *requested;
  if (const char* env = std::getenv("SOURCE_DATE_EPOCH")) {
    char* end = nullptr;
    const long long v = std::strtoll(env, &end, 10);
    if (end && *end == '\0') return v;
  }
  return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

csv::Table per_seed_table(const std::vector<harness::CellResult>& cells) {
  csv::Table t{{"model", "dataset", "poison_percent", "seed", "train_accuracy", "val_accuracy"}, {}};
  for (const auto& c : cells)
    t.rows.push_back({c.model_id, c.dataset_id, csv::fixed(c.poison_percent), std::to_string(c.seed),
                      csv::fixed(c.train_accuracy), csv::fixed(c.val_accuracy)});
  return t;
}

csv::Table gap_table(const std::vector<mrap::AccuracySeries>& series) {
  csv::Table t{{"model", "dataset", "poison_percent", "gap"}, {}};
  for (const auto& s : series)
    for (const auto& g : harness::generalization_gap(s))
      t.rows.push_back({s.model_id, s.dataset_id, csv::fixed(g.poison_percent), csv::fixed(g.gap)});
  return t;
}

std::vector<GapRow> gap_rows_from_table(const csv::Table& table) {
  if (table.header != std::vector<std::string>{"model", "dataset", "poison_percent", "gap"})
    throw ParseError("gap CSV header must be model,dataset,poison_percent,gap", 1);
  std::vector<GapRow> rows;
  std::size_t line = 1;
  for (const auto& r : table.rows) {
    ++line;
    rows.push_back({r[0], r[1], parse_double(r[2], line), parse_double(r[3], line)});
  }
  return rows;
}

csv::Table normalized_accuracy_table(const harness::Analysis& analysis) {
  csv::Table t{{"model", "clean_accuracy", "normalized_accuracy", "nmrap"}, {}};
  const auto& nm = analysis.model_metrics.nmrap;
  for (const auto& [model, acc] : analysis.clean_accuracy) {
    const std::string norm =
        analysis.normalized_accuracy ? csv::fixed(analysis.normalized_accuracy->at(model)) : "";
    const std::string nmrap = nm && nm->contains(model) ? csv::fixed(nm->at(model)) : "";
    t.rows.push_back({model, csv::fixed(acc), norm, nmrap});
  }
  return t;
}

csv::Table dataset_difference_table(const std::vector<harness::DatasetDifference>& diffs) {
  csv::Table t{{"model", "poison_percent", "abs_difference"}, {}};
  for (const auto& d : diffs) t.rows.push_back({d.model_id, csv::fixed(d.poison_percent), csv::fixed(d.abs_difference)});
  return t;
}

csv::Table afplite_summary_table(const std::vector<afplite::AfpliteReport>& reports) {
  csv::Table t{{"tau", "direction", "rounds", "removed", "removed_poisoned", "precision", "retained"}, {}};
  for (const auto& r : reports) {
    std::set<std::string> poisoned;
    if (!r.rounds.empty())
      for (const auto& s : r.rounds.front().scores)
        if (s.poisoned) poisoned.insert(s.sample_id);
    std::size_t removed = 0, hits = 0;
    for (const auto& round : r.rounds)
      for (const auto& id : round.removed_ids) {
        ++removed;
        hits += poisoned.count(id);
      }
    const std::string precision =
        removed == 0 ? "" : csv::fixed(static_cast<double>(hits) / static_cast<double>(removed));
    t.rows.push_back({csv::fixed(r.params.tau),
                      afplite::to_string(r.params.direction),
                      std::to_string(r.rounds.size()), std::to_string(removed), std::to_string(hits), precision,
                      std::to_string(r.final_retained_ids.size())});
  }
  return t;
}

ReportBundle emit(const ReportInputs& inputs, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());

  BundleWriter w(out_dir);
  w.table("accuracy_series.csv", mrap::series_to_table(inputs.series));
  w.table("accuracy_per_seed.csv", per_seed_table(inputs.cells));
  w.table("generalization_gap.csv", gap_table(inputs.series));

  const harness::Analysis empty_analysis;
  const auto& analysis = inputs.analysis ? *inputs.analysis : empty_analysis;
  w.table("mrap.csv", mrap::dataset_mrap_table(analysis.model_metrics));
  w.table("nmrap.csv", mrap::model_mrap_table(analysis.model_metrics));
  w.table("category_series.csv", mrap::series_to_table(analysis.category_series));
  w.table("category_nmrap.csv", analysis.category_metrics ? mrap::model_mrap_table(*analysis.category_metrics)
                                                          : mrap::model_mrap_table({}));
  w.table("normalized_accuracy.csv", normalized_accuracy_table(analysis));
  w.table("dataset_difference.csv", dataset_difference_table(analysis.dataset_differences));

  if (!inputs.afplite_reports.empty()) {
    const auto& first = inputs.afplite_reports.front();
    w.table("afplite_bins.csv", afplite::bins_table(first.bins));
    w.table("afplite_scores.csv", afplite::scores_table(first.rounds.empty() ? std::vector<afplite::PredictabilityRecord>{}
                                                                             : first.rounds.front().scores));
    w.table("afplite_summary.csv", afplite_summary_table(inputs.afplite_reports));
    auto runs = nlohmann::ordered_json::array();
    for (const auto& r : inputs.afplite_reports) runs.push_back(afplite::to_json(r));
    w.text("afplite_report.json", runs.dump(2) + "\n");
  }

  nlohmann::ordered_json results;
  results["series"] = series_json(inputs.series);
  auto cells = nlohmann::ordered_json::array();
  for (const auto& c : inputs.cells)
    cells.push_back({{"model", c.model_id},
                     {"dataset", c.dataset_id},
                     {"poison_percent", c.poison_percent},
                     {"seed", c.seed},
                     {"train_accuracy", c.train_accuracy},
                     {"val_accuracy", c.val_accuracy},
                     {"realized_poison_percent", c.realized_poison_percent}});
  results["cells"] = std::move(cells);
  if (inputs.analysis) {
    results["metrics"] = metrics_json(analysis.model_metrics);
    if (analysis.category_metrics) results["category_metrics"] = metrics_json(*analysis.category_metrics);
    results["category_series"] = series_json(analysis.category_series);
  }
  w.text("results.json", results.dump(2) + "\n");

  ReportBundle bundle{out_dir, w.files(), out_dir / "manifest.json"};
  const auto ts = resolve_timestamp(inputs.timestamp);
  nlohmann::ordered_json manifest;
  manifest["tool"] = "poisonbench";
  manifest["version"] = kToolVersion;
  manifest["created_at"] = iso8601(ts);
  manifest["created_at_epoch"] = ts;
  if (inputs.config) {
    manifest["config_hash"] = harness::config_hash(*inputs.config);
    manifest["seeds"] = inputs.config->seeds;
  }
  auto files = nlohmann::ordered_json::array();
  for (const auto& f : bundle.files) files.push_back({{"name", f.name}, {"sha256", f.sha256}, {"bytes", f.bytes}});
  manifest["files"] = std::move(files);
  csv::write_text_atomic(bundle.manifest_path, manifest.dump(2) + "\n");
  return bundle;
}

bool verify_manifest(const std::filesystem::path& manifest_path) {
  const auto manifest = nlohmann::json::parse(csv::read_text(manifest_path));
  const auto dir = manifest_path.parent_path();
  for (const auto& f : manifest.at("files")) {
    const auto path = dir / f.at("name").get<std::string>();
    if (!std::filesystem::exists(path)) return false;
    if (sha256_file(path) != f.at("sha256").get<std::string>()) return false;
  }
  return true;
}

}  // namespace poisonbench::report
