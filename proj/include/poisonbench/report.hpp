#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "poisonbench/afplite.hpp"
#include "poisonbench/harness.hpp"
#include "poisonbench/mrap.hpp"

namespace poisonbench::report {

inline constexpr const char* kToolVersion = "0.1.0";

struct ReportInputs {
  std::optional<harness::ExperimentConfig> config;
  std::vector<harness::CellResult> cells;
  std::vector<mrap::AccuracySeries> series;
  std::optional<harness::Analysis> analysis;
  std::vector<afplite::AfpliteReport> afplite_reports;
  // Seconds since the epoch stamped into the manifest. Defaults to
  // SOURCE_DATE_EPOCH when set, otherwise the current time.
  std::optional<std::int64_t> timestamp;
};

struct FileEntry {
  std::string name;
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct ReportBundle {
  std::filesystem::path directory;
  std::vector<FileEntry> files;  // excludes manifest.json itself
  std::filesystem::path manifest_path;
};

// Individual CSV tables (4-decimal fixed formatting, header always present).
csv::Table per_seed_table(const std::vector<harness::CellResult>& cells);
csv::Table gap_table(const std::vector<mrap::AccuracySeries>& series);
csv::Table normalized_accuracy_table(const harness::Analysis& analysis);
csv::Table dataset_difference_table(const std::vector<harness::DatasetDifference>& diffs);

// One row per filtering run:
// tau,direction,rounds,removed,removed_poisoned,precision,retained
csv::Table afplite_summary_table(const std::vector<afplite::AfpliteReport>& reports);

struct GapRow {
  std::string model_id;
  std::string dataset_id;
  double poison_percent = 0.0;
  double gap = 0.0;
};
std::vector<GapRow> gap_rows_from_table(const csv::Table& table);

// Writes every table, a full-precision results.json, then manifest.json
// listing each file with its SHA-256. Files are written atomically.
ReportBundle emit(const ReportInputs& inputs, const std::filesystem::path& out_dir);

// Recompute the checksums of the files listed in a manifest; true when all match.
bool verify_manifest(const std::filesystem::path& manifest_path);

std::int64_t resolve_timestamp(const std::optional<std::int64_t>& requested);

}  // namespace poisonbench::report
