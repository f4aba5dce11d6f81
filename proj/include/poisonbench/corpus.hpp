#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace poisonbench::corpus {

using Label = int;  // always 0 or 1

struct Sample {
  std::string id;
  std::string text;
  Label label = 0;
  Label original_label = 0;
  bool poisoned = false;
};

enum class SplitTag { kTrain, kValidation, kFull };

std::string_view to_string(SplitTag tag);

// An ordered, validated collection of binary-labelled samples.
// Invariants (checked by `validate`): non-empty, unique ids, labels in {0,1},
// poisoned == (label != original_label).
struct Dataset {
  std::string name;
  std::vector<Sample> samples;
  SplitTag split_tag = SplitTag::kFull;

  std::size_t size() const { return samples.size(); }
  std::vector<Label> labels() const;
  std::vector<Label> original_labels() const;
  std::vector<bool> poisoned_flags() const;
  std::vector<std::string> ids() const;
};

// Throws ValidationError on the first broken invariant.
void validate(const Dataset& dataset);

// Parse a label field: 0/1 or negative/positive (case-insensitive).
// Returns -1 when the field is not a recognised label.
Label parse_label(std::string_view field);

// id<TAB>label<TAB>text rows, optional `id\tlabel\ttext` header.
// `name` defaults to the file stem.
Dataset load_tsv(const std::filesystem::path& path, bool has_header, std::string name = {});
Dataset parse_tsv(std::string_view content, bool has_header, std::string name);

// Labels are written as 0/1. Rows are LF-terminated.
void save_tsv(const Dataset& dataset, const std::filesystem::path& path, bool write_header);
std::string format_tsv(const Dataset& dataset, bool write_header);

// Deterministic train/validation partition. Train receives
// floor(train_fraction * N) samples; both parts keep the input's relative order.
std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed);

}  // namespace poisonbench::corpus
