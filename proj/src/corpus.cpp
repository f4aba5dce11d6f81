#include "poisonbench/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

#include "poisonbench/error.hpp"
#include "poisonbench/rng.hpp"

namespace poisonbench::corpus {

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kTrain:
      return "train";
    case SplitTag::kValidation:
      return "validation";
    case SplitTag::kFull:
      return "full";
  }
  return "full";
}

std::vector<Label> Dataset::labels() const {
  std::vector<Label> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<Label> Dataset::original_labels() const {
  std::vector<Label> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.original_label);
  return out;
}

std::vector<bool> Dataset::poisoned_flags() const {
  std::vector<bool> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.poisoned);
  return out;
}

std::vector<std::string> Dataset::ids() const {
  std::vector<std::string> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.id);
  return out;
}

void validate(const Dataset& dataset) {
  if (dataset.samples.empty()) throw ValidationError("empty dataset");
  std::unordered_set<std::string_view> seen;
  seen.reserve(dataset.samples.size());
  for (const auto& s : dataset.samples) {
    if (s.id.empty()) throw ValidationError("sample with empty id");
    if (!seen.insert(s.id).second) throw ValidationError("duplicate id '" + s.id + "'");
    if ((s.label != 0 && s.label != 1) || (s.original_label != 0 && s.original_label != 1))
      throw ValidationError("sample '" + s.id + "' has a label outside {0,1}");
    if (s.poisoned != (s.label != s.original_label))
      throw ValidationError("sample '" + s.id + "' has inconsistent poison flag");
  }
}

Label parse_label(std::string_view field) {
  if (field == "0") return 0;
  if (field == "1") return 1;
  std::string lower(field);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "negative") return 0;
  if (lower == "positive") return 1;
  return -1;
}

Dataset parse_tsv(std::string_view content, bool has_header, std::string name) {
  Dataset dataset;
  dataset.name = std::move(name);
  dataset.split_tag = SplitTag::kFull;

  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    if (has_header && line_no == 1) {
      if (line != "id\tlabel\ttext") throw ParseError("expected header 'id\\tlabel\\ttext'", line_no);
      continue;
    }

    const auto tab1 = line.find('\t');
    const auto tab2 = tab1 == std::string_view::npos ? tab1 : line.find('\t', tab1 + 1);
    if (tab2 == std::string_view::npos)
      throw ParseError("expected 3 tab-separated fields (id, label, text)", line_no);
    if (line.find('\t', tab2 + 1) != std::string_view::npos)
      throw ParseError("tab character inside text field", line_no);

    Sample s;
    s.id = std::string(line.substr(0, tab1));
    if (s.id.empty()) throw ParseError("empty id", line_no);
    const auto label_field = line.substr(tab1 + 1, tab2 - tab1 - 1);
    const Label label = parse_label(label_field);
    if (label < 0)
      throw ParseError("invalid label '" + std::string(label_field) + "' for id '" + s.id + "'",
                       line_no);
    s.label = label;
    s.original_label = label;
    s.text = std::string(line.substr(tab2 + 1));
    dataset.samples.push_back(std::move(s));
  }

  validate(dataset);
  return dataset;
}

Dataset load_tsv(const std::filesystem::path& path, bool has_header, std::string name) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  if (name.empty()) name = path.stem().string();
  return parse_tsv(buffer.str(), has_header, std::move(name));
}

std::string format_tsv(const Dataset& dataset, bool write_header) {
  std::string out;
  if (write_header) out += "id\tlabel\ttext\n";
  for (const auto& s : dataset.samples) {
    out += s.id;
    out += '\t';
    out += static_cast<char>('0' + s.label);
    out += '\t';
    out += s.text;
    out += '\n';
  }
  return out;
}

void save_tsv(const Dataset& dataset, const std::filesystem::path& path, bool write_header) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file " + path.string());
  out << format_tsv(dataset, write_header);
  if (!out) throw IoError("write failed for " + path.string());
}

std::pair<Dataset, Dataset> split(const Dataset& dataset, double train_fraction,
                                  std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw ValidationError("train_fraction must lie in (0,1)");
  const std::size_t n = dataset.size();
  // The epsilon absorbs representation error such as 0.57 * 100 = 56.99999...
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * n + 1e-9));
  if (n_train == 0 || n_train >= n)
    throw ValidationError("split of " + std::to_string(n) + " samples at fraction " +
                          std::to_string(train_fraction) + " leaves an empty part");

  Rng rng(seed);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  shuffle(order, rng);
  std::vector<bool> in_train(n, false);
  for (std::size_t i = 0; i < n_train; ++i) in_train[order[i]] = true;

  Dataset train{dataset.name, {}, SplitTag::kTrain};
  Dataset validation{dataset.name, {}, SplitTag::kValidation};
  train.samples.reserve(n_train);
  validation.samples.reserve(n - n_train);
  for (std::size_t i = 0; i < n; ++i)
    (in_train[i] ? train : validation).samples.push_back(dataset.samples[i]);
  return {std::move(train), std::move(validation)};
}

}  // namespace poisonbench::corpus
