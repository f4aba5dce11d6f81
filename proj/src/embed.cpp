#include "poisonbench/embed.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iostream>
#include <sstream>
#include <unordered_set>

#include "poisonbench/csv.hpp"
#include "poisonbench/error.hpp"

namespace poisonbench::embed {

void stderr_warning(std::string_view message) { std::cerr << "warning: " << message << '\n'; }

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      current += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

long Vocabulary::lookup(const std::string& token) const {
  auto it = index.find(token);
  return it == index.end() ? -1 : static_cast<long>(it->second);
}

Vocabulary fit_vocabulary(const corpus::Dataset& fitting_set, std::size_t min_frequency) {
  if (fitting_set.samples.empty()) throw ValidationError("cannot fit vocabulary on an empty set");
  std::map<std::string, std::size_t> counts;
  for (const auto& s : fitting_set.samples)
    for (auto& tok : tokenize(s.text)) ++counts[std::move(tok)];

  Vocabulary vocab;
  vocab.min_frequency = min_frequency;
  for (const auto& [token, count] : counts)
    if (count >= min_frequency) vocab.index.emplace(token, vocab.index.size());
  if (vocab.index.empty()) throw ValidationError("empty vocabulary");
  return vocab;
}

const std::vector<double>* WordVectorTable::find(const std::string& token) const {
  auto it = vectors.find(token);
  return it == vectors.end() ? nullptr : &it->second;
}

namespace {

std::vector<std::string_view> split_spaces(std::string_view line) {
  std::vector<std::string_view> parts;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;
    if (i > start) parts.push_back(line.substr(start, i - start));
  }
  return parts;
}

double parse_component(std::string_view field, std::size_t line_no) {
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc{} || ptr != last)
    throw ParseError("non-numeric component '" + std::string(field) + "'", line_no);
  if (!std::isfinite(value)) throw ParseError("non-finite embedding component", line_no);
  return value;
}

bool is_unsigned_integer(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) { return c >= '0' && c <= '9'; });
}

// Calls `on_row(line_no, key, values)` for each non-empty line. Enforces a
// common dimension inferred from the first row.
template <typename OnRow>
std::size_t scan_vector_lines(std::string_view content, OnRow&& on_row) {
  std::size_t dim = 0;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < content.size()) {
    auto end = content.find('\n', pos);
    if (end == std::string_view::npos) end = content.size();
    std::string_view line = content.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto parts = split_spaces(line);
    if (parts.empty()) continue;
    // word2vec text files open with a "<count> <dim>" line.
    if (line_no == 1 && parts.size() == 2 && is_unsigned_integer(parts[0]) &&
        is_unsigned_integer(parts[1]))
      continue;
    if (parts.size() < 2) throw ParseError("row has no vector components", line_no);
    const std::size_t row_dim = parts.size() - 1;
    if (dim == 0) {
      dim = row_dim;
    } else if (row_dim != dim) {
      throw ParseError("dimension mismatch: expected " + std::to_string(dim) + " components, found " +
                           std::to_string(row_dim),
                       line_no);
    }
    std::vector<double> values;
    values.reserve(row_dim);
    for (std::size_t i = 1; i < parts.size(); ++i) values.push_back(parse_component(parts[i], line_no));
    on_row(line_no, parts[0], std::move(values));
  }
  return dim;
}

}  // namespace

WordVectorTable parse_word_vectors(std::string_view content, const WarningSink& warn) {
  WordVectorTable table;
  table.dim = scan_vector_lines(content, [&](std::size_t line_no, std::string_view token,
                                             std::vector<double> values) {
    auto [it, inserted] = table.vectors.try_emplace(std::string(token), std::move(values));
    if (!inserted) {
      it->second = std::move(values);
      if (warn)
        warn("duplicate token '" + std::string(token) + "' at line " + std::to_string(line_no) +
             "; last occurrence wins");
    }
  });
  if (table.dim == 0) throw ParseError("word-vector file contains no vectors");
  return table;
}

WordVectorTable load_word_vectors(const std::filesystem::path& path, const WarningSink& warn) {
  try {
    return parse_word_vectors(csv::read_text(path), warn);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t cols,
                                 std::string provider_tag)
    : ids_(std::move(ids)),
      cols_(cols),
      provider_tag_(std::move(provider_tag)),
      data_(ids_.size() * cols, 0.0) {}

EmbeddingMatrix EmbeddingMatrix::select(std::span<const std::size_t> rows) const {
  std::vector<std::string> ids;
  ids.reserve(rows.size());
  for (auto r : rows) ids.push_back(ids_.at(r));
  EmbeddingMatrix out(std::move(ids), cols_, provider_tag_);
  for (std::size_t i = 0; i < rows.size(); ++i) std::ranges::copy(row(rows[i]), out.row(i).begin());
  return out;
}

bool EmbeddingMatrix::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

EmbeddingMatrix embed_bow(const corpus::Dataset& samples, const Vocabulary& vocab) {
  if (vocab.size() == 0) throw ValidationError("empty vocabulary");
  EmbeddingMatrix out(samples.ids(), vocab.size(), "bow-sum");
  for (std::size_t r = 0; r < samples.size(); ++r) {
    auto row = out.row(r);
    for (const auto& tok : tokenize(samples.samples[r].text)) {
      const long idx = vocab.lookup(tok);
      if (idx >= 0) row[static_cast<std::size_t>(idx)] += 1.0;
    }
  }
  return out;
}

Pooling parse_pooling(std::string_view name) {
  if (name == "sum") return Pooling::kSum;
  if (name == "mean") return Pooling::kMean;
  throw ValidationError("unknown pooling '" + std::string(name) + "' (expected sum or mean)");
}

EmbeddingMatrix embed_pooled(const corpus::Dataset& samples, const WordVectorTable& table,
                             Pooling pooling) {
  if (table.dim == 0) throw ValidationError("word-vector table has dimension 0");
  EmbeddingMatrix out(samples.ids(), table.dim,
                      pooling == Pooling::kSum ? "pooled-sum" : "pooled-mean");
  for (std::size_t r = 0; r < samples.size(); ++r) {
    auto row = out.row(r);
    std::size_t hits = 0;
    for (const auto& tok : tokenize(samples.samples[r].text)) {
      const auto* vec = table.find(tok);
      if (!vec) continue;
      ++hits;
      for (std::size_t j = 0; j < table.dim; ++j) row[j] += (*vec)[j];
    }
    if (pooling == Pooling::kMean && hits > 0)
      for (auto& v : row) v /= static_cast<double>(hits);
  }
  return out;
}

EmbeddingMatrix parse_external_embeddings(std::string_view content,
                                          std::span<const std::string> expected_ids,
                                          const WarningSink& warn) {
  std::unordered_map<std::string_view, std::size_t> wanted;
  wanted.reserve(expected_ids.size());
  for (std::size_t i = 0; i < expected_ids.size(); ++i)
    if (!wanted.emplace(expected_ids[i], i).second)
      throw ValidationError("expected id '" + expected_ids[i] + "' listed twice");

  std::vector<std::vector<double>> rows(expected_ids.size());
  std::vector<bool> seen(expected_ids.size(), false);
  std::size_t extra = 0;
  const std::size_t dim = scan_vector_lines(
      content, [&](std::size_t line_no, std::string_view id, std::vector<double> values) {
        auto it = wanted.find(id);
        if (it == wanted.end()) {
          ++extra;
          return;
        }
        if (seen[it->second])
          throw ValidationError("id '" + std::string(id) + "' appears more than once (line " +
                                std::to_string(line_no) + ")");
        seen[it->second] = true;
        rows[it->second] = std::move(values);
      });

  std::vector<std::string> missing;
  for (std::size_t i = 0; i < expected_ids.size(); ++i)
    if (!seen[i]) missing.push_back(expected_ids[i]);
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) list += (i ? ", " : "") + missing[i];
    if (missing.size() > 20) list += ", ...";
    throw ValidationError(std::to_string(missing.size()) + " expected id(s) missing from embedding file: " + list);
  }
  if (extra > 0 && warn) warn("ignored " + std::to_string(extra) + " embedding row(s) with unexpected ids");

  EmbeddingMatrix out({expected_ids.begin(), expected_ids.end()}, dim, "external");
  for (std::size_t r = 0; r < rows.size(); ++r) std::ranges::copy(rows[r], out.row(r).begin());
  return out;
}

EmbeddingMatrix load_external_embeddings(const std::filesystem::path& path,
                                         std::span<const std::string> expected_ids,
                                         const WarningSink& warn) {
  try {
    return parse_external_embeddings(csv::read_text(path), expected_ids, warn);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

Provider Provider::bow(std::size_t min_frequency) {
  Provider p;
  p.spec_.kind = ProviderSpec::Kind::kBow;
  p.spec_.min_frequency = min_frequency;
  return p;
}

Provider Provider::pooled(std::shared_ptr<const WordVectorTable> table, Pooling pooling) {
  if (!table || table->dim == 0) throw ValidationError("pooled provider needs a non-empty word-vector table");
  Provider p;
  p.spec_.kind = ProviderSpec::Kind::kPooled;
  p.spec_.pooling = pooling;
  p.table_ = std::move(table);
  return p;
}

Provider Provider::external(std::filesystem::path embeddings_path) {
  Provider p;
  p.spec_.kind = ProviderSpec::Kind::kExternal;
  p.spec_.embeddings_path = std::move(embeddings_path);
  return p;
}

Provider Provider::from_spec(const ProviderSpec& spec, const WarningSink& warn) {
  Provider p;
  switch (spec.kind) {
    case ProviderSpec::Kind::kBow:
      p = bow(spec.min_frequency);
      break;
    case ProviderSpec::Kind::kPooled:
      p = pooled(std::make_shared<const WordVectorTable>(load_word_vectors(spec.vectors_path, warn)),
                 spec.pooling);
      p.spec_.vectors_path = spec.vectors_path;
      break;
    case ProviderSpec::Kind::kExternal:
      if (!std::filesystem::exists(spec.embeddings_path))
        throw IoError("embedding file not found: " + spec.embeddings_path.string());
      p = external(spec.embeddings_path);
      break;
  }
  p.warn_ = warn;
  return p;
}

Provider Provider::fitted(const corpus::Dataset& fitting_set) const {
  Provider p = *this;
  if (spec_.kind == ProviderSpec::Kind::kBow)
    p.vocab_ = std::make_shared<const Vocabulary>(fit_vocabulary(fitting_set, spec_.min_frequency));
  return p;
}

bool Provider::is_fitted() const { return spec_.kind != ProviderSpec::Kind::kBow || vocab_ != nullptr; }

EmbeddingMatrix Provider::embed(const corpus::Dataset& samples) const {
  switch (spec_.kind) {
    case ProviderSpec::Kind::kBow:
      if (!vocab_) throw ValidationError("bag-of-words provider used before fitting");
      return embed_bow(samples, *vocab_);
    case ProviderSpec::Kind::kPooled:
      return embed_pooled(samples, *table_, spec_.pooling);
    case ProviderSpec::Kind::kExternal: {
      const auto ids = samples.ids();
      return load_external_embeddings(spec_.embeddings_path, ids, warn_);
    }
  }
  throw ValidationError("unknown provider kind");
}

std::string Provider::tag() const {
  switch (spec_.kind) {
    case ProviderSpec::Kind::kBow:
      return "bow-sum";
    case ProviderSpec::Kind::kPooled:
      return spec_.pooling == Pooling::kSum ? "pooled-sum" : "pooled-mean";
    case ProviderSpec::Kind::kExternal:
      return "external";
  }
  return "unknown";
}

}  // namespace poisonbench::embed
