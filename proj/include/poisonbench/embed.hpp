#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "poisonbench/corpus.hpp"

namespace poisonbench::embed {

// Receives non-fatal diagnostics (duplicate tokens, ignored ids, ...).
using WarningSink = std::function<void(std::string_view)>;
void stderr_warning(std::string_view message);

// Lowercase, drop ASCII punctuation, split on whitespace.
std::vector<std::string> tokenize(std::string_view text);

struct Vocabulary {
  std::map<std::string, std::size_t> index;  // indices contiguous from 0, lexicographic order
  std::size_t min_frequency = 1;

  std::size_t size() const { return index.size(); }
  // -1 when absent.
  long lookup(const std::string& token) const;
};

Vocabulary fit_vocabulary(const corpus::Dataset& fitting_set, std::size_t min_frequency);

struct WordVectorTable {
  std::size_t dim = 0;
  std::unordered_map<std::string, std::vector<double>> vectors;

  std::size_t size() const { return vectors.size(); }
  const std::vector<double>* find(const std::string& token) const;
};

// GloVe text convention: `token v1 ... vd` per line.
WordVectorTable load_word_vectors(const std::filesystem::path& path,
                                  const WarningSink& warn = stderr_warning);
WordVectorTable parse_word_vectors(std::string_view content,
                                   const WarningSink& warn = stderr_warning);

// Dense row-major (rows x cols) matrix of per-sample features.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t cols, std::string provider_tag);

  std::size_t rows() const { return ids_.size(); }
  std::size_t cols() const { return cols_; }
  const std::vector<std::string>& ids() const { return ids_; }
  const std::string& provider_tag() const { return provider_tag_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const { return data_; }

  // Copy of the given rows, in the given order.
  EmbeddingMatrix select(std::span<const std::size_t> rows) const;
  bool all_finite() const;

 private:
  std::vector<std::string> ids_;
  std::size_t cols_ = 0;
  std::string provider_tag_;
  std::vector<double> data_;
};

// Term-count rows (sum pooling); out-of-vocabulary tokens ignored.
EmbeddingMatrix embed_bow(const corpus::Dataset& samples, const Vocabulary& vocab);

enum class Pooling { kSum, kMean };
Pooling parse_pooling(std::string_view name);

// Sum or mean of in-table token vectors; zero row when no token is known.
EmbeddingMatrix embed_pooled(const corpus::Dataset& samples, const WordVectorTable& table,
                             Pooling pooling);

// Rows `id v1 ... vd`, reordered to match `expected_ids`.
EmbeddingMatrix load_external_embeddings(const std::filesystem::path& path,
                                         std::span<const std::string> expected_ids,
                                         const WarningSink& warn = stderr_warning);
EmbeddingMatrix parse_external_embeddings(std::string_view content,
                                          std::span<const std::string> expected_ids,
                                          const WarningSink& warn = stderr_warning);

// A feature provider: bag-of-words, pooled word vectors, or an external
// per-sample embedding file. Providers are immutable; `fitted` returns a
// copy trained on the given texts (only BOW has state to fit).
struct ProviderSpec {
  enum class Kind { kBow, kPooled, kExternal };
  Kind kind = Kind::kBow;
  std::size_t min_frequency = 1;           // bow
  std::filesystem::path vectors_path;      // pooled
  Pooling pooling = Pooling::kMean;        // pooled
  std::filesystem::path embeddings_path;   // external
};

class Provider {
 public:
  static Provider bow(std::size_t min_frequency);
  static Provider pooled(std::shared_ptr<const WordVectorTable> table, Pooling pooling);
  static Provider external(std::filesystem::path embeddings_path);
  // Loads any files the spec names.
  static Provider from_spec(const ProviderSpec& spec, const WarningSink& warn = stderr_warning);

  Provider fitted(const corpus::Dataset& fitting_set) const;
  bool is_fitted() const;
  EmbeddingMatrix embed(const corpus::Dataset& samples) const;
  std::string tag() const;

 private:
  ProviderSpec spec_;
  std::shared_ptr<const WordVectorTable> table_;
  std::shared_ptr<const Vocabulary> vocab_;
  WarningSink warn_ = stderr_warning;
};

}  // namespace poisonbench::embed
