#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "poisonbench/corpus.hpp"
#include "poisonbench/csv.hpp"
#include "poisonbench/embed.hpp"
#include "poisonbench/linmod.hpp"

namespace poisonbench::afplite {

// Which end of the predictability ranking gets pruned.
enum class Direction {
  kPruneHard,  // remove low-P samples below tau (suspected flipped labels)
  kPruneEasy,  // remove high-P samples above tau (classic AFLite)
};

// "prune_hard" / "hard" and "prune_easy" / "easy".
Direction parse_direction(const std::string& name);
std::string to_string(Direction direction);

struct AfpliteParams {
  std::size_t m = 64;              // probe iterations per round
  std::optional<std::size_t> n;    // stop once |S| <= n; default ceil(0.10 |S0|)
  std::optional<std::size_t> t;    // probe train size; default floor(|S|/2) capped at 5000, per round
  std::optional<std::size_t> k;    // max removals per round; default max(100, ceil(0.05 |S0|))
  double tau = 0.5;
  double warmup_fraction = 0.10;
  std::uint64_t seed = 0;
  Direction direction = Direction::kPruneHard;
  std::size_t threads = 1;         // 0 = hardware concurrency
  std::size_t max_resamples = 32;  // retries for single-class probe subsets
};

void validate(const AfpliteParams& params);

// Default tau sweep: 0.1, 0.2, ..., 1.0.
std::vector<double> default_tau_sweep();

struct PredictabilityRecord {
  std::string sample_id;
  std::size_t evaluations = 0;  // E(s)
  std::size_t correct = 0;      // C(s)
  bool poisoned = false;        // ground truth, reporting only

  // C/E, undefined when the sample was never evaluated.
  std::optional<double> predictability() const;
};

struct Round {
  std::size_t round_index = 0;
  std::size_t set_size = 0;    // |S| at the start of the round
  std::size_t train_size = 0;  // t used this round
  std::vector<PredictabilityRecord> scores;
  std::vector<std::string> removed_ids;
};

struct Bin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t poisoned_count = 0;
  std::size_t clean_count = 0;
  double ratio_percent = 0.0;  // 100 * poisoned / clean; 0 for empty bins
  bool ratio_defined = true;   // false when clean == 0 and poisoned > 0
};

// Why the filtering loop ended.
enum class StopReason {
  kMinSize,      // |S| <= n
  kNoRemovals,   // a round removed nothing
  kSingleClass,  // pruning left only one label in S, so probes cannot be trained
};
std::string to_string(StopReason reason);

struct AfpliteReport {
  AfpliteParams params;  // with defaults resolved (t reports the first round)
  StopReason stop_reason = StopReason::kMinSize;
  std::vector<Round> rounds;
  std::vector<std::string> final_retained_ids;
  std::vector<Bin> bins;  // over the first round's scores
};

// Carve out floor(fraction * |D|) samples (seeded, uniform) used to fit the
// feature provider; the rest is the working set S. Both keep input order.
std::pair<corpus::Dataset, corpus::Dataset> partition_warmup(const corpus::Dataset& dataset,
                                                             double fraction, std::uint64_t seed);

// The filtering loop over a working set. `labels` are the (possibly
// poisoned) training labels; `truth` marks which of them are poisoned.
AfpliteReport afplite_run(const embed::EmbeddingMatrix& embeddings,
                          std::span<const corpus::Label> labels, const std::vector<bool>& truth,
                          const AfpliteParams& params, const linmod::TrainConfig& probe_cfg);

// Histogram of predictability scores in [lower, upper) bins of `bin_width`
// (top bin closed at 1). Unscored records are skipped.
std::vector<Bin> bin_ratio_table(std::span<const PredictabilityRecord> scores, double bin_width = 0.1);

// Warm-up split, provider fitting on the warm-up texts, embedding of the
// working set and the filtering loop. n defaults to ceil(0.10 |D|).
AfpliteReport filter_dataset(const corpus::Dataset& dataset, const embed::Provider& provider,
                             AfpliteParams params, const linmod::TrainConfig& probe_cfg);

nlohmann::ordered_json to_json(const AfpliteParams& params);
nlohmann::ordered_json to_json(const AfpliteReport& report);

// bin_low,bin_high,poisoned_count,clean_count,ratio_percent
csv::Table bins_table(const std::vector<Bin>& bins);
// id,E,C,P,poisoned
csv::Table scores_table(const std::vector<PredictabilityRecord>& scores);

// Fraction of removed samples (all rounds) that are truly poisoned; nullopt when nothing was removed.
std::optional<double> removal_precision(const AfpliteReport& report,
                                        const std::vector<std::string>& poisoned_ids);

}  // namespace poisonbench::afplite
