#include "poisonbench/afplite.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numeric>
#include <set>
#include <thread>
#include <unordered_set>

#include "poisonbench/error.hpp"
#include "poisonbench/rng.hpp"

namespace poisonbench::afplite {

namespace {

constexpr std::size_t kProbeCount = 2;
constexpr linmod::Loss kProbes[kProbeCount] = {linmod::Loss::kLogistic, linmod::Loss::kHinge};

std::size_t ceil_fraction(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
}

std::size_t default_train_size(std::size_t set_size) { return std::min<std::size_t>(set_size / 2, 5000); }

// Counters for one round, indexed by position in the current set S.
struct Counters {
  std::vector<std::size_t> evaluations;
  std::vector<std::size_t> correct;

  explicit Counters(std::size_t n) : evaluations(n, 0), correct(n, 0) {}
  void merge(const Counters& other) {
    for (std::size_t i = 0; i < evaluations.size(); ++i) {
      evaluations[i] += other.evaluations[i];
      correct[i] += other.correct[i];
    }
  }
};

struct RoundContext {
  const embed::EmbeddingMatrix& embeddings;
  std::span<const corpus::Label> labels;
  const std::vector<std::size_t>& members;  // rows of `embeddings` in S
  std::size_t train_size;
  std::size_t round_index;
  const AfpliteParams& params;
  const linmod::TrainConfig& probe_cfg;
};

// One probe iteration: draw a training subset, fit every probe, score the rest.
void run_iteration(const RoundContext& ctx, std::size_t iteration, Counters& counters) {
  const std::size_t size = ctx.members.size();
  Rng rng(derive_seed(ctx.params.seed, 0x726f756e64ULL, ctx.round_index, iteration));

  std::vector<std::size_t> picked;  // positions within S
  for (std::size_t attempt = 0;; ++attempt) {
    picked = sample_without_replacement(size, ctx.train_size, rng);
    bool has0 = false, has1 = false;
    for (auto pos : picked) (ctx.labels[ctx.members[pos]] == 1 ? has1 : has0) = true;
    if (has0 && has1) break;
    if (attempt + 1 >= ctx.params.max_resamples)
      throw ValidationError("probe training subset stayed single-class after " +
                            std::to_string(ctx.params.max_resamples) + " draws");
  }
  std::sort(picked.begin(), picked.end());

  std::vector<std::size_t> rows;
  std::vector<corpus::Label> y;
  rows.reserve(picked.size());
  y.reserve(picked.size());
  for (auto pos : picked) {
    rows.push_back(ctx.members[pos]);
    y.push_back(ctx.labels[ctx.members[pos]]);
  }
  const auto train_x = ctx.embeddings.select(rows);

  std::vector<bool> in_train(size, false);
  for (auto pos : picked) in_train[pos] = true;

  for (std::size_t p = 0; p < kProbeCount; ++p) {
    auto cfg = ctx.probe_cfg;
    cfg.loss = kProbes[p];
    cfg.seed = derive_seed(ctx.params.seed, 0x70726f6265ULL, ctx.round_index, iteration, p);
    const auto model = linmod::train(train_x, y, cfg);
    for (std::size_t pos = 0; pos < size; ++pos) {
      if (in_train[pos]) continue;
      const auto row = ctx.members[pos];
      const corpus::Label pred = linmod::decision_value(model, ctx.embeddings.row(row)) > 0.0 ? 1 : 0;
      ++counters.evaluations[pos];
      if (pred == ctx.labels[row]) ++counters.correct[pos];
    }
  }
}

Counters score_round(const RoundContext& ctx) {
  const std::size_t iterations = ctx.params.m;
  std::size_t workers = ctx.params.threads == 0 ? std::max(1u, std::thread::hardware_concurrency())
                                                : ctx.params.threads;
  workers = std::min(workers, iterations);

  Counters total(ctx.members.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < iterations; ++i) run_iteration(ctx, i, total);
    return total;
  }

  // Integer accumulation is order-independent, so any schedule gives the same totals.
  std::atomic<std::size_t> next{0};
  std::mutex merge_mutex;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      Counters local(ctx.members.size());
      try {
        for (std::size_t i = next++; i < iterations; i = next++) run_iteration(ctx, i, local);
      } catch (...) {
        std::lock_guard lock(merge_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
      std::lock_guard lock(merge_mutex);
      total.merge(local);
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return total;
}

// True when record a ranks strictly before b for removal.
bool removal_order(const PredictabilityRecord& a, const PredictabilityRecord& b, Direction dir) {
  // Compare C_a/E_a with C_b/E_b exactly.
  const auto lhs = a.correct * b.evaluations;
  const auto rhs = b.correct * a.evaluations;
  if (lhs != rhs) return dir == Direction::kPruneHard ? lhs < rhs : lhs > rhs;
  return a.sample_id < b.sample_id;
}

bool removal_candidate(const PredictabilityRecord& r, double tau, Direction dir) {
  if (r.evaluations == 0) return false;
  const double c = static_cast<double>(r.correct);
  const double threshold = tau * static_cast<double>(r.evaluations);
  return dir == Direction::kPruneHard ? c < threshold : c > threshold;
}

}  // namespace

void validate(const AfpliteParams& params) {
  if (params.m < 1) throw ValidationError("afplite: m must be at least 1");
  if (params.n && *params.n < 1) throw ValidationError("afplite: n must be at least 1");
  if (params.k && *params.k < 1) throw ValidationError("afplite: k must be at least 1");
  if (params.t && *params.t < 1) throw ValidationError("afplite: t must be at least 1");
  if (!(params.tau >= 0.0 && params.tau <= 1.0)) throw ValidationError("afplite: tau must lie in [0,1]");
  if (!(params.warmup_fraction > 0.0 && params.warmup_fraction < 1.0))
    throw ValidationError("afplite: warmup_fraction must lie in (0,1)");
  if (params.max_resamples < 1) throw ValidationError("afplite: max_resamples must be at least 1");
}

Direction parse_direction(const std::string& name) {
  if (name == "prune_hard" || name == "hard") return Direction::kPruneHard;
  if (name == "prune_easy" || name == "easy") return Direction::kPruneEasy;
  throw ValidationError("unknown direction '" + name + "' (expected prune_hard or prune_easy)");
}

std::string to_string(Direction direction) {
  return direction == Direction::kPruneHard ? "prune_hard" : "prune_easy";
}

std::string to_string(StopReason reason) {
  switch (reason) {
    case StopReason::kMinSize:
      return "min_size";
    case StopReason::kNoRemovals:
      return "no_removals";
    case StopReason::kSingleClass:
      return "single_class";
  }
  return "min_size";
}

std::vector<double> default_tau_sweep() {
  std::vector<double> taus;
  for (int i = 1; i <= 10; ++i) taus.push_back(i / 10.0);
  return taus;
}

std::optional<double> PredictabilityRecord::predictability() const {
  if (evaluations == 0) return std::nullopt;
  return static_cast<double>(correct) / static_cast<double>(evaluations);
}

std::pair<corpus::Dataset, corpus::Dataset> partition_warmup(const corpus::Dataset& dataset,
                                                             double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ValidationError("warm-up fraction must lie in (0,1)");
  const std::size_t n = dataset.size();
  const auto n_warm = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
  if (n_warm == 0 || n_warm >= n)
    throw ValidationError("warm-up fraction " + std::to_string(fraction) + " on " + std::to_string(n) +
                          " samples leaves an empty partition");
  Rng rng(seed);
  const auto picked = sample_without_replacement(n, n_warm, rng);
  std::vector<bool> warm(n, false);
  for (auto i : picked) warm[i] = true;
  corpus::Dataset warmup{dataset.name, {}, dataset.split_tag};
  corpus::Dataset working{dataset.name, {}, dataset.split_tag};
  for (std::size_t i = 0; i < n; ++i) (warm[i] ? warmup : working).samples.push_back(dataset.samples[i]);
  return {std::move(warmup), std::move(working)};
}

AfpliteReport afplite_run(const embed::EmbeddingMatrix& embeddings,
                          std::span<const corpus::Label> labels, const std::vector<bool>& truth,
                          const AfpliteParams& params, const linmod::TrainConfig& probe_cfg) {
  validate(params);
  linmod::validate(probe_cfg);
  const std::size_t total = embeddings.rows();
  if (labels.size() != total || truth.size() != total)
    throw ValidationError("afplite: embeddings, labels and poison flags must be aligned");
  if (total == 0) throw ValidationError("afplite: empty working set");
  if (!embeddings.all_finite()) throw ValidationError("afplite: non-finite embedding value");

  AfpliteReport report;
  report.params = params;
  report.params.n = params.n.value_or(ceil_fraction(0.10, total));
  report.params.k = params.k.value_or(std::max<std::size_t>(100, ceil_fraction(0.05, total)));
  const std::size_t min_size = *report.params.n;
  const std::size_t max_removals = *report.params.k;

  std::vector<std::size_t> members(total);
  std::iota(members.begin(), members.end(), std::size_t{0});
  auto single_class = [&] {
    return std::all_of(members.begin(), members.end(), [&](std::size_t r) { return labels[r] == labels[members[0]]; });
  };
  if (single_class()) throw ValidationError("afplite: working set contains a single class");

  report.stop_reason = StopReason::kMinSize;
  for (std::size_t round = 0; members.size() > min_size; ++round) {
    if (single_class()) {
      report.stop_reason = StopReason::kSingleClass;
      break;
    }
    const std::size_t train_size = params.t.value_or(default_train_size(members.size()));
    if (train_size == 0 || train_size >= members.size())
      throw ValidationError("afplite: probe train size t=" + std::to_string(train_size) +
                            " must be in [1, |S|) with |S|=" + std::to_string(members.size()));
    if (round == 0) report.params.t = train_size;

    const RoundContext ctx{embeddings, labels, members, train_size, round, params, probe_cfg};
    const Counters counters = score_round(ctx);

    Round rec;
    rec.round_index = round;
    rec.set_size = members.size();
    rec.train_size = train_size;
    rec.scores.reserve(members.size());
    for (std::size_t pos = 0; pos < members.size(); ++pos) {
      const auto row = members[pos];
      rec.scores.push_back({embeddings.ids()[row], counters.evaluations[pos], counters.correct[pos], truth[row]});
    }

    std::vector<std::size_t> candidates;
    for (std::size_t pos = 0; pos < rec.scores.size(); ++pos)
      if (removal_candidate(rec.scores[pos], params.tau, params.direction)) candidates.push_back(pos);
    std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
      return removal_order(rec.scores[a], rec.scores[b], params.direction);
    });
    if (candidates.size() > max_removals) candidates.resize(max_removals);

    std::vector<bool> drop(members.size(), false);
    for (auto pos : candidates) {
      drop[pos] = true;
      rec.removed_ids.push_back(rec.scores[pos].sample_id);
    }
    std::vector<std::size_t> kept;
    kept.reserve(members.size() - candidates.size());
    for (std::size_t pos = 0; pos < members.size(); ++pos)
      if (!drop[pos]) kept.push_back(members[pos]);
    members = std::move(kept);

    const bool removed_any = !rec.removed_ids.empty();
    report.rounds.push_back(std::move(rec));
    if (!removed_any) {
      report.stop_reason = StopReason::kNoRemovals;
      break;
    }
  }

  if (!report.params.t) report.params.t = default_train_size(total);
  for (auto row : members) report.final_retained_ids.push_back(embeddings.ids()[row]);
  if (!report.rounds.empty()) report.bins = bin_ratio_table(report.rounds.front().scores);
  return report;
}

std::vector<Bin> bin_ratio_table(std::span<const PredictabilityRecord> scores, double bin_width) {
  if (!(bin_width > 0.0 && bin_width <= 1.0)) throw ValidationError("bin width must lie in (0,1]");
  const auto bins_count = static_cast<std::size_t>(std::llround(1.0 / bin_width));
  if (bins_count == 0 || std::abs(static_cast<double>(bins_count) * bin_width - 1.0) > 1e-9)
    throw ValidationError("bin width must divide 1 evenly");

  std::vector<Bin> bins(bins_count);
  for (std::size_t i = 0; i < bins_count; ++i) {
    bins[i].lower = static_cast<double>(i) / static_cast<double>(bins_count);
    bins[i].upper = static_cast<double>(i + 1) / static_cast<double>(bins_count);
  }
  for (const auto& r : scores) {
    if (r.evaluations == 0) continue;
    // floor(P * bins) in exact integer arithmetic; P == 1 lands in the top bin.
    const std::size_t idx = std::min(bins_count - 1, r.correct * bins_count / r.evaluations);
    (r.poisoned ? bins[idx].poisoned_count : bins[idx].clean_count) += 1;
  }
  for (auto& b : bins) {
    if (b.clean_count > 0) {
      b.ratio_percent = 100.0 * static_cast<double>(b.poisoned_count) / static_cast<double>(b.clean_count);
    } else {
      b.ratio_percent = 0.0;
      b.ratio_defined = b.poisoned_count == 0;
    }
  }
  return bins;
}

AfpliteReport filter_dataset(const corpus::Dataset& dataset, const embed::Provider& provider,
                             AfpliteParams params, const linmod::TrainConfig& probe_cfg) {
  validate(params);
  corpus::validate(dataset);
  auto [warmup, working] =
      partition_warmup(dataset, params.warmup_fraction, derive_seed(params.seed, 0x7761726dULL));
  const auto fitted = provider.fitted(warmup);
  const auto embeddings = fitted.embed(working);
  if (!params.n) params.n = ceil_fraction(0.10, dataset.size());
  const auto labels = working.labels();
  return afplite_run(embeddings, labels, working.poisoned_flags(), params, probe_cfg);
}

nlohmann::ordered_json to_json(const AfpliteParams& params) {
  nlohmann::ordered_json j;
  j["m"] = params.m;
  j["n"] = params.n ? nlohmann::ordered_json(*params.n) : nlohmann::ordered_json(nullptr);
  j["t"] = params.t ? nlohmann::ordered_json(*params.t) : nlohmann::ordered_json(nullptr);
  j["k"] = params.k ? nlohmann::ordered_json(*params.k) : nlohmann::ordered_json(nullptr);
  j["tau"] = params.tau;
  j["warmup_fraction"] = params.warmup_fraction;
  j["seed"] = params.seed;
  j["direction"] = to_string(params.direction);
  return j;
}

nlohmann::ordered_json to_json(const AfpliteReport& report) {
  nlohmann::ordered_json j;
  j["params"] = to_json(report.params);
  auto rounds = nlohmann::ordered_json::array();
  for (const auto& r : report.rounds) {
    nlohmann::ordered_json jr;
    jr["round_index"] = r.round_index;
    jr["set_size"] = r.set_size;
    jr["train_size"] = r.train_size;
    jr["removed_ids"] = r.removed_ids;
    rounds.push_back(std::move(jr));
  }
  j["rounds"] = std::move(rounds);
  j["stop_reason"] = to_string(report.stop_reason);
  j["final_retained_ids"] = report.final_retained_ids;
  auto bins = nlohmann::ordered_json::array();
  for (const auto& b : report.bins) {
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"poisoned_count", b.poisoned_count},
                    {"clean_count", b.clean_count},
                    {"ratio_percent", b.ratio_defined ? nlohmann::ordered_json(b.ratio_percent)
                                                      : nlohmann::ordered_json(nullptr)}});
  }
  j["bins"] = std::move(bins);
  return j;
}

csv::Table bins_table(const std::vector<Bin>& bins) {
  csv::Table table{{"bin_low", "bin_high", "poisoned_count", "clean_count", "ratio_percent"}, {}};
  for (const auto& b : bins)
    table.rows.push_back({csv::fixed(b.lower), csv::fixed(b.upper), std::to_string(b.poisoned_count),
                          std::to_string(b.clean_count),
                          b.ratio_defined ? csv::fixed(b.ratio_percent) : "undefined"});
  return table;
}

csv::Table scores_table(const std::vector<PredictabilityRecord>& scores) {
  csv::Table table{{"id", "E", "C", "P", "poisoned"}, {}};
  for (const auto& r : scores) {
    const auto p = r.predictability();
    table.rows.push_back({r.sample_id, std::to_string(r.evaluations), std::to_string(r.correct),
                          p ? csv::fixed(*p) : "", r.poisoned ? "1" : "0"});
  }
  return table;
}

std::optional<double> removal_precision(const AfpliteReport& report,
                                        const std::vector<std::string>& poisoned_ids) {
  const std::unordered_set<std::string> poisoned(poisoned_ids.begin(), poisoned_ids.end());
  std::size_t removed = 0, hits = 0;
  for (const auto& r : report.rounds)
    for (const auto& id : r.removed_ids) {
      ++removed;
      hits += poisoned.count(id);
    }
  if (removed == 0) return std::nullopt;
  return static_cast<double>(hits) / static_cast<double>(removed);
}

}  // namespace poisonbench::afplite
