// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "../support/oracles.hpp"
#include "../support/synthetic.hpp"
#include "poisonbench/afplite.hpp"
#include "poisonbench/checksum.hpp"
#include "poisonbench/error.hpp"
#include "poisonbench/harness.hpp"
#include "poisonbench/linmod.hpp"
#include "poisonbench/mrap.hpp"
#include "poisonbench/poison.hpp"
#include "poisonbench/report.hpp"

using namespace poisonbench;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared sweep over the synthetic sentiment corpus (criteria 3 and 4).

struct SweepFixture {
  harness::ExperimentConfig cfg;
  harness::SweepResult result;
};

const SweepFixture& sentiment_sweep() {
  static const SweepFixture fixture = [] {
    const auto dir = testing::scratch_dir("acceptance_sweep");
    testing::write_file(dir / "vectors.txt", testing::make_word_vector_text(7));

    SweepFixture f;
    f.cfg.datasets.push_back({"synthetic", {}, false, 0.8, 11});
    harness::ModelSpec bow;
    bow.model_id = "bow-logreg";
    bow.provider.kind = embed::ProviderSpec::Kind::kBow;
    bow.trainer.loss = linmod::Loss::kLogistic;
    harness::ModelSpec wv;
    wv.model_id = "wordvec-svm";
    wv.provider.kind = embed::ProviderSpec::Kind::kPooled;
    wv.provider.vectors_path = dir / "vectors.txt";
    wv.provider.pooling = embed::Pooling::kMean;
    wv.trainer.loss = linmod::Loss::kHinge;
    f.cfg.models = {bow, wv};
    f.cfg.poison_levels = {0, 30, 50, 70, 90};
    f.cfg.seeds = {0, 1, 2};
    f.result = harness::run_sweep(f.cfg, {testing::make_sentiment_corpus(2024)});
    return f;
  }();
  return fixture;
}

double accuracy_at(const mrap::AccuracySeries& s, double level) {
  for (const auto& p : s.points)
    if (p.poison_percent == level) return p.val_accuracy;
  throw Error("level missing from series");
}

// ---------------------------------------------------------------------------

Outcome nmrap_anchor() {
  const std::map<std::string, double> mrap_values{
      {"CNN", 87.44}, {"LSTM", 245.07}, {"Naive", 136.12}, {"Transformers", 110.02}};
  const std::map<std::string, double> expected{{"CNN", 0.0}, {"LSTM", 1.0}, {"Naive", 0.31}, {"Transformers", 0.14}};
  const auto got = mrap::nmrap(mrap_values);
  Outcome o{true, ""};
  for (const auto& [k, v] : expected) {
    o.pass = o.pass && std::abs(got.at(k) - v) <= 0.005;
    o.detail += k + "=" + fmt("%.4f", got.at(k)) + " ";
  }
  return o;
}

Outcome mrap_oracle() {
  Rng rng(20240501);
  std::size_t clamp_cases = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    // Random strictly increasing levels in [0, 100].
    const std::size_t n = 2 + uniform_below(rng, 8);
    std::set<int> levels;
    while (levels.size() < n) levels.insert(static_cast<int>(uniform_below(rng, 101)));
    std::vector<double> p(levels.begin(), levels.end()), a;
    for (std::size_t i = 0; i < n; ++i) {
      const double roll = uniform_unit(rng);
      if (i > 0 && roll < 0.15) {
        a.push_back(a.back());  // exact tie
      } else if (i > 0 && roll < 0.25) {
        a.push_back(std::clamp(a.back() + (uniform_unit(rng) - 0.5) * 1e-7, 0.0, 100.0));  // near tie
      } else {
        a.push_back(uniform_unit(rng) * 100.0);
      }
    }
    for (std::size_t i = 1; i < n; ++i)
      if (p[i - 1] < 50 && std::abs(a[i - 1] - a[i]) < mrap::kDenominatorFloor) ++clamp_cases;

    mrap::AccuracySeries s{"m", "d", {}};
    for (std::size_t i = 0; i < n; ++i) s.points.push_back({p[i], a[i], a[i]});
    for (bool magnitude : {false, true}) {
      const double got = mrap::mrap_dataset(s, magnitude ? mrap::RateMode::kMagnitude : mrap::RateMode::kLiteral);
      const double want = testing::reference_mrap(p, a, magnitude);
      const double rel = std::abs(got - want) / std::max(std::abs(want), 1e-300);
      worst = std::max(worst, want == 0.0 ? std::abs(got) : rel);
    }
  }
  return {worst <= 1e-9 && clamp_cases > 0,
          "max rel err " + fmt("%.3g", worst) + ", clamped transitions " + std::to_string(clamp_cases)};
}

Outcome fifty_percent_collapse() {
  const auto& f = sentiment_sweep();
  Outcome o{true, ""};
  for (const auto& s : f.result.series) {
    const double acc = accuracy_at(s, 50);
    o.pass = o.pass && acc >= 45.0 && acc <= 55.0;
    o.detail += s.model_id + "=" + fmt("%.2f", acc) + " ";
  }
  return o;
}

Outcome v_shape() {
  const auto& f = sentiment_sweep();
  Outcome o{true, ""};
  for (const auto& s : f.result.series) {
    const double a0 = accuracy_at(s, 0), a30 = accuracy_at(s, 30), a50 = accuracy_at(s, 50);
    const double a70 = accuracy_at(s, 70), a90 = accuracy_at(s, 90);
    const bool ok = a0 - a30 > 2 && a30 - a50 > 2 && a90 - a70 > 2 && a70 - a50 > 2;
    o.pass = o.pass && ok;
    o.detail += s.model_id + " [" + fmt("%.2f", a0) + " " + fmt("%.2f", a30) + " " + fmt("%.2f", a50) + " " +
                fmt("%.2f", a70) + " " + fmt("%.2f", a90) + "] ";
  }
  return o;
}

Outcome afplite_blindness() {
  const std::size_t n = 2000;
  std::vector<std::string> ids;
  std::vector<corpus::Label> labels;
  for (std::size_t i = 0; i < n; ++i) {
    ids.push_back("u" + std::to_string(i));
    labels.push_back(i % 2 == 0 ? 1 : 0);
  }
  const auto clean = testing::dataset_from_labels(ids, labels);
  const auto [poisoned, manifest] = poison::flip_labels(clean, {10, 31});

  embed::EmbeddingMatrix constant(ids, 8, "constant");
  for (std::size_t i = 0; i < n; ++i)
    for (auto& v : constant.row(i)) v = 1.0;

  // The histogram is taken over first-round scores, so one round is enough. Letting
  // the loop continue would eventually prune one label class away entirely, since
  // constant features make P(s) a function of the label alone.
  afplite::AfpliteParams params;
  params.seed = 5;
  params.tau = 0.5;
  params.k = 100;
  params.n = n - *params.k;
  // With the default m = 64 each P(s) rests on ~128 evaluations, so a few dozen
  // samples straggle into the outer bins where the ratio is pure sampling noise.
  // More iterations tighten every P(s) around the shared value.
  params.m = 1024;
  const auto report =
      afplite::afplite_run(constant, poisoned.labels(), poisoned.poisoned_flags(), params, linmod::TrainConfig{});

  const double analytic = 100.0 * 10.0 / 90.0;
  Outcome o{true, ""};
  std::size_t occupied = 0;
  for (const auto& b : report.bins) {
    if (b.poisoned_count + b.clean_count == 0) continue;
    ++occupied;
    const bool ok = b.ratio_defined && std::abs(b.ratio_percent - analytic) <= 5.0;
    o.pass = o.pass && ok;
    o.detail += fmt("[%.1f", b.lower) + "," + fmt("%.1f)", b.upper) + " " + std::to_string(b.poisoned_count) + "/" +
                std::to_string(b.clean_count) + "=" + fmt("%.2f", b.ratio_percent) + " ";
  }
  o.pass = o.pass && occupied > 0;
  return o;
}

Outcome afplite_positive_control() {
  const auto data = testing::make_clusters(2000, 8, 1.0, 77);
  const auto clean = testing::dataset_from_labels(data.embeddings.ids(), data.clean_labels);
  const auto [poisoned, manifest] = poison::flip_labels(clean, {10, 78});
  std::vector<std::string> truly_poisoned;
  for (const auto& flip : manifest.flips) truly_poisoned.push_back(flip.id);

  afplite::AfpliteParams params;
  params.seed = 9;
  params.tau = 0.5;
  const auto report = afplite::afplite_run(data.embeddings, poisoned.labels(), poisoned.poisoned_flags(), params,
                                           linmod::TrainConfig{});
  const auto precision = afplite::removal_precision(report, truly_poisoned);
  std::size_t removed = 0;
  for (const auto& r : report.rounds) removed += r.removed_ids.size();
  if (!precision) return {false, "nothing removed"};
  return {*precision >= 0.8, "precision " + fmt("%.4f", *precision) + " over " + std::to_string(removed) +
                                 " removals, " + std::to_string(report.rounds.size()) + " rounds"};
}

Outcome afplite_invariants() {
  Rng meta(424242);
  std::size_t violations = 0, runs = 0, rounds = 0;
  auto expect = [&](bool cond) {
    if (!cond) ++violations;
  };
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 80 + uniform_below(meta, 400);
    const std::size_t dim = 1 + uniform_below(meta, 6);
    const double separation = uniform_unit(meta) * 1.5;
    const double level = static_cast<double>(uniform_below(meta, 41));
    auto data = testing::make_clusters(n, dim, separation, 1000 + trial);
    const auto ds = testing::dataset_from_labels(data.embeddings.ids(), data.clean_labels);
    const auto [poisoned, manifest] = poison::flip_labels(ds, {level, 2000ULL + trial});
    const auto labels = poisoned.labels();
    const auto truth = poisoned.poisoned_flags();

    afplite::AfpliteParams params;
    params.m = 2 + uniform_below(meta, 16);
    params.tau = uniform_unit(meta);
    params.k = 1 + uniform_below(meta, 60);
    // Keep at least 60% of S so both classes survive every round and probe
    // subsets can always be drawn with two classes.
    params.n = (6 * n) / 10 + uniform_below(meta, n / 3);
    if (uniform_unit(meta) < 0.3) params.t = 20 + uniform_below(meta, *params.n - 20);
    params.seed = trial;
    params.direction = uniform_unit(meta) < 0.5 ? afplite::Direction::kPruneHard : afplite::Direction::kPruneEasy;
    params.threads = 1 + uniform_below(meta, 3);
    linmod::TrainConfig probe;
    probe.epochs = 3;
    probe.learning_rate = 0.05;

    const auto r = afplite::afplite_run(data.embeddings, labels, truth, params, probe);
    const auto again = afplite::afplite_run(data.embeddings, labels, truth, params, probe);
    ++runs;
    expect(afplite::to_json(r).dump() == afplite::to_json(again).dump());

    std::set<std::string> seen;
    std::size_t size = n;
    for (const auto& round : r.rounds) {
      ++rounds;
      expect(round.set_size == size);
      expect(round.train_size < round.set_size);
      expect(round.removed_ids.size() <= *r.params.k);
      std::size_t evaluations = 0;
      for (const auto& s : round.scores) {
        expect(s.correct <= s.evaluations);
        if (const auto p = s.predictability()) expect(*p >= 0.0 && *p <= 1.0);
        evaluations += s.evaluations;
      }
      // Conservation: every probe scores each held-out sample exactly once.
      expect(evaluations == params.m * 2 * (round.set_size - round.train_size));
      for (const auto& id : round.removed_ids) expect(seen.insert(id).second);
      expect(round.removed_ids.size() <= size);
      size -= round.removed_ids.size();
    }
    for (std::size_t i = 1; i < r.rounds.size(); ++i) expect(r.rounds[i].set_size < r.rounds[i - 1].set_size);
    expect(r.final_retained_ids.size() == size);
    for (const auto& id : r.final_retained_ids) expect(seen.insert(id).second);
    expect(seen.size() == n);
    expect(!r.rounds.empty());
    switch (r.stop_reason) {
      case afplite::StopReason::kMinSize:
        expect(size <= *r.params.n);
        break;
      case afplite::StopReason::kNoRemovals:
        expect(r.rounds.back().removed_ids.empty());
        break;
      case afplite::StopReason::kSingleClass:
        expect(size > *r.params.n);
        break;
    }
    expect(r.rounds.size() <= n);
  }
  return {violations == 0, std::to_string(runs) + " randomized runs, " + std::to_string(rounds) + " rounds, " +
                               std::to_string(violations) + " violations"};
}

Outcome gradient_check() {
  Rng rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + uniform_below(rng, 8);
    std::vector<double> w(d), x(d), grad(d);
    for (auto& v : w) v = uniform_unit(rng) * 4.0 - 2.0;
    for (auto& v : x) v = uniform_unit(rng) * 4.0 - 2.0;
    const double b = uniform_unit(rng) * 2.0 - 1.0;
    const int y = static_cast<int>(uniform_below(rng, 2));
    const double lambda = uniform_unit(rng) * 0.1;
    const double gb = linmod::logistic_gradient(w, b, x, y, lambda, grad);

    const double h = 1e-5;
    auto rel = [](double analytic, double numeric) {
      return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    };
    for (std::size_t j = 0; j <= d; ++j) {
      auto wp = w, wm = w;
      double bp = b, bm = b;
      if (j < d) {
        wp[j] += h;
        wm[j] -= h;
      } else {
        bp += h;
        bm -= h;
      }
      const double numeric = (testing::reference_logistic_loss(wp, bp, x, y, lambda) -
                              testing::reference_logistic_loss(wm, bm, x, y, lambda)) /
                             (2 * h);
      worst = std::max(worst, rel(j < d ? grad[j] : gb, numeric));
    }
  }
  return {worst < 1e-5, "100 instances, max rel err " + fmt("%.3g", worst)};
}

Outcome negative_gap_round_trip() {
  std::vector<mrap::AccuracySeries> series{
      {"bert", "imdb", {{0, 91.2, 99.1}, {50, 50.0, 27.17}, {90, 88.0, 65.17}}},
      {"cnn", "imdb", {{0, 84.0, 95.5}, {70, 77.25, 60.0}}},
  };
  const auto table = report::gap_table(series);
  const auto text = csv::format(table);
  const auto rows = report::gap_rows_from_table(csv::parse(text));
  std::size_t negative = 0;
  for (const auto& r : rows) negative += r.gap < 0;
  const bool exact = csv::format(report::gap_table([&] {
                       // Rebuild series from the parsed gaps (train = val + gap) and re-emit.
                       std::vector<mrap::AccuracySeries> back;
                       for (const auto& r : rows) {
                         if (back.empty() || back.back().model_id != r.model_id)
                           back.push_back({r.model_id, r.dataset_id, {}});
                         back.back().points.push_back({r.poison_percent, 0.0, r.gap});
                       }
                       return back;
                     }())) == text;
  const bool has_expected = text.find("bert,imdb,50.0000,-22.8300") != std::string::npos;
  return {exact && has_expected && negative == 3,
          std::to_string(negative) + " negative gaps, byte-exact re-emit " + (exact ? "yes" : "no")};
}

Outcome end_to_end_determinism() {
  const auto dir = testing::scratch_dir("acceptance_e2e");
  const auto corpus = testing::make_sentiment_corpus(99, {.size = 600});
  corpus::save_tsv(corpus, dir / "corpus.tsv", true);
  testing::write_file(dir / "vectors.txt", testing::make_word_vector_text(3));
  testing::write_file(dir / "config.json", R"({
  "datasets": [{"name": "syn", "path": "corpus.tsv", "has_header": true, "split_seed": 4}],
  "models": [
    {"id": "bow-logreg", "provider": {"kind": "bow"}, "trainer": {"loss": "logistic", "epochs": 10}},
    {"id": "wv-svm", "provider": {"kind": "pooled", "vectors": "vectors.txt"}, "trainer": {"loss": "hinge"}}
  ],
  "poison_levels": [0, 30, 50, 70, 90],
  "seeds": [0, 1, 2],
  "categories": {"bow-logreg": "Naive", "wv-svm": "Embedding"},
  "threads": 2
})");

  auto run_once = [&](const std::string& name) {
    const auto cfg = harness::load_config(dir / "config.json");
    const auto sweep = harness::run_sweep(cfg);
    report::ReportInputs in;
    in.config = cfg;
    in.cells = sweep.cells;
    in.series = sweep.series;
    in.analysis = harness::analyze(sweep.series, cfg.category_map, cfg.rate_mode);
    in.timestamp = 1700000000;
    auto train = corpus::load_tsv(dir / "corpus.tsv", true, "syn");
    train.split_tag = corpus::SplitTag::kTrain;
    const auto [poisoned, manifest] = poison::flip_labels(train, {20, 1});
    afplite::AfpliteParams params;
    params.m = 8;
    params.threads = 2;
    in.afplite_reports.push_back(
        afplite::filter_dataset(poisoned, embed::Provider::bow(1), params, linmod::TrainConfig{}));
    return report::emit(in, dir / name);
  };
  const auto a = run_once("run_a");
  const auto b = run_once("run_b");
  bool same = a.files.size() == b.files.size() && !a.files.empty();
  for (std::size_t i = 0; same && i < a.files.size(); ++i)
    same = a.files[i].name == b.files[i].name && a.files[i].sha256 == b.files[i].sha256 &&
           sha256_file(a.directory / a.files[i].name) == sha256_file(b.directory / b.files[i].name);
  const auto ma = sha256_file(a.manifest_path), mb = sha256_file(b.manifest_path);
  same = same && ma == mb && report::verify_manifest(a.manifest_path) && report::verify_manifest(b.manifest_path);
  return {same, std::to_string(a.files.size()) + " files, manifest " + ma.substr(0, 12)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"nmrap anchor", nmrap_anchor},
      {"mrap oracle equivalence", mrap_oracle},
      {"50% poison collapse", fifty_percent_collapse},
      {"v-shape", v_shape},
      {"afplite blindness", afplite_blindness},
      {"afplite positive control", afplite_positive_control},
      {"afplite invariants", afplite_invariants},
      {"gradient check", gradient_check},
      {"negative gap round trip", negative_gap_round_trip},
      {"end-to-end determinism", end_to_end_determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2zu %-26s (%.1fs) %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), secs,
                o.detail.c_str());
    std::fflush(stdout);
    failures += !o.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
