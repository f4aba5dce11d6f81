#include <doctest.h>

#include <algorithm>

#include "../support/synthetic.hpp"
#include "poisonbench/error.hpp"
#include "poisonbench/harness.hpp"

using namespace poisonbench;

namespace {

harness::ExperimentConfig small_config() {
  harness::ExperimentConfig cfg;
  cfg.datasets.push_back({"syn", {}, false, 0.8, 3});
  harness::ModelSpec logreg;
  logreg.model_id = "bow-logreg";
  logreg.trainer.loss = linmod::Loss::kLogistic;
  logreg.trainer.epochs = 5;
  harness::ModelSpec svm = logreg;
  svm.model_id = "bow-svm";
  svm.trainer.loss = linmod::Loss::kHinge;
  cfg.models = {logreg, svm};
  cfg.poison_levels = {0, 30, 50, 70};
  cfg.seeds = {0, 1};
  return cfg;
}

std::vector<corpus::Dataset> small_corpus() { return {testing::make_sentiment_corpus(17, {.size = 400})}; }

}  // namespace

TEST_CASE("generalization gap keeps its sign") {
  mrap::AccuracySeries s{"m", "d", {{0, 85, 92}, {50, 50, 48}, {90, 80, 10}}};
  const auto gap = harness::generalization_gap(s);
  REQUIRE(gap.size() == 3);
  CHECK(gap[0].gap == doctest::Approx(7.0));
  CHECK(gap[1].gap == doctest::Approx(-2.0));
  CHECK(gap[2].gap == doctest::Approx(-70.0));
  CHECK(gap[2].poison_percent == 90.0);
}

TEST_CASE("categorize averages members per level") {
  std::vector<mrap::AccuracySeries> series{
      {"bert", "d", {{0, 86.25, 90}, {30, 80, 85}}},
      {"roberta", "d", {{0, 85.74, 92}, {30, 82, 81}}},
      {"cnn", "d", {{0, 70, 75}, {30, 60, 70}}},
  };
  const auto cats = harness::categorize(series, {{"bert", "Transformers"}, {"roberta", "Transformers"}, {"cnn", "CNN"}});
  REQUIRE(cats.size() == 2);
  CHECK(cats[0].model_id == "CNN");
  CHECK(cats[1].model_id == "Transformers");
  CHECK(cats[1].points[0].val_accuracy == doctest::Approx(85.995));
  CHECK(cats[1].points[1].train_accuracy == doctest::Approx(83.0));
  CHECK_THROWS_AS(harness::categorize(series, {{"bert", "T"}}), ValidationError);

  series[1].points[1].poison_percent = 40;
  CHECK_THROWS_AS(harness::categorize(series, {{"bert", "T"}, {"roberta", "T"}, {"cnn", "C"}}), ValidationError);
}

TEST_CASE("normalize_accuracy and clean_accuracy") {
  const auto norm = harness::normalize_accuracy({{"a", 80.0}, {"b", 90.0}, {"c", 85.0}});
  CHECK(norm.at("a") == 0.0);
  CHECK(norm.at("b") == 1.0);
  CHECK(norm.at("c") == doctest::Approx(0.5));
  CHECK_THROWS_AS(harness::normalize_accuracy({{"a", 80.0}, {"b", 80.0}}), ValidationError);

  std::vector<mrap::AccuracySeries> series{{"m", "d1", {{0, 80, 0}, {50, 50, 0}}}, {"m", "d2", {{0, 90, 0}, {50, 50, 0}}}};
  CHECK(harness::clean_accuracy(series).at("m") == doctest::Approx(85.0));
}

TEST_CASE("dataset_difference needs exactly two datasets") {
  std::vector<mrap::AccuracySeries> series{{"m", "a", {{0, 80, 0}, {50, 55, 0}}}, {"m", "b", {{0, 90, 0}, {50, 50, 0}}}};
  const auto diff = harness::dataset_difference(series);
  REQUIRE(diff.size() == 2);
  CHECK(diff[0].abs_difference == doctest::Approx(10.0));
  CHECK(diff[1].abs_difference == doctest::Approx(5.0));
  series.push_back({"m", "c", {{0, 70, 0}, {50, 50, 0}}});
  CHECK(harness::dataset_difference(series).empty());
}

TEST_CASE("config JSON parsing, defaults and validation") {
  const auto j = nlohmann::json::parse(R"({
    "datasets": [{"name": "imdb", "path": "data/imdb.tsv", "has_header": true}],
    "models": [{"id": "m1", "provider": {"kind": "bow", "min_frequency": 2},
                "trainer": {"loss": "svm", "epochs": 3}}],
    "categories": {"m1": "Naive"},
    "mrap_mode": "magnitude"
  })");
  const auto cfg = harness::config_from_json(j, "/base");
  CHECK(cfg.datasets[0].path == std::filesystem::path("/base/data/imdb.tsv"));
  CHECK(cfg.datasets[0].has_header);
  CHECK(cfg.datasets[0].train_fraction == 0.8);
  CHECK(cfg.models[0].provider.min_frequency == 2);
  CHECK(cfg.models[0].trainer.loss == linmod::Loss::kHinge);
  CHECK(cfg.models[0].trainer.epochs == 3);
  CHECK(cfg.poison_levels == std::vector<double>{0, 30, 50, 70, 90});
  CHECK(cfg.seeds.size() == 3);
  CHECK(cfg.rate_mode == mrap::RateMode::kMagnitude);
  CHECK(cfg.label_interpretation == harness::LabelInterpretation::kMajority);

  const auto round_trip = harness::config_from_json(nlohmann::json::parse(harness::to_json(cfg).dump()));
  CHECK(harness::config_hash(round_trip) == harness::config_hash(cfg));

  auto bad = j;
  bad["poison_levels"] = {30, 0};
  CHECK_THROWS_AS(harness::config_from_json(bad), ValidationError);
  bad = j;
  bad["models"][0]["provider"]["kind"] = "gpt";
  CHECK_THROWS_AS(harness::config_from_json(bad), ValidationError);
  bad = j;
  bad["categories"] = nlohmann::json::object();
  bad["categories"]["other"] = "x";
  CHECK_THROWS_AS(harness::config_from_json(bad), ValidationError);
  bad = j;
  bad["label_interpretation"] = "sideways";
  CHECK_THROWS_AS(harness::config_from_json(bad), ValidationError);
}

TEST_CASE("sweep produces sorted cells and seed-averaged series") {
  const auto cfg = small_config();
  const auto res = harness::run_sweep(cfg, small_corpus());
  CHECK(res.cells.size() == 2 * 4 * 2);
  CHECK(res.series.size() == 2);
  for (const auto& c : res.cells) {
    CHECK(c.realized_poison_percent == doctest::Approx(c.poison_percent).epsilon(0.01));
    CHECK(c.validation_digest == res.cells[0].validation_digest);
    CHECK(c.val_accuracy >= 0.0);
    CHECK(c.val_accuracy <= 100.0);
  }
  CHECK(res.cells[0].model_id == "bow-logreg");
  CHECK(res.cells[0].poison_percent == 0.0);
  const auto& s0 = res.series[0];
  CHECK(s0.points[1].val_accuracy == doctest::Approx((res.cells[2].val_accuracy + res.cells[3].val_accuracy) / 2));
  // Clean data is learnable (400 noisy samples, so well above chance but modest).
  CHECK(s0.points[0].val_accuracy > 60.0);
}

TEST_CASE("level 0 equals training on the raw split") {
  auto cfg = small_config();
  cfg.poison_levels = {0};
  cfg.seeds = {5};
  const auto data = small_corpus();
  const auto res = harness::run_sweep(cfg, data);

  auto ds = data[0];
  ds.name = "syn";
  const auto [train, validation] = corpus::split(ds, 0.8, 3);
  const auto provider = embed::Provider::bow(1).fitted(train);
  auto trainer = cfg.models[0].trainer;
  trainer.seed = harness::trainer_seed(5, cfg.models[0].trainer.seed);
  const auto model = linmod::train(provider.embed(train), train.labels(), trainer);
  const double val = 100.0 * linmod::accuracy(linmod::predict(model, provider.embed(validation)), validation.labels());
  const double tr = 100.0 * linmod::accuracy(linmod::predict(model, provider.embed(train)), train.labels());
  CHECK(res.cells[0].val_accuracy == val);
  CHECK(res.cells[0].train_accuracy == tr);
  CHECK(res.cells[0].realized_poison_percent == 0.0);
}

TEST_CASE("sweep cells do not depend on model order, level set or seed order") {
  auto cfg = small_config();
  const auto base = harness::run_sweep(cfg, small_corpus());

  auto swapped = cfg;
  std::swap(swapped.models[0], swapped.models[1]);
  const auto b = harness::run_sweep(swapped, small_corpus());
  CHECK(csv::format(mrap::series_to_table(b.series)) == csv::format(mrap::series_to_table(base.series)));

  auto reseeded = cfg;
  reseeded.seeds = {1, 0};
  const auto c = harness::run_sweep(reseeded, small_corpus());
  CHECK(csv::format(mrap::series_to_table(c.series)) == csv::format(mrap::series_to_table(base.series)));

  auto fewer = cfg;
  fewer.poison_levels = {0, 50};
  const auto d = harness::run_sweep(fewer, small_corpus());
  CHECK(d.series[0].points[0].val_accuracy == base.series[0].points[0].val_accuracy);
  CHECK(d.series[0].points[1].val_accuracy == base.series[0].points[2].val_accuracy);

  auto threaded = cfg;
  threaded.threads = 3;
  const auto e = harness::run_sweep(threaded, small_corpus());
  CHECK(csv::format(mrap::series_to_table(e.series)) == csv::format(mrap::series_to_table(base.series)));
}

TEST_CASE("label interpretation only changes levels above half") {
  auto cfg = small_config();
  const auto majority = harness::run_sweep(cfg, small_corpus());
  cfg.label_interpretation = harness::LabelInterpretation::kLiteral;
  const auto literal = harness::run_sweep(cfg, small_corpus());
  for (std::size_t i = 0; i < majority.cells.size(); ++i) {
    const auto& m = majority.cells[i];
    const auto& l = literal.cells[i];
    CHECK(m.train_accuracy == l.train_accuracy);
    if (m.poison_percent > 50)
      CHECK(m.val_accuracy == doctest::Approx(100.0 - l.val_accuracy));
    else
      CHECK(m.val_accuracy == l.val_accuracy);
  }
}

TEST_CASE("average_over_seeds is invariant to cell order") {
  std::vector<harness::CellResult> cells;
  for (std::uint64_t seed : {5, 1, 3})
    for (double level : {0.0, 50.0}) cells.push_back({"d", "m", level, seed, 90.0 + seed, 80.0 + seed / 3.0, level, ""});
  const auto a = harness::average_over_seeds(cells);
  std::reverse(cells.begin(), cells.end());
  const auto b = harness::average_over_seeds(cells);
  CHECK(csv::format(mrap::series_to_table(a)) == csv::format(mrap::series_to_table(b)));
  CHECK(a[0].points[0].train_accuracy == doctest::Approx(93.0));
  cells.push_back(cells.front());
  CHECK_THROWS_AS(harness::average_over_seeds(cells), ValidationError);
}

TEST_CASE("analyze bundles model and category metrics") {
  std::vector<mrap::AccuracySeries> series{
      {"a", "d", {{0, 90, 95}, {50, 50, 60}, {90, 85, 88}}},
      {"b", "d", {{0, 80, 85}, {50, 49, 55}, {90, 70, 72}}},
      {"c", "d", {{0, 88, 90}, {50, 51, 52}, {90, 60, 61}}},
  };
  const auto an = harness::analyze(series, {{"a", "X"}, {"b", "X"}, {"c", "Y"}}, mrap::RateMode::kLiteral);
  CHECK(an.model_metrics.model_mrap.size() == 3);
  REQUIRE(an.category_metrics.has_value());
  CHECK(an.category_series.size() == 2);
  REQUIRE(an.normalized_accuracy.has_value());
  CHECK(an.normalized_accuracy->at("a") == 1.0);
  CHECK(an.dataset_differences.empty());
  const auto none = harness::analyze(series, {}, mrap::RateMode::kLiteral);
  CHECK_FALSE(none.category_metrics.has_value());
}

TEST_CASE("sweep errors carry context") {
  auto cfg = small_config();
  cfg.datasets[0].train_fraction = 0.8;
  std::vector<corpus::Dataset> tiny{testing::make_sentiment_corpus(1, {.size = 10})};
  for (auto& s : tiny[0].samples) s.label = s.original_label = 1;
  CHECK_THROWS_WITH_AS(harness::run_sweep(cfg, tiny), doctest::Contains("syn"), Error);
  CHECK_THROWS_AS(harness::run_sweep(cfg, {}), ValidationError);
}
