#include <doctest.h>

#include <map>

#include "../support/synthetic.hpp"
#include "poisonbench/error.hpp"
#include "poisonbench/poison.hpp"

using namespace poisonbench;

namespace {

corpus::Dataset train_set(std::size_t n) {
  corpus::Dataset ds;
  ds.name = "train";
  ds.split_tag = corpus::SplitTag::kTrain;
  for (std::size_t i = 0; i < n; ++i)
    ds.samples.push_back({"s" + std::to_string(i), "t", static_cast<int>(i % 2), static_cast<int>(i % 2), false});
  return ds;
}

// Chi-square statistic of per-sample flip counts against a uniform expectation.
double flip_chi_square(std::size_t n, double level, std::size_t trials) {
  const auto ds = train_set(n);
  std::vector<double> counts(n, 0.0);
  for (std::size_t seed = 0; seed < trials; ++seed) {
    const auto [out, manifest] = poison::flip_labels(ds, {level, seed});
    for (std::size_t i = 0; i < n; ++i) counts[i] += out.samples[i].poisoned ? 1.0 : 0.0;
  }
  const double expected = static_cast<double>(trials) * static_cast<double>(poison::flip_count(level, n)) /
                          static_cast<double>(n);
  double chi = 0.0;
  for (double c : counts) chi += (c - expected) * (c - expected) / expected;
  return chi;
}

}  // namespace

TEST_CASE("level 0 leaves the dataset untouched") {
  const auto ds = train_set(10);
  const auto [out, manifest] = poison::flip_labels(ds, {0.0, 3});
  CHECK(manifest.flips.empty());
  CHECK(out.labels() == ds.labels());
  CHECK(poison::verify_level(out) == 0.0);
}

TEST_CASE("level 50 flips exactly half") {
  const auto ds = train_set(10);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto [out, manifest] = poison::flip_labels(ds, {50.0, seed});
    CHECK(manifest.flips.size() == 5);
    std::size_t toggled = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      if (out.samples[i].label != ds.samples[i].label) {
        ++toggled;
        CHECK(out.samples[i].label == 1 - ds.samples[i].label);
        CHECK(out.samples[i].poisoned);
        CHECK(out.samples[i].original_label == ds.samples[i].label);
      } else {
        CHECK_FALSE(out.samples[i].poisoned);
      }
    }
    CHECK(toggled == 5);
    for (const auto& f : manifest.flips) CHECK(f.original_label != f.flipped_label);
  }
}

TEST_CASE("level 100 toggles everything and is an involution") {
  const auto ds = train_set(10);
  const auto [once, m1] = poison::flip_labels(ds, {100.0, 1});
  CHECK(m1.flips.size() == 10);
  for (std::size_t i = 0; i < ds.size(); ++i) CHECK(once.samples[i].label == 1 - ds.samples[i].label);
  const auto [twice, m2] = poison::flip_labels(once, {100.0, 2});
  CHECK(twice.labels() == ds.labels());
  for (const auto& s : twice.samples) CHECK_FALSE(s.poisoned);
}

TEST_CASE("flip count rounds to nearest with ties to even") {
  CHECK(poison::flip_count(30, 1000) == 300);
  CHECK(poison::flip_count(30, 7) == 2);   // 2.1
  CHECK(poison::flip_count(50, 5) == 2);   // 2.5 -> 2
  CHECK(poison::flip_count(50, 7) == 4);   // 3.5 -> 4
  CHECK(poison::flip_count(70, 10) == 7);
  CHECK(poison::flip_count(90, 3) == 3);   // 2.7
  CHECK_THROWS_AS(poison::flip_count(-1, 10), ValidationError);
  CHECK_THROWS_AS(poison::flip_count(100.5, 10), ValidationError);
}

TEST_CASE("verify_level reports the realised percentage") {
  const auto [out1000, m] = poison::flip_labels(train_set(1000), {30.0, 9});
  CHECK(poison::verify_level(out1000) == doctest::Approx(30.0));
  const auto [out7, m7] = poison::flip_labels(train_set(7), {30.0, 9});
  CHECK(poison::verify_level(out7) == doctest::Approx(100.0 * 2.0 / 7.0));
  CHECK(poison::verify_level(out7) == doctest::Approx(28.5714).epsilon(1e-5));
  CHECK(poison::verify_level(train_set(4)) == 0.0);
}

TEST_CASE("validation split and bad levels are rejected") {
  auto val = train_set(10);
  val.split_tag = corpus::SplitTag::kValidation;
  CHECK_THROWS_AS(poison::flip_labels(val, {30.0, 1}), ValidationError);
  CHECK_THROWS_AS(poison::flip_labels(train_set(10), {101.0, 1}), ValidationError);
  CHECK_THROWS_AS(poison::flip_labels(train_set(10), {-5.0, 1}), ValidationError);
}

TEST_CASE("flip selection is deterministic per seed") {
  const auto ds = train_set(200);
  const auto [a, ma] = poison::flip_labels(ds, {30.0, 42});
  const auto [b, mb] = poison::flip_labels(ds, {30.0, 42});
  const auto [c, mc] = poison::flip_labels(ds, {30.0, 43});
  REQUIRE(ma.flips.size() == mb.flips.size());
  for (std::size_t i = 0; i < ma.flips.size(); ++i) CHECK(ma.flips[i].id == mb.flips[i].id);
  CHECK(a.labels() == b.labels());
  CHECK(a.labels() != c.labels());
}

TEST_CASE("each sample is flipped with frequency level/100") {
  // 19 degrees of freedom; 43.82 is the 0.999 quantile.
  CHECK(flip_chi_square(20, 30.0, 3000) < 43.82);
  // The above-half path (flip all, restore N-k) must be uniform too.
  CHECK(flip_chi_square(20, 70.0, 3000) < 43.82);
  CHECK(flip_chi_square(20, 90.0, 3000) < 43.82);
}

TEST_CASE("manifest persists as CSV with JSON sidecar") {
  const auto dir = testing::scratch_dir("poison_manifest");
  const auto ds = train_set(40);
  const auto [out, manifest] = poison::flip_labels(ds, {30.0, 5});
  poison::save_manifest(manifest, dir / "flips.csv");
  CHECK(std::filesystem::exists(dir / "flips.json"));
  const auto loaded = poison::load_manifest(dir / "flips.csv");
  CHECK(loaded.level_percent == 30.0);
  CHECK(loaded.seed == 5);
  CHECK(loaded.n_total == 40);
  REQUIRE(loaded.flips.size() == manifest.flips.size());

  // Reconstruct ground truth from a plain TSV of the poisoned labels.
  corpus::Dataset plain = out;
  for (auto& s : plain.samples) {
    s.original_label = s.label;
    s.poisoned = false;
  }
  const auto marked = poison::apply_manifest(plain, loaded);
  CHECK(marked.poisoned_flags() == out.poisoned_flags());
  CHECK(marked.original_labels() == ds.labels());
}
