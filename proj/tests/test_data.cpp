#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "support.hpp"
#include "xrhead/errors.hpp"
#include "xrhead/data.hpp"

using namespace xrhead;

namespace {

SyntheticSpec small_spec() {
  SyntheticSpec s;
  s.classes = 4;
  s.superclasses = 2;
  s.parts = 3;
  s.tokens = 8;
  s.patch_dim = 5;
  s.word_dim = 6;
  s.train_per_class = 6;
  s.test_per_class = 3;
  return s;
}

// The (noise-free) token vector of part p in a sample: the first token assigned to it.
std::vector<double> part_token(const Sample& smp, std::size_t p, std::size_t D) {
  for (std::size_t i = 0; i < smp.part_assignment.size(); ++i) {
    if (smp.part_assignment[i] == p + 1) return {smp.patches.begin() + i * D, smp.patches.begin() + (i + 1) * D};
  }
  return {};
}

std::vector<std::vector<double>> sorted_rows(const Sample& smp, std::size_t D) {
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < smp.part_assignment.size(); ++i) {
    rows.emplace_back(smp.patches.begin() + i * D, smp.patches.begin() + (i + 1) * D);
  }
  std::sort(rows.begin(), rows.end());
  return rows;
}

// Mean token of part p over every sample of class k, per feature.
std::vector<double> part_mean(const std::vector<Sample>& split, std::size_t k, std::size_t p, std::size_t D,
                              std::size_t& count) {
  std::vector<double> m(D, 0.0);
  count = 0;
  for (const auto& smp : split) {
    if (smp.label != k) continue;
    for (std::size_t i = 0; i < smp.part_assignment.size(); ++i) {
      if (smp.part_assignment[i] != p + 1) continue;
      for (std::size_t d = 0; d < D; ++d) m[d] += smp.patches[i * D + d];
      ++count;
    }
  }
  for (double& v : m) v /= static_cast<double>(count);
  return m;
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("sizes, labels and round-robin part assignment") {
  const Dataset ds = generate(small_spec());
  CHECK(ds.train.size() == 24);
  CHECK(ds.test.size() == 12);
  CHECK(ds.class_embeddings.shape() == Shape{4, 6});
  CHECK(ds.class_names.size() == 4);
  CHECK(ds.part_names.size() == 3);
  for (const auto& smp : ds.train) {
    CHECK(smp.patches.size() == 8 * 5);
    std::vector<int> counts(4, 0);
    for (auto a : smp.part_assignment) ++counts[a];
    CHECK(counts == std::vector<int>{2, 2, 2, 2});
  }
}

TEST_CASE("few-shot split of the default benchmark has 320 samples") {
  SyntheticSpec s;
  s.test_per_class = 1;
  const Dataset ds = generate(s);
  const auto split = few_shot_split(ds, 16, 3);
  CHECK(split.size() == 320);
  std::vector<int> per(20, 0);
  for (const auto& smp : split) ++per[smp.label];
  for (int c : per) CHECK(c == 16);
  CHECK(split.size() == few_shot_split(ds, 16, 3).size());
  CHECK(sorted_rows(split[5], s.patch_dim) == sorted_rows(few_shot_split(ds, 16, 3)[5], s.patch_dim));
}

TEST_CASE("too few samples names the class") {
  const Dataset ds = generate(small_spec());
  try {
    few_shot_split(ds, 7, 0);
    FAIL("accepted more shots than samples");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("class_000") != std::string::npos);
  }
  CHECK_THROWS_AS(few_shot_split(ds, 0, 0), ConfigError);
}

TEST_CASE("without noise and cross structure, samples of a class differ only in token order") {
  SyntheticSpec s = small_spec();
  s.noise = 0.0;
  const Dataset ds = generate(s);
  for (std::size_t k = 0; k < 4; ++k) {
    const auto ref = sorted_rows(ds.train[k * 6], 5);
    for (std::size_t i = 1; i < 6; ++i) CHECK(sorted_rows(ds.train[k * 6 + i], 5) == ref);
  }
  CHECK(sorted_rows(ds.train[0], 5) != sorted_rows(ds.train[6], 5));
}

TEST_CASE("generation is deterministic in the seed") {
  SyntheticSpec s = small_spec();
  CHECK(encode_dataset(generate(s)) == encode_dataset(generate(s)));
  SyntheticSpec t = s;
  t.seed = 1;
  CHECK(encode_dataset(generate(s)) != encode_dataset(generate(t)));
}

TEST_CASE("dataset file round trip and corruption") {
  const Dataset ds = generate(small_spec());
  const auto path = (std::filesystem::temp_directory_path() / "xrhead_data_test.xrvd").string();
  save_dataset(ds, path);
  const Dataset back = load_dataset(path);
  std::filesystem::remove(path);
  CHECK(encode_dataset(back) == encode_dataset(ds));
  CHECK(back.train[3].patches == ds.train[3].patches);
  CHECK(back.class_names == ds.class_names);

  auto bytes = encode_dataset(ds);
  auto bad = bytes;
  bad[1] = '?';
  CHECK_THROWS_AS(decode_dataset(bad), FormatError);
  bytes.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_dataset(bytes), FormatError);
}

TEST_CASE("spec validation") {
  SyntheticSpec s = small_spec();
  s.classes = 5;
  CHECK_THROWS_AS(generate(s), ConfigError);
  s = small_spec();
  s.cross_structure = true;
  s.parts = 1;
  CHECK_THROWS_AS(generate(s), ConfigError);
  s.parts = 2;  // one arrangement only, two siblings requested
  CHECK_THROWS_AS(generate(s), ConfigError);
  s.parts = 3;
  CHECK_NOTHROW(generate(s));
}

TEST_CASE("cross structure: siblings rearrange one pattern set") {
  SyntheticSpec s = small_spec();
  s.classes = 2;
  s.superclasses = 1;
  s.noise = 0.0;
  s.cross_structure = true;
  s.train_per_class = 3;
  const Dataset ds = generate(s);
  const std::size_t D = s.patch_dim;
  // sibling 0 carries pattern (p + n) mod 3 on part p of its n-th sample,
  // sibling 1 carries (q(p) + n) mod 3 with q = (0, 2, 1)
  for (std::size_t n = 0; n < 3; ++n) {
    const Sample& c0 = ds.train[n];
    const Sample& c1 = ds.train[3 + n];
    CHECK(part_token(c1, 0, D) == part_token(c0, 0, D));
    CHECK(part_token(c1, 1, D) == part_token(ds.train[(n + 1) % 3], 1, D));
    CHECK(part_token(c1, 2, D) == part_token(ds.train[(n + 2) % 3], 2, D));
    CHECK(part_token(c1, 1, D) != part_token(c0, 1, D));
  }
}

TEST_CASE("cross structure: per-part means agree across siblings") {
  SyntheticSpec s;
  s.cross_structure = true;
  s.train_per_class = 64;
  s.test_per_class = 1;
  const Dataset ds = generate(s);
  const std::size_t D = s.patch_dim, siblings = s.classes / s.superclasses;

  SyntheticSpec plain = s;
  plain.cross_structure = false;
  const Dataset control = generate(plain);

  std::size_t checks = 0, within = 0, control_within = 0;
  double worst = 0.0;
  for (std::size_t g = 0; g < s.superclasses; ++g) {
    for (std::size_t j = 1; j < siblings; ++j) {
      for (std::size_t p = 0; p < s.parts; ++p) {
        std::size_t n = 0;
        const auto a = part_mean(ds.train, g * siblings, p, D, n);
        const auto b = part_mean(ds.train, g * siblings + j, p, D, n);
        const auto ca = part_mean(control.train, g * siblings, p, D, n);
        const auto cb = part_mean(control.train, g * siblings + j, p, D, n);
        // difference of two independent means, each with standard error sigma/sqrt(n)
        const double bound = 3.0 * s.noise * std::sqrt(2.0 / static_cast<double>(n));
        for (std::size_t d = 0; d < D; ++d) {
          ++checks;
          within += std::abs(a[d] - b[d]) <= bound;
          control_within += std::abs(ca[d] - cb[d]) <= bound;
          worst = std::max(worst, std::abs(a[d] - b[d]) / bound);
        }
      }
    }
  }
  // a 3-sigma band holds 99.7% of draws; 5/3 of the band is a 5-sigma event
  CHECK(static_cast<double>(within) >= 0.98 * static_cast<double>(checks));
  CHECK(worst < 5.0 / 3.0);
  CHECK(static_cast<double>(control_within) < 0.5 * static_cast<double>(checks));
}

TEST_CASE("stack_patches layout") {
  const Dataset ds = generate(small_spec());
  std::vector<const Sample*> two{&ds.train[1], &ds.train[4]};
  Tensor x = stack_patches(two, 8, 5);
  CHECK(x.shape() == Shape{2, 8, 5});
  CHECK(x.at({1, 3, 2}) == ds.train[4].patches[3 * 5 + 2]);
}

}  // TEST_SUITE
