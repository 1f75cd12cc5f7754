#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "gemini/sampling.hpp"
#include "test_support.hpp"

using namespace gemini;
using namespace gemini::sampling;
using testing_support::labelled_patches;

namespace {

std::vector<int> balanced_labels(int classes, int per_class) {
  std::vector<int> l;
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) l.push_back(c);
  }
  return l;
}

// Points on a line at the given distances from the origin anchor.
std::vector<std::vector<double>> at_distances(std::initializer_list<double> ds) {
  std::vector<std::vector<double>> out;
  for (double d : ds) out.push_back({d, 0.0});
  return out;
}

}  // namespace

TEST(MakeTriplets, TwoClassesTwoPatchesEach) {
  const auto patches = labelled_patches({0, 0, 1, 1});
  const auto ts = make_triplets(patches, 4, 1);
  ASSERT_EQ(ts.size(), 4u);
  for (const auto& t : ts) EXPECT_TRUE(is_valid(t, patches));
}

TEST(MakeTriplets, InvariantsHoldOnUnbalancedData) {
  const auto patches = labelled_patches({0, 0, 0, 0, 0, 0, 0, 1, 2, 2, 3});
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    for (const auto& t : make_triplets(patches, 200, seed)) {
      ASSERT_TRUE(is_valid(t, patches));
      EXPECT_NE(patches[t.anchor].label.index, 1);  // class 1 cannot supply a positive
    }
  }
}

TEST(MakeTriplets, Errors) {
  EXPECT_THROW(make_triplets(labelled_patches({2, 2, 2}), 1, 0), SamplingError);
  EXPECT_THROW(make_triplets(labelled_patches({0, 1, 2}), 1, 0), SamplingError);
  try {
    make_triplets(labelled_patches({3, 3}), 1, 0);
    FAIL();
  } catch (const SamplingError& e) {
    EXPECT_NE(std::string(e.what()).find("c3"), std::string::npos);
  }
}

TEST(MakeTriplets, AnchorClassFrequencyNearUniform) {
  const auto patches = labelled_patches(balanced_labels(6, 10));
  const auto ts = make_triplets(patches, 1000, 42);
  std::map<int, int> freq;
  for (const auto& t : ts) ++freq[patches[t.anchor].label.index];
  const double p = 1.0 / 6.0;
  const double mean = 1000 * p;
  const double sd = std::sqrt(1000 * p * (1 - p));
  for (int c = 0; c < 6; ++c) EXPECT_LE(std::abs(freq[c] - mean), 5 * sd) << "class " << c;
}

TEST(MakeTriplets, DeterministicPerSeedAndBatch) {
  const auto patches = labelled_patches(balanced_labels(3, 5));
  EXPECT_EQ(make_triplets(patches, 50, 7, 3), make_triplets(patches, 50, 7, 3));
  EXPECT_NE(make_triplets(patches, 50, 7, 3), make_triplets(patches, 50, 7, 4));
  EXPECT_NE(make_triplets(patches, 50, 7, 3), make_triplets(patches, 50, 8, 3));
  const auto batch = make_triplet_batch(patches, 16, 7, 9);
  EXPECT_EQ(batch.batch_id, 9u);
  EXPECT_EQ(batch.triplets.size(), 16u);
}

TEST(MineSemiHard, HandExamples) {
  const std::vector<double> a{0.0, 0.0}, p{1.0, 0.0};
  EXPECT_EQ(mine_semi_hard<double>(a, p, at_distances({0.9, 1.1, 1.5}), 0.2), std::optional<std::size_t>(1));
  EXPECT_EQ(mine_semi_hard<double>(a, p, at_distances({1.3, 2.0}), 0.2), std::nullopt);
  EXPECT_EQ(mine_semi_hard<double>(a, p, at_distances({1.15, 1.05}), 0.2), std::optional<std::size_t>(1));
  EXPECT_EQ(mine_semi_hard<double>(a, p, at_distances({1.0, 1.2}), 0.2), std::nullopt);  // open interval
  EXPECT_THROW(mine_semi_hard<double>(a, p, {}, 0.2), InvalidInputError);
  EXPECT_THROW(mine_semi_hard<double>(a, p, at_distances({1.1}), 0.0), ConfigError);
}

TEST(MineSemiHard, ResultStrictlyInsideInterval) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 500; ++trial) {
    const double d_ap = u(rng);
    std::vector<double> d_an(10);
    for (auto& d : d_an) d = u(rng);
    const double margin = 0.1 + u(rng) / 3.0;
    const auto k = mine_semi_hard_distances(d_ap, d_an, margin);
    std::optional<std::size_t> oracle;
    for (std::size_t i = 0; i < d_an.size(); ++i) {
      if (d_an[i] > d_ap && d_an[i] < d_ap + margin && (!oracle || d_an[i] < d_an[*oracle])) oracle = i;
    }
    ASSERT_EQ(k, oracle);
    if (k) {
      EXPECT_GT(d_an[*k], d_ap);
      EXPECT_LT(d_an[*k], d_ap + margin);
    }
  }
}

TEST(MakePairs, MixWithinBinomialBound) {
  const auto patches = labelled_patches(balanced_labels(4, 10));
  const auto pairs = make_pairs(patches, 100, 3);
  int positives = 0;
  for (const auto& pr : pairs) {
    positives += pr.same_class;
    EXPECT_EQ(pr.same_class, patches[pr.first].label.index == patches[pr.second].label.index);
    if (pr.same_class) {
      EXPECT_NE(pr.first, pr.second);
    }
  }
  EXPECT_LE(std::abs(positives - 50), 15);
}

TEST(MakePairs, SingleClassAndDeterminism) {
  const auto one_class = labelled_patches({0, 0, 0});
  EXPECT_NO_THROW(make_pairs(one_class, 10, 0, 1.0));
  EXPECT_THROW(make_pairs(one_class, 10, 0, 0.0), SamplingError);
  const auto patches = labelled_patches(balanced_labels(3, 4));
  EXPECT_EQ(make_pairs(patches, 40, 11), make_pairs(patches, 40, 11));
  EXPECT_THROW(make_pairs(patches, 4, 0, 1.5), ConfigError);
}

TEST(BalancedBatch, CoversClassesUniformly) {
  const auto patches = labelled_patches({0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 2, 2});
  std::map<int, int> freq;
  for (std::uint64_t b = 0; b < 200; ++b) {
    const auto idx = make_balanced_batch(patches, 12, 1, b);
    ASSERT_EQ(idx.size(), 12u);
    for (auto i : idx) ++freq[patches[i].label.index];
  }
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(freq[c] / 2400.0, 1.0 / 3.0, 0.04);
  EXPECT_EQ(make_balanced_batch(patches, 8, 2, 3), make_balanced_batch(patches, 8, 2, 3));
  EXPECT_THROW(make_balanced_batch(labelled_patches({}), 4, 0, 0), SamplingError);
}
