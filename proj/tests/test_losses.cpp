#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "gemini/losses.hpp"
#include "test_support.hpp"

using namespace gemini;
using namespace gemini::losses;
using testing_support::random_vector;
using testing_support::rel_error;

namespace {

template <typename S>
std::span<const S> one(const S& s) {
  return {&s, 1};
}

GeminiSample<double> scalar_triplet(double fa, double fp, double ga, double gp, double gn) {
  return {{fa}, {fp}, {ga}, {gp}, {gn}};
}

}  // namespace

// ---------------------------------------------------------------------------
// Hand-evaluated examples

TEST(GeminiLoss, HingeInactiveExample) {
  const auto s = scalar_triplet(0, 3, 0, 1, 2);
  EXPECT_NEAR(gemini_loss(one(s), {0.5, 1.0}), 1.5, 1e-5);
}

TEST(GeminiLoss, HingeActiveExample) {
  const auto s = scalar_triplet(0, 3, 0, 1, 1.5);
  EXPECT_NEAR(gemini_loss(one(s), {0.5, 1.0}), 1.75, 1e-5);
}

TEST(GeminiLoss, BothTermsVanish) {
  const GeminiSample<double> s{{1, 2}, {1, 2}, {0, 0}, {1, 0}, {5, 0}};
  EXPECT_EQ(gemini_loss(one(s), {0.3, 1.0}), 0.0);
}

TEST(GeminiLoss, TermsSplitIntoLocalAndGlobal) {
  const auto s = scalar_triplet(0, 3, 0, 1, 1.5);
  const LossTerms t = gemini_loss_terms(one(s), {0.5, 1.0});
  EXPECT_NEAR(t.first, 1.5, 1e-12);
  EXPECT_NEAR(t.second, 0.25, 1e-12);
  EXPECT_NEAR(t.total, t.first + t.second, 1e-12);
}

TEST(GeminiLoss, BetaExtremes) {
  std::mt19937_64 rng(7);
  std::vector<GeminiSample<double>> batch;
  double local = 0.0, hinge = 0.0;
  for (int i = 0; i < 20; ++i) {
    GeminiSample<double> s{random_vector(rng, 4), random_vector(rng, 4), random_vector(rng, 3), random_vector(rng, 3),
                           random_vector(rng, 3)};
    local += testing_support::norm2(s.f_anchor, s.f_positive);
    hinge += std::max(0.0, testing_support::norm2(s.g_anchor, s.g_positive) + 1.0 -
                               testing_support::norm2(s.g_anchor, s.g_negative));
    batch.push_back(std::move(s));
  }
  const std::span<const GeminiSample<double>> b(batch);
  EXPECT_NEAR(gemini_loss(b, {1.0, 1.0}), local, 1e-12);
  EXPECT_NEAR(gemini_loss(b, {0.0, 1.0}), hinge, 1e-12);
}

TEST(GeminiLoss, RejectsBadInput) {
  const auto s = scalar_triplet(0, 3, 0, 1, 2);
  EXPECT_THROW(gemini_loss(one(s), {1.5, 1.0}), ConfigError);
  EXPECT_THROW(gemini_loss(one(s), {0.5, 0.0}), ConfigError);
  const GeminiSample<double> bad{{0, 1}, {0}, {0}, {1}, {2}};
  EXPECT_THROW(gemini_loss(one(bad), {0.5, 1.0}), ShapeError);
  const GeminiSample<double> bad_g{{0}, {1}, {0, 1}, {1}, {2}};
  EXPECT_THROW(gemini_loss(one(bad_g), {0.5, 1.0}), ShapeError);
  EXPECT_THROW(gemini_loss(std::span<const GeminiSample<double>>{}, {0.5, 1.0}), InvalidInputError);
}

TEST(HybridLoss, UniformLogitsExample) {
  const HybridSample<double> s{{1, 0}, {0, 0}, 2, std::vector<double>(6, 0.0)};
  EXPECT_NEAR(hybrid_loss(one(s), {0.5}), 0.5 + std::log(6.0), 1e-5);
  EXPECT_NEAR(hybrid_loss(one(s), {0.5}), 2.29176, 1e-5);
}

TEST(HybridLoss, VanishesInTheLimit) {
  const HybridSample<double> s{{0.3, -1}, {0.3, -1}, 0, {60.0, 0.0, 0.0}};
  EXPECT_LT(hybrid_loss(one(s), {0.5}), 1e-20);
}

TEST(HybridLoss, DuplicatingBatchDoublesLoss) {
  std::mt19937_64 rng(3);
  std::vector<HybridSample<double>> batch;
  for (int i = 0; i < 8; ++i) batch.push_back({random_vector(rng, 5), random_vector(rng, 5), i % 4, random_vector(rng, 4)});
  const double single = hybrid_loss(std::span<const HybridSample<double>>(batch), {0.4});
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  EXPECT_DOUBLE_EQ(hybrid_loss(std::span<const HybridSample<double>>(doubled), {0.4}), 2.0 * single);
}

TEST(HybridLoss, MonotoneInEmbeddingDistance) {
  const std::vector<double> logits{0.2, -0.4, 1.0};
  double prev = -1.0;
  for (double r = 0.0; r < 5.0; r += 0.25) {
    const HybridSample<double> s{{r, 0.0}, {0.0, 0.0}, 1, logits};
    const double l = hybrid_loss(one(s), {0.5});
    EXPECT_GE(l, prev);
    prev = l;
  }
}

TEST(HybridLoss, RejectsBadInput) {
  const HybridSample<double> s{{1, 0}, {0, 0}, 0, {0, 0}};
  EXPECT_THROW(hybrid_loss(one(s), {0.0}), ConfigError);
  EXPECT_THROW(hybrid_loss(one(s), {1.0}), ConfigError);
  const HybridSample<double> shape{{1, 0}, {0}, 0, {0, 0}};
  EXPECT_THROW(hybrid_loss(one(shape), {0.5}), ShapeError);
  const HybridSample<double> label{{1, 0}, {0, 0}, 2, {0, 0}};
  EXPECT_THROW(hybrid_loss(one(label), {0.5}), InvalidInputError);
}

TEST(ContrastiveLoss, HandExamples) {
  const PairSample<double> same{{1, 2}, {1, 2}, true};
  EXPECT_EQ(contrastive_loss(one(same), 1.0), 0.0);
  const PairSample<double> far{{0}, {2}, false};
  EXPECT_EQ(contrastive_loss(one(far), 1.0), 0.0);
  const PairSample<double> near{{0}, {0.5}, false};
  EXPECT_EQ(contrastive_loss(one(near), 1.0), 0.25);
  const PairSample<double> pos{{0, 0}, {3, 4}, true};
  EXPECT_EQ(contrastive_loss(one(pos), 1.0), 25.0);
  EXPECT_THROW(contrastive_loss(one(pos), 0.0), ConfigError);
  const PairSample<double> bad{{0, 0}, {3}, true};
  EXPECT_THROW(contrastive_loss(one(bad), 1.0), ShapeError);
}

TEST(TripletMarginLoss, HandExamples) {
  const TripletSample<double> ok{{0}, {1}, {3}};
  EXPECT_EQ(triplet_margin_loss(one(ok), 1.0), 0.0);
  const TripletSample<double> active{{0}, {1}, {1.5}};
  EXPECT_EQ(triplet_margin_loss(one(active), 1.0), 0.5);
  const TripletSample<double> collapsed{{2, 2}, {2, 2}, {2, 2}};
  EXPECT_EQ(triplet_margin_loss(one(collapsed), 0.7), 0.7);
  EXPECT_THROW(triplet_margin_loss(one(ok), -1.0), ConfigError);
  const TripletSample<double> bad{{0}, {1, 2}, {3}};
  EXPECT_THROW(triplet_margin_loss(one(bad), 1.0), ShapeError);
}

// ---------------------------------------------------------------------------
// Properties over random batches

TEST(LossProperties, NonNegativeAndTranslationInvariant) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto shift = random_vector(rng, 3, 5.0);
    auto add = [&](std::vector<double> v) {
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += shift[i];
      return v;
    };
    GeminiSample<double> g{random_vector(rng, 3), random_vector(rng, 3), random_vector(rng, 3), random_vector(rng, 3),
                           random_vector(rng, 3)};
    GeminiSample<double> gs{add(g.f_anchor), add(g.f_positive), add(g.g_anchor), add(g.g_positive), add(g.g_negative)};
    HybridSample<double> h{random_vector(rng, 3), random_vector(rng, 3), trial % 3, random_vector(rng, 3)};
    HybridSample<double> hs{add(h.z), add(h.z_hat), h.label, h.logits};
    PairSample<double> p{random_vector(rng, 3, 0.3), random_vector(rng, 3, 0.3), trial % 2 == 0};
    PairSample<double> ps{add(p.e1), add(p.e2), p.same};
    TripletSample<double> t{random_vector(rng, 3), random_vector(rng, 3), random_vector(rng, 3)};
    TripletSample<double> ts{add(t.anchor), add(t.positive), add(t.negative)};
    const double lg = gemini_loss(one(g), {0.5, 1.0});
    const double lh = hybrid_loss(one(h), {0.5});
    const double lp = contrastive_loss(one(p), 1.0);
    const double lt = triplet_margin_loss(one(t), 1.0);
    EXPECT_GE(lg, 0.0);
    EXPECT_GE(lh, 0.0);
    EXPECT_GE(lp, 0.0);
    EXPECT_GE(lt, 0.0);
    EXPECT_NEAR(gemini_loss(one(gs), {0.5, 1.0}), lg, 1e-9);
    EXPECT_NEAR(hybrid_loss(one(hs), {0.5}), lh, 1e-9);
    EXPECT_NEAR(contrastive_loss(one(ps), 1.0), lp, 1e-9);
    EXPECT_NEAR(triplet_margin_loss(one(ts), 1.0), lt, 1e-9);
  }
}

TEST(LossProperties, MeanReductionDividesByBatchSize) {
  std::mt19937_64 rng(5);
  std::vector<TripletSample<double>> batch;
  for (int i = 0; i < 6; ++i) batch.push_back({random_vector(rng, 2), random_vector(rng, 2), random_vector(rng, 2)});
  const std::span<const TripletSample<double>> b(batch);
  EXPECT_NEAR(triplet_margin_loss<double>(b, 1.0, nullptr, Reduction::Mean), triplet_margin_loss(b, 1.0) / 6.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Central finite differences, step 1e-5, in double. Inputs whose hinge
// argument or distances sit within 1e-3 of a kink are resampled.

namespace {

constexpr double kStep = 1e-5;
constexpr double kTol = 1e-4;
constexpr double kKink = 1e-3;

// Checks every coordinate of every vector in `fields` against `grads`.
void check_fields(const std::vector<std::vector<double>*>& fields, const std::vector<const std::vector<double>*>& grads,
                  const std::function<double()>& loss, double& worst) {
  for (std::size_t f = 0; f < fields.size(); ++f) {
    auto& v = *fields[f];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double x = v[i];
      v[i] = x + kStep;
      const double up = loss();
      v[i] = x - kStep;
      const double down = loss();
      v[i] = x;
      const double numeric = (up - down) / (2.0 * kStep);
      worst = std::max(worst, rel_error((*grads[f])[i], numeric));
    }
  }
}

using testing_support::norm2;

}  // namespace

TEST(GradientCheck, GeminiLoss) {
  std::mt19937_64 rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 50;) {
    GeminiSample<double> s{random_vector(rng, 4), random_vector(rng, 4), random_vector(rng, 3), random_vector(rng, 3),
                           random_vector(rng, 3)};
    const double hinge = norm2(s.g_anchor, s.g_positive) + 0.8 - norm2(s.g_anchor, s.g_negative);
    if (std::abs(hinge) < kKink || norm2(s.f_anchor, s.f_positive) < kKink || norm2(s.g_anchor, s.g_positive) < kKink ||
        norm2(s.g_anchor, s.g_negative) < kKink) {
      continue;
    }
    ++trial;
    const GeminiLossParams params{0.3, 0.8};
    std::vector<GeminiSample<double>> g;
    gemini_loss(one(s), params, &g);
    auto loss = [&] { return gemini_loss(one(s), params); };
    check_fields({&s.f_anchor, &s.f_positive, &s.g_anchor, &s.g_positive, &s.g_negative},
                 {&g[0].f_anchor, &g[0].f_positive, &g[0].g_anchor, &g[0].g_positive, &g[0].g_negative}, loss, worst);
  }
  EXPECT_LT(worst, kTol);
}

TEST(GradientCheck, HybridLoss) {
  std::mt19937_64 rng(102);
  double worst = 0.0;
  for (int trial = 0; trial < 50;) {
    HybridSample<double> s{random_vector(rng, 5), random_vector(rng, 5), static_cast<int>(rng() % 4),
                           random_vector(rng, 4, 2.0)};
    if (norm2(s.z, s.z_hat) < kKink) continue;
    ++trial;
    std::vector<HybridSample<double>> g;
    hybrid_loss(one(s), {0.6}, &g);
    auto loss = [&] { return hybrid_loss(one(s), {0.6}); };
    check_fields({&s.z, &s.z_hat, &s.logits}, {&g[0].z, &g[0].z_hat, &g[0].logits}, loss, worst);
  }
  EXPECT_LT(worst, kTol);
}

TEST(GradientCheck, ContrastiveLoss) {
  std::mt19937_64 rng(103);
  double worst = 0.0;
  for (int trial = 0; trial < 50;) {
    PairSample<double> s{random_vector(rng, 4, 0.4), random_vector(rng, 4, 0.4), trial % 2 == 0};
    const double d = norm2(s.e1, s.e2);
    if (d < kKink || std::abs(d - 1.2) < kKink) continue;
    if (!s.same && d > 1.2) continue;  // keep the different-class hinge active
    ++trial;
    std::vector<PairSample<double>> g;
    contrastive_loss(one(s), 1.2, &g);
    auto loss = [&] { return contrastive_loss(one(s), 1.2); };
    check_fields({&s.e1, &s.e2}, {&g[0].e1, &g[0].e2}, loss, worst);
  }
  EXPECT_LT(worst, kTol);
}

TEST(GradientCheck, TripletMarginLoss) {
  std::mt19937_64 rng(104);
  double worst = 0.0;
  for (int trial = 0; trial < 50;) {
    TripletSample<double> s{random_vector(rng, 4), random_vector(rng, 4), random_vector(rng, 4)};
    const double hinge = norm2(s.anchor, s.positive) - norm2(s.anchor, s.negative) + 1.0;
    if (std::abs(hinge) < kKink || norm2(s.anchor, s.positive) < kKink || norm2(s.anchor, s.negative) < kKink) continue;
    ++trial;
    std::vector<TripletSample<double>> g;
    triplet_margin_loss(one(s), 1.0, &g);
    auto loss = [&] { return triplet_margin_loss(one(s), 1.0); };
    check_fields({&s.anchor, &s.positive, &s.negative}, {&g[0].anchor, &g[0].positive, &g[0].negative}, loss, worst);
  }
  EXPECT_LT(worst, kTol);
}

TEST(GradientCheck, GradientFlowsThroughAdaptiveMargin) {
  // Active hinge: dL/dg_p must be non-zero (it enters through M).
  const auto s = scalar_triplet(0, 1, 0, 1, 1.5);
  std::vector<GeminiSample<double>> g;
  gemini_loss(one(s), {0.5, 1.0}, &g);
  EXPECT_NEAR(g[0].g_positive[0], 0.5, 1e-12);
  EXPECT_NEAR(g[0].g_negative[0], -0.5, 1e-12);
  EXPECT_NEAR(g[0].g_anchor[0], 0.0, 1e-12);
}
