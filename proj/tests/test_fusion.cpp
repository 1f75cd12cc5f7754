#include <gtest/gtest.h>

#include <sstream>

#include "gemini/fusion.hpp"
#include "test_support.hpp"

using namespace gemini;
using namespace gemini::fusion;
using testing_support::tiny_split;
using testing_support::tiny_student;

namespace {

Tensor<float> map3x2x2(std::vector<float> v) { return Tensor<float>(Shape3{3, 2, 2}, std::move(v)); }

}  // namespace

TEST(StackMaxPool, HandExample) {
  // Channel-major (C=3, H=2, W=2) maps.
  const auto sur = map3x2x2({1, 5, -2, 0,  //
                             3, 1, 4, -1,  //
                             0, 2, 2, 7});
  const auto sec = map3x2x2({2, 0, 0, 0,  //
                             -1, 6, 1, 2,  //
                             0, 0, 3, 1});
  // View max per location and channel, then channel max:
  // (0,0): max(2,3,0)=3  (0,1): max(5,6,2)=6  (1,0): max(0,4,3)=4  (1,1): max(0,2,7)=7
  EXPECT_EQ(fuse_stack_maxpool(sur, sec), (std::vector<float>{3, 6, 4, 7}));
  EXPECT_EQ(fuse_stack_maxpool(sec, sur), fuse_stack_maxpool(sur, sec));
}

TEST(StackMaxPool, ChannelPermutationInvariant) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  Tensor<float> a(4, 3, 5), b(4, 3, 5);
  for (auto& v : a.values()) v = g(rng);
  for (auto& v : b.values()) v = g(rng);
  Tensor<float> pa(4, 3, 5), pb(4, 3, 5);
  const int perm[] = {2, 0, 3, 1};
  for (int c = 0; c < 4; ++c) {
    for (int y = 0; y < 3; ++y) {
      for (int x = 0; x < 5; ++x) {
        pa(perm[c], y, x) = a(c, y, x);
        pb(perm[c], y, x) = b(c, y, x);
      }
    }
  }
  EXPECT_EQ(fuse_stack_maxpool(a, b), fuse_stack_maxpool(pa, pb));
  EXPECT_EQ(fuse_stack_maxpool(a, b).size(), 15u);
  EXPECT_THROW(fuse_stack_maxpool(a, Tensor<float>(4, 3, 4)), ShapeError);
}

TEST(Concat, OrderAndSize) {
  const std::vector<float> a{1, 2}, b{3, 4, 5};
  EXPECT_EQ(fuse_concat<float>(a, b), (std::vector<float>{1, 2, 3, 4, 5}));
  EXPECT_EQ(fuse_concat<float>(std::vector<float>(128), std::vector<float>(16)).size(), 144u);
}

TEST(Strategy, ParseAndUnknown) {
  EXPECT_EQ(parse_strategy("concat"), Strategy::Concat);
  EXPECT_EQ(parse_strategy("stack_maxpool"), Strategy::StackMaxPool);
  try {
    parse_strategy("average");
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("average"), std::string::npos);
    EXPECT_NE(msg.find("concat"), std::string::npos);
    EXPECT_NE(msg.find("stack_maxpool"), std::string::npos);
  }
}

TEST(PairedSamples, SameClassAndDeterministic) {
  const auto sur = tiny_split(3, 4, 1, 4, 1);
  const auto sec = tiny_split(3, 2, 1, 4, 2);
  const auto a = make_paired_samples(sur.train, sec.train, 5, 0);
  ASSERT_EQ(a.size(), sur.train.size());
  for (const auto& p : a) {
    EXPECT_EQ(sur.train[p.surface].label.index, p.label);
    EXPECT_EQ(sec.train[p.section].label.index, p.label);
  }
  const auto b = make_paired_samples(sur.train, sec.train, 5, 0);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].section, b[i].section);
  std::vector<data::PatchRecord> missing(sec.train.begin(), sec.train.begin() + 2);  // class 0 only
  EXPECT_THROW(make_paired_samples(sur.train, missing, 5, 0), SamplingError);
}

TEST(TrainFusion, ConcatDimAndFrozenExtractors) {
  const auto sur = tiny_split(3, 6, 2, 16, 1);
  const auto sec = tiny_split(3, 6, 2, 16, 2);
  const models::StudentModel<float> ms(tiny_student(3, 16, 128), 1);
  const models::StudentModel<float> mc(tiny_student(3, 16, 16), 2);
  const auto before_s = ms.to_state().parameters;
  const auto before_c = mc.to_state().parameters;
  FusionConfig cfg;
  cfg.epochs = 2;
  const auto r = train_fusion({&ms, sur.train, sur.test}, {&mc, sec.train, sec.test}, cfg);
  EXPECT_EQ(r.fused_dim, 144);
  EXPECT_EQ(std::get<models::FusionHeadConfig>(r.head.config).input_dim, 144);
  EXPECT_EQ(r.epochs_run, 2);
  EXPECT_EQ(r.loss_curve.size(), 2u);
  EXPECT_EQ(ms.to_state().parameters, before_s);
  EXPECT_EQ(mc.to_state().parameters, before_c);

  const auto again = train_fusion({&ms, sur.train, sur.test}, {&mc, sec.train, sec.test}, cfg);
  EXPECT_EQ(again.head.parameters, r.head.parameters);
}

TEST(TrainFusion, StackMaxPoolDimAndLearns) {
  const auto sur = tiny_split(3, 8, 3, 16, 3);
  const auto sec = tiny_split(3, 8, 3, 16, 4);
  const models::StudentModel<float> ms(tiny_student(3, 16), 1);
  const models::StudentModel<float> mc(tiny_student(3, 16), 2);
  FusionConfig cfg;
  cfg.strategy = Strategy::StackMaxPool;
  cfg.epochs = 3;
  const auto r = train_fusion({&ms, sur.train, sur.test}, {&mc, sec.train, sec.test}, cfg);
  EXPECT_EQ(r.fused_dim, 16 * 16);
  EXPECT_LT(r.loss_curve.back().total, r.loss_curve.front().total);
}

TEST(TrainFusion, DefaultsAndValidation) {
  const FusionConfig d;
  EXPECT_EQ(d.epochs, 10);
  EXPECT_EQ(d.strategy, Strategy::Concat);
  FusionConfig bad;
  bad.epochs = 61;
  EXPECT_THROW(bad.validate(), ConfigError);
  const auto split = tiny_split(3, 2, 1, 16, 1);
  const models::StudentModel<float> m(tiny_student(3, 16), 1);
  const models::StudentModel<float> four(tiny_student(4, 16), 1);
  EXPECT_THROW(train_fusion({nullptr, split.train, split.test}, {&m, split.train, split.test}, {}), ConfigError);
  EXPECT_THROW(train_fusion({&m, split.train, split.test}, {&four, split.train, split.test}, {}), ConfigError);
}

TEST(FusionCsv, Schema) {
  std::ostringstream os;
  write_fusion_csv(os, "fused", {0.5, 0.25, 0.5, 0.3}, Strategy::Concat);
  write_fusion_csv(os, "SUR_knn", {1, 1, 1, 1}, Strategy::Concat, false);
  EXPECT_EQ(os.str(),
            "method,accuracy,precision,recall,f1,strategy\n"
            "fused,0.500000,0.250000,0.500000,0.300000,concat\n"
            "SUR_knn,1.000000,1.000000,1.000000,1.000000,concat\n");
}
