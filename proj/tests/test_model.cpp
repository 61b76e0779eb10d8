#include <gtest/gtest.h>

#include "copt/model.hpp"
#include "test_util.hpp"

using namespace copt;
using copt::testing::random_tensor;

TEST(Model, ShapesForEveryDownsampleFactor) {
  for (std::size_t r : {2u, 4u, 8u}) {
    ModelConfig cfg;
    cfg.downsample = r;
    auto m = init_model(1, cfg);
    auto out = forward(m, random_tensor<float>(Shape{3, 64, 64}, 2, 0, 1));
    EXPECT_EQ(out.features.shape(), (Shape{cfg.feature_dim, 64 / r, 64 / r}));
    EXPECT_EQ(out.logits.shape(), (Shape{cfg.classes, 64, 64}));
  }
}

TEST(Model, IndivisibleInputIsDimensionError) {
  auto m = init_model(1, ModelConfig{});
  EXPECT_THROW(forward(m, Tensor(Shape{3, 30, 30})), DimensionError);
}

TEST(Model, ParameterCountMatchesClosedForm) {
  ModelConfig cfg;
  // 3->16, 16->32, 32->32 with 3x3 kernels, then a 32->5 1x1 decoder
  const std::size_t oracle = (16 * 3 * 9 + 16) + (32 * 16 * 9 + 32) + (32 * 32 * 9 + 32) + (5 * 32 + 5);
  EXPECT_EQ(oracle, 14501u);
  EXPECT_EQ(parameter_count(cfg), oracle);
  EXPECT_EQ(init_model(0, cfg).parameter_count(), oracle);
  cfg.channels = {8, 12};
  cfg.feature_dim = 6;
  cfg.classes = 3;
  EXPECT_EQ(init_model(0, cfg).parameter_count(), parameter_count(cfg));
}

TEST(Model, InitIsDeterministicAndSeedDependent) {
  auto a = init_model(5, ModelConfig{}), b = init_model(5, ModelConfig{}), c = init_model(6, ModelConfig{});
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i].values(), pb[i].values());
  EXPECT_NE(pa[0].values(), pc[0].values());
  const auto x = random_tensor<float>(Shape{3, 32, 32}, 3, 0, 1);
  EXPECT_EQ(forward(a, x).logits.values(), forward(b, x).logits.values());
}

TEST(Model, KaimingBoundRespected) {
  auto m = init_model(9, ModelConfig{});
  const double bound = std::sqrt(6.0 / (3 * 9));
  for (float w : m.encoder[0].weight.values()) EXPECT_LE(std::abs(w), bound);
  for (float b : m.encoder[0].bias.values()) EXPECT_EQ(b, 0.0f);
}

TEST(Model, ZeroInputWithZeroBiasGivesZeroFeatures) {
  auto m = init_model(1, ModelConfig{});
  auto out = forward(m, Tensor(Shape{3, 16, 16}, 0.0f));
  for (float v : out.features.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Model, InvalidConfig) {
  ModelConfig cfg;
  cfg.downsample = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.downsample = 4;
  cfg.kernel = 2;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Ema, Examples) {
  ModelConfig cfg;
  cfg.channels = {4, 4};
  cfg.feature_dim = 4;
  auto teacher = init_model(1, cfg), student = init_model(2, cfg);
  for (auto p : teacher.parameters())
    for (auto& v : p.data()) v = 1.0f;
  for (auto p : student.parameters())
    for (auto& v : p.data()) v = 0.0f;
  ema_update(teacher, student, 0.999f);
  for (auto p : teacher.parameters())
    for (float v : p.values()) EXPECT_FLOAT_EQ(v, 0.999f);

  auto t2 = init_model(3, cfg);
  ema_update(t2, student, 0.0f);
  for (auto p : t2.parameters())
    for (float v : p.values()) EXPECT_EQ(v, 0.0f);

  auto t3 = init_model(3, cfg);
  auto before = clone_params(t3);
  ema_update(t3, student, 1.0f);
  for (std::size_t i = 0; i < before.parameters().size(); ++i)
    EXPECT_EQ(t3.parameters()[i].values(), before.parameters()[i].values());
}

TEST(Ema, ArchitectureMismatchIsContractError) {
  ModelConfig a, b;
  b.feature_dim = 8;
  auto ta = init_model(1, a);
  EXPECT_THROW(ema_update(ta, init_model(1, b), 0.5f), ContractError);
}

TEST(Model, CloneIsDeep) {
  auto m = init_model(1, ModelConfig{});
  auto c = clone_params(m);
  c.decoder.bias[0] = 42.0f;
  EXPECT_EQ(m.decoder.bias[0], 0.0f);
}
