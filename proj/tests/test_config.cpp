#include <gtest/gtest.h>

#include <fstream>

#include "copt/config.hpp"
#include "test_util.hpp"

using namespace copt;
using copt::testing::TempDir;

TEST(Config, DefaultsAreDeskScale) {
  TrainConfig c;
  EXPECT_EQ(c.iterations, 2000u);
  EXPECT_EQ(c.batch_size, 4u);
  EXPECT_DOUBLE_EQ(c.lr, 3e-4);
  EXPECT_DOUBLE_EQ(c.weight_decay, 0.01);
  EXPECT_DOUBLE_EQ(c.copt_weight, 1.0);
  EXPECT_DOUBLE_EQ(c.pl_threshold, 0.968);
  EXPECT_EQ(c.mask_block, 32u);
  EXPECT_DOUBLE_EQ(c.mask_ratio, 0.7);
  EXPECT_DOUBLE_EQ(c.ema_alpha, 0.999);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, SerializeParseRoundTripIsExact) {
  TrainConfig c;
  c.seed = 77;
  c.lr = 6e-5;
  c.copt_metric = CoptMetric::l2;
  c.copt_features_from = FeatureSource::both_sequential;
  c.template_mode = TemplateMode::handcrafted;
  c.membank_decay = 0.1;
  c.selftrain_masked = false;
  c.scheme = TrainingScheme::finetune;
  c.init_checkpoint = "runs/base/final.ckpt";
  c.channels = "8,12";
  const auto text = serialize_config(c);
  TrainConfig back;
  apply_config_text(back, text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.channel_list(), (std::vector<std::size_t>{8, 12}));
}

TEST(Config, EveryKeyIsSerialized) {
  const auto text = serialize_config(TrainConfig{});
  for (const auto& k : config_keys()) EXPECT_NE(text.find(k + " = "), std::string::npos) << k;
}

TEST(Config, FileWithCommentsAndBlankLines) {
  TempDir dir("cfg");
  std::ofstream(dir / "run.cfg") << "# comment\n\n iterations = 12 \nmembank_decay=0.25\ncopt_metric = l1\n";
  auto c = load_config_file(dir / "run.cfg");
  EXPECT_EQ(c.iterations, 12u);
  EXPECT_EQ(c.membank_decay, 0.25);
  EXPECT_EQ(c.copt_metric, CoptMetric::l1);
}

TEST(Config, Errors) {
  TrainConfig c;
  EXPECT_THROW(set_config_value(c, "no_such_key", "1"), ConfigError);
  EXPECT_THROW(set_config_value(c, "iterations", "-3"), ConfigError);
  EXPECT_THROW(set_config_value(c, "iterations", "12x"), ConfigError);
  EXPECT_THROW(set_config_value(c, "lr", "fast"), ConfigError);
  EXPECT_THROW(set_config_value(c, "copt_enabled", "maybe"), ConfigError);
  EXPECT_THROW(set_config_value(c, "copt_metric", "kl"), ConfigError);
  EXPECT_THROW(apply_config_text(c, "iterations 3\n"), ConfigError);
  EXPECT_THROW(load_config_file("/nonexistent/run.cfg"), ConfigError);

  TrainConfig bad;
  bad.iterations = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.lr = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.scheme = TrainingScheme::finetune;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = TrainConfig{};
  bad.channels = "8,,4";
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Config, CoptConfigProjection) {
  TrainConfig c;
  c.copt_enabled = false;
  c.copt_metric = CoptMetric::l1;
  c.copt_weight = 0.5;
  const auto cc = c.copt_config();
  EXPECT_FALSE(cc.enabled);
  EXPECT_EQ(cc.metric, CoptMetric::l1);
  EXPECT_EQ(cc.weight, 0.5f);
}
