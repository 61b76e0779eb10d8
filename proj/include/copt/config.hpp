#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "copt/copt_loss.hpp"
#include "copt/errors.hpp"
#include "copt/pixel_feat.hpp"
#include "copt/text_embed.hpp"

namespace copt {

enum class TrainingScheme { joint, finetune };

inline std::string_view to_string(TrainingScheme s) { return s == TrainingScheme::joint ? "joint" : "finetune"; }

inline TrainingScheme parse_scheme(std::string_view s) {
  if (s == "joint") return TrainingScheme::joint;
  if (s == "finetune") return TrainingScheme::finetune;
  throw ConfigError("unknown training scheme '" + std::string(s) + "' (expected joint|finetune)");
}

/// Every knob of a training run. Defaults are desk-scale; see README for the
/// full-scale values.
struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t iterations = 2000;
  std::size_t batch_size = 4;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;

  // model
  std::size_t feature_dim = 32;
  std::size_t downsample = 4;
  std::string channels = "16,32";

  // CoPT
  bool copt_enabled = true;
  CoptMetric copt_metric = CoptMetric::cosine;
  double copt_weight = 1.0;
  FeatureSource copt_features_from = FeatureSource::source;
  std::size_t copt_min_pixels = 1;
  double membank_decay = 0.5;
  bool membank_blend_first_zeros = false;
  DownsamplePolicy downsample_policy = DownsamplePolicy::nearest;
  FeatureNormalization normalization = FeatureNormalization::total;

  // text embeddings
  TemplateMode template_mode = TemplateMode::llm;
  std::string source_templates = "builtin:synthetic";
  std::string target_templates = "builtin:real";
  std::string handcrafted_source = "synthetic image";
  std::string handcrafted_target = "real image";
  std::string embedding = "hash";  // "hash" or a CTEF file path
  std::size_t embedding_dim = 512;

  // self-training
  bool selftrain_masked = true;
  bool selftrain_strongaug = true;
  double pl_threshold = 0.968;
  std::size_t mask_block = 32;
  double mask_ratio = 0.7;
  double ema_alpha = 0.999;
  bool st_quality_weight = true;

  // run control
  std::size_t eval_every = 100;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::string data_dir = "data";
  std::string out_dir = "runs/default";
  TrainingScheme scheme = TrainingScheme::joint;
  std::string init_checkpoint;

  CoptConfig copt_config() const {
    CoptConfig c;
    c.enabled = copt_enabled;
    c.metric = copt_metric;
    c.weight = static_cast<float>(copt_weight);
    c.features_from = copt_features_from;
    c.min_pixels = copt_min_pixels;
    c.normalization = normalization;
    return c;
  }

  std::vector<std::size_t> channel_list() const {
    std::vector<std::size_t> out;
    std::stringstream ss(channels);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      std::size_t v = 0;
      const auto t = detail::trim(tok);
      auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
      if (ec != std::errc() || p != t.data() + t.size() || v == 0)
        throw ConfigError("channels: expected comma-separated positive integers, got '" + channels + "'");
      out.push_back(v);
    }
    return out;
  }

  void validate() const {
    if (iterations < 1) throw ConfigError("iterations must be >= 1");
    if (!(lr > 0)) throw ConfigError("lr must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (!(membank_decay >= 0 && membank_decay <= 1)) throw ConfigError("membank_decay must be in [0,1]");
    if (!(mask_ratio >= 0 && mask_ratio <= 1)) throw ConfigError("mask_ratio must be in [0,1]");
    if (!(ema_alpha >= 0 && ema_alpha <= 1)) throw ConfigError("ema_alpha must be in [0,1]");
    if (!(copt_weight >= 0)) throw ConfigError("copt_weight must be >= 0");
    if (scheme == TrainingScheme::finetune && init_checkpoint.empty())
      throw ConfigError("scheme = finetune needs init_checkpoint");
    (void)channel_list();
  }
};

namespace detail {

inline std::string field_to_string(const std::string& v) { return v; }
inline std::string field_to_string(bool v) { return v ? "true" : "false"; }
template <typename U>
  requires(std::is_unsigned_v<U> && !std::is_same_v<U, bool>)
std::string field_to_string(U v) {
  return std::to_string(v);
}
inline std::string field_to_string(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}
template <typename E>
  requires std::is_enum_v<E>
std::string field_to_string(E v) {
  return std::string(to_string(v));
}

inline void field_from_string(std::string& out, std::string_view s) { out = std::string(s); }
inline void field_from_string(bool& out, std::string_view s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on")
    out = true;
  else if (s == "false" || s == "0" || s == "no" || s == "off")
    out = false;
  else
    throw ConfigError("expected a boolean, got '" + std::string(s) + "'");
}
template <typename U>
  requires std::is_unsigned_v<U>
void field_from_string(U& out, std::string_view s) {
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("expected an unsigned integer, got '" + std::string(s) + "'");
}
inline void field_from_string(double& out, std::string_view s) {
  std::string str(s);
  std::size_t used = 0;
  try {
    out = std::stod(str, &used);
  } catch (const std::exception&) {
    throw ConfigError("expected a number, got '" + str + "'");
  }
  if (used != str.size()) throw ConfigError("expected a number, got '" + str + "'");
}
inline void field_from_string(CoptMetric& out, std::string_view s) { out = parse_metric(s); }
inline void field_from_string(FeatureSource& out, std::string_view s) { out = parse_feature_source(s); }
inline void field_from_string(DownsamplePolicy& out, std::string_view s) { out = parse_downsample_policy(s); }
inline void field_from_string(FeatureNormalization& out, std::string_view s) { out = parse_normalization(s); }
inline void field_from_string(TemplateMode& out, std::string_view s) { out = parse_template_mode(s); }
inline void field_from_string(TrainingScheme& out, std::string_view s) { out = parse_scheme(s); }

}  // namespace detail

/// Calls `v(key, field)` for every config field, in file order.
template <typename Cfg, typename V>
void visit_fields(Cfg& c, V&& v) {
  v("seed", c.seed);
  v("iterations", c.iterations);
  v("batch_size", c.batch_size);
  v("lr", c.lr);
  v("beta1", c.beta1);
  v("beta2", c.beta2);
  v("adam_eps", c.adam_eps);
  v("weight_decay", c.weight_decay);
  v("feature_dim", c.feature_dim);
  v("downsample", c.downsample);
  v("channels", c.channels);
  v("copt_enabled", c.copt_enabled);
  v("copt_metric", c.copt_metric);
  v("copt_weight", c.copt_weight);
  v("copt_features_from", c.copt_features_from);
  v("copt_min_pixels", c.copt_min_pixels);
  v("membank_decay", c.membank_decay);
  v("membank_blend_first_zeros", c.membank_blend_first_zeros);
  v("downsample_policy", c.downsample_policy);
  v("normalization", c.normalization);
  v("template_mode", c.template_mode);
  v("source_templates", c.source_templates);
  v("target_templates", c.target_templates);
  v("handcrafted_source", c.handcrafted_source);
  v("handcrafted_target", c.handcrafted_target);
  v("embedding", c.embedding);
  v("embedding_dim", c.embedding_dim);
  v("selftrain_masked", c.selftrain_masked);
  v("selftrain_strongaug", c.selftrain_strongaug);
  v("pl_threshold", c.pl_threshold);
  v("mask_block", c.mask_block);
  v("mask_ratio", c.mask_ratio);
  v("ema_alpha", c.ema_alpha);
  v("st_quality_weight", c.st_quality_weight);
  v("eval_every", c.eval_every);
  v("checkpoint_every", c.checkpoint_every);
  v("data_dir", c.data_dir);
  v("out_dir", c.out_dir);
  v("scheme", c.scheme);
  v("init_checkpoint", c.init_checkpoint);
}

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  TrainConfig c;
  visit_fields(c, [&](std::string_view k, auto&) { keys.emplace_back(k); });
  return keys;
}

/// Sets one key; unknown keys are a config error.
inline void set_config_value(TrainConfig& cfg, std::string_view key, std::string_view value) {
  bool found = false;
  visit_fields(cfg, [&](std::string_view k, auto& field) {
    if (k != key) return;
    found = true;
    try {
      detail::field_from_string(field, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + std::string(key) + "': " + e.what());
    }
  });
  if (!found) throw ConfigError("unknown config key '" + std::string(key) + "'");
}

/// Applies flat `key = value` lines. '#' starts a comment line.
inline void apply_config_text(TrainConfig& cfg, std::string_view text, std::string_view origin = "<config>") {
  std::size_t pos = 0, line_no = 0;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const std::string line = detail::trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected 'key = value'");
    set_config_value(cfg, detail::trim(std::string_view(line).substr(0, eq)),
                     detail::trim(std::string_view(line).substr(eq + 1)));
  }
}

inline TrainConfig load_config_file(const std::filesystem::path& path, TrainConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  apply_config_text(base, text, path.string());
  return base;
}

inline std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  TrainConfig copy = cfg;
  visit_fields(copy, [&](std::string_view k, auto& field) {
    out.append(k).append(" = ").append(detail::field_to_string(field)).append("\n");
  });
  return out;
}

}  // namespace copt
