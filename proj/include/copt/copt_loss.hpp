#pragma once

#include <cmath>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "copt/covariance.hpp"
#include "copt/ops.hpp"
#include "copt/pixel_feat.hpp"
#include "copt/text_embed.hpp"

namespace copt {

enum class CoptMetric { cosine, l1, l2 };
enum class FeatureSource { source, target, both_sequential };

inline std::string_view to_string(CoptMetric m) {
  switch (m) {
    case CoptMetric::cosine: return "cosine";
    case CoptMetric::l1: return "l1";
    case CoptMetric::l2: return "l2";
  }
  return "?";
}

inline std::string_view to_string(FeatureSource s) {
  switch (s) {
    case FeatureSource::source: return "source";
    case FeatureSource::target: return "target";
    case FeatureSource::both_sequential: return "both_sequential";
  }
  return "?";
}

inline CoptMetric parse_metric(std::string_view s) {
  if (s == "cosine") return CoptMetric::cosine;
  if (s == "l1") return CoptMetric::l1;
  if (s == "l2") return CoptMetric::l2;
  throw ConfigError("unknown CoPT metric '" + std::string(s) + "' (expected cosine|l1|l2)");
}

inline FeatureSource parse_feature_source(std::string_view s) {
  if (s == "source") return FeatureSource::source;
  if (s == "target") return FeatureSource::target;
  if (s == "both_sequential") return FeatureSource::both_sequential;
  throw ConfigError("unknown feature source '" + std::string(s) + "' (expected source|target|both_sequential)");
}

struct CoptConfig {
  CoptMetric metric = CoptMetric::cosine;
  float weight = 1.0f;
  FeatureSource features_from = FeatureSource::source;
  bool enabled = true;
  std::size_t min_pixels = 1;
  FeatureNormalization normalization = FeatureNormalization::total;

  void validate() const {
    if (!(weight >= 0.0f) || !std::isfinite(weight)) throw ConfigError("copt weight must be a finite value >= 0");
  }
};

/// Pairwise cosine similarities of the class features, differentiable in
/// every feature.
template <typename T>
CovarianceMatrix<T> pixel_covariance(const std::vector<std::pair<int, BasicTensor<T>>>& features) {
  const std::size_t m = features.size();
  if (m < 2) throw DegenerateBatchError("pixel_covariance: need at least 2 classes, got " + std::to_string(m));
  std::set<int> ids;
  std::vector<int> order;
  for (const auto& [id, f] : features) {
    if (!ids.insert(id).second) throw ContractError("pixel_covariance: duplicate class id " + std::to_string(id));
    order.push_back(id);
  }
  std::vector<BasicTensor<T>> entries;
  entries.reserve(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) entries.push_back(cosine_similarity(features[i].second, features[j].second));
  return {std::move(order), reshape(concat(entries), Shape{m, m})};
}

/// Distance between a pixel covariance and a (constant) text covariance.
template <typename T>
BasicTensor<T> copt(const CovarianceMatrix<T>& pixel, const CovarianceMatrix<T>& text,
                    CoptMetric metric = CoptMetric::cosine) {
  if (pixel.class_ids != text.class_ids) throw ContractError("copt: class id lists differ between matrices");
  const BasicTensor<T> target = detach(text.values);
  switch (metric) {
    case CoptMetric::cosine:
      return sub(BasicTensor<T>::scalar(T(1)), cosine_similarity(pixel.values, target));
    case CoptMetric::l1:
      return mean(abs(sub(pixel.values, target)));
    case CoptMetric::l2: {
      auto diff = sub(pixel.values, target);
      return mean(mul(diff, diff));
    }
  }
  throw ContractError("copt: unknown metric");
}

/// Full CoPT term for one sample: pool present classes, blend through the
/// memory bank, compare covariances. Returns nothing when fewer than two
/// classes are present (the caller counts a skip).
template <typename T>
std::optional<BasicTensor<T>> copt_step(const BasicTensor<T>& f_map, const IntMask& y_small, FeatureMemoryBank<T>& bank,
                                        const TextBank& text_bank, const CoptConfig& cfg) {
  if (!cfg.enabled) return std::nullopt;
  auto present = extract_present_features(f_map, y_small, bank, cfg.min_pixels, cfg.normalization);
  if (present.size() < 2) return std::nullopt;
  std::vector<std::pair<int, BasicTensor<T>>> feats;
  std::vector<int> ids;
  for (auto& p : present) {
    feats.emplace_back(p.class_id, p.feature);
    ids.push_back(p.class_id);
  }
  return copt(pixel_covariance(feats), text_covariance<T>(text_bank, ids), cfg.metric);
}

}  // namespace copt
