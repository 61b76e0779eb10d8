#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "copt/config.hpp"
#include "copt/metrics.hpp"
#include "copt/train.hpp"

namespace copt {

struct AblationPoint {
  std::string axis;
  std::string value;
  TrainConfig config;
};

inline std::vector<std::string> ablation_axes() { return {"metric", "membank", "features_from", "template"}; }

/// Expands one axis (or "all") into concrete configs derived from `base`.
inline std::vector<AblationPoint> ablation_grid(const TrainConfig& base, const std::string& axis) {
  std::vector<AblationPoint> out;
  auto add = [&](const std::string& ax, const std::string& key, const std::string& value) {
    AblationPoint p{ax, value, base};
    p.config.copt_enabled = true;
    set_config_value(p.config, key, value);
    p.config.out_dir = (std::filesystem::path(base.out_dir) / (ax + "_" + value)).string();
    out.push_back(std::move(p));
  };
  const bool all = axis == "all";
  bool known = all;
  if (all || axis == "metric") {
    known = true;
    for (const char* m : {"cosine", "l1", "l2"}) add("metric", "copt_metric", m);
  }
  if (all || axis == "membank") {
    known = true;
    for (const char* l : {"0.01", "0.1", "0.5"}) add("membank", "membank_decay", l);
  }
  if (all || axis == "features_from") {
    known = true;
    for (const char* f : {"source", "target", "both_sequential"}) add("features_from", "copt_features_from", f);
  }
  if (all || axis == "template") {
    known = true;
    for (const char* t : {"handcrafted", "llm"}) add("template", "template_mode", t);
  }
  if (!known) throw ConfigError("unknown ablation axis '" + axis + "' (expected metric|membank|features_from|template|all)");
  return out;
}

inline std::string ablation_csv_header() { return "axis,value,seed,iterations,final_miou,best_miou,copt_skipped"; }

/// Runs every grid point, writing one comparison CSV; returns its rows.
inline std::vector<std::string> run_ablation(const TrainConfig& base, const std::string& axis,
                                             const std::filesystem::path& csv_path) {
  std::vector<std::string> rows{ablation_csv_header()};
  for (auto& p : ablation_grid(base, axis)) {
    Trainer trainer(p.config);
    trainer.run();
    double final_miou = std::nan(""), best = std::nan("");
    const auto& log = trainer.log_lines();
    for (std::size_t i = 1; i < log.size(); ++i) {
      std::istringstream ls(log[i]);
      std::string iter, split, miou;
      std::getline(ls, iter, ',');
      std::getline(ls, split, ',');
      std::getline(ls, miou, ',');
      const double v = std::stod(miou);
      final_miou = v;
      if (!std::isnan(v) && (std::isnan(best) || v > best)) best = v;
    }
    rows.push_back(p.axis + "," + p.value + "," + std::to_string(p.config.seed) + "," +
                   std::to_string(p.config.iterations) + "," + format_g6(final_miou) + "," + format_g6(best) + "," +
                   std::to_string(trainer.copt_skipped()));
  }
  if (csv_path.has_parent_path()) std::filesystem::create_directories(csv_path.parent_path());
  std::ofstream out(csv_path, std::ios::trunc | std::ios::binary);
  for (const auto& r : rows) out << r << "\n";
  return rows;
}

}  // namespace copt
