#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <string>
#include <vector>

#include "copt/errors.hpp"
#include "copt/tensor.hpp"

namespace copt {

/// Dataset-level confusion counts; row = ground truth, column = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const noexcept { return classes_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_.at(gt * classes_ + pred); }
  std::uint64_t& at(std::size_t gt, std::size_t pred) { return counts_.at(gt * classes_ + pred); }
  const std::vector<std::uint64_t>& counts() const noexcept { return counts_; }

  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto c : counts_) n += c;
    return n;
  }

  ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
    if (other.classes_ != classes_) throw DimensionError("confusion matrix class counts differ");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
    return *this;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

inline void accumulate(ConfusionMatrix& cm, const IntMask& pred, const IntMask& gt, std::int32_t ignore_index) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw DimensionError("accumulate: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                         " vs ground truth " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
  const auto c = static_cast<std::int32_t>(cm.classes());
  for (std::size_t p = 0; p < gt.size(); ++p) {
    const auto g = gt.labels[p];
    if (g == ignore_index) continue;
    const auto q = pred.labels[p];
    if (g < 0 || g >= c || q < 0 || q >= c)
      throw LabelError("accumulate: label pair (" + std::to_string(g) + "," + std::to_string(q) + ") outside [0," +
                       std::to_string(c) + ")");
    ++cm.at(static_cast<std::size_t>(g), static_cast<std::size_t>(q));
  }
}

struct IouReport {
  std::vector<float> per_class;  // NaN for absent classes
  std::vector<bool> present;     // false when TP + FP + FN == 0
  float miou = std::numeric_limits<float>::quiet_NaN();
  bool miou_defined = false;
};

/// IoU_c = TP / (TP + FP + FN). Classes with an empty denominator are absent
/// and excluded from the mean; with no present class the mean is NaN and
/// `miou_defined` is false.
inline IouReport iou(const ConfusionMatrix& cm) {
  const std::size_t c = cm.classes();
  IouReport r;
  r.per_class.assign(c, std::numeric_limits<float>::quiet_NaN());
  r.present.assign(c, false);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::uint64_t tp = cm.at(k, k);
    const std::uint64_t denom = row + col - tp;
    if (denom == 0) continue;
    const double v = static_cast<double>(tp) / static_cast<double>(denom);
    r.per_class[k] = static_cast<float>(v);
    r.present[k] = true;
    sum += v;
    ++n;
  }
  if (n > 0) {
    r.miou = static_cast<float>(sum / static_cast<double>(n));
    r.miou_defined = true;
  }
  return r;
}

/// f32 with 6 significant digits, the CSV number format.
inline std::string format_g6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", static_cast<double>(static_cast<float>(v)));
  return buf;
}

struct MetricsRow {
  std::size_t iter = 0;
  std::string split;
  IouReport iou;
  double loss_ce = 0, loss_copt = 0, loss_m = 0, loss_st = 0;
  std::uint64_t copt_skipped = 0;
};

inline std::string metrics_csv_header(const std::vector<std::string>& class_names) {
  std::string s = "iter,split,miou";
  for (const auto& n : class_names) s += ",iou_" + n;
  s += ",loss_ce,loss_copt,loss_m,loss_st,copt_skipped";
  return s;
}

inline std::string metrics_csv_row(const MetricsRow& row) {
  std::string s = std::to_string(row.iter) + "," + row.split + "," + format_g6(row.iou.miou);
  for (float v : row.iou.per_class) s += "," + format_g6(v);
  s += "," + format_g6(row.loss_ce) + "," + format_g6(row.loss_copt) + "," + format_g6(row.loss_m) + "," +
       format_g6(row.loss_st) + "," + std::to_string(row.copt_skipped);
  return s;
}

}  // namespace copt
