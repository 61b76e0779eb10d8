#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "copt/errors.hpp"
#include "copt/ntf.hpp"
#include "copt/pixel_feat.hpp"
#include "copt/rng.hpp"

namespace copt {

enum class Domain { source, target };

inline std::string_view to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

inline Domain parse_domain(std::string_view s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ValidationError("unknown domain '" + std::string(s) + "'");
}

using Rgb = std::array<double, 3>;

/// Procedural scene parameters. Both domains share geometry statistics; the
/// target differs in appearance only (hue rotation, brightness, noise, weaker
/// texture).
struct SceneConfig {
  std::size_t classes = 5;  // background, disk, square, triangle, bar
  std::size_t height = 64;
  std::size_t width = 64;
  std::uint64_t seed = 0;
  bool paired = false;  // same geometry for matched (source, target) indices

  std::vector<Rgb> palette{{0.45, 0.45, 0.45}, {0.85, 0.25, 0.20}, {0.20, 0.70, 0.30},
                           {0.25, 0.35, 0.85}, {0.85, 0.75, 0.20}};
  double color_jitter = 0.08;     // per-instance palette perturbation, both domains
  double texture_amplitude = 0.15;  // per-class stripe pattern, source domain
  double target_texture = 0.5;      // target texture amplitude relative to source
  std::size_t texture_period = 4;

  double hue_degrees = 30.0;   // target hue rotation
  double noise_sigma = 0.08;   // target additive Gaussian noise
  double brightness = -0.10;   // target brightness offset

  static std::vector<std::string> default_class_names() { return {"background", "disk", "square", "triangle", "bar"}; }

  void validate() const {
    if (classes != 5) throw ConfigError("scene generator draws exactly 5 classes");
    if (palette.size() != classes) throw ConfigError("palette needs one color per class");
    if (height < 16 || width < 16) throw ConfigError("scene crop must be at least 16x16");
    if (texture_period < 2) throw ConfigError("texture period must be at least 2");
  }
};

struct SampleRecord {
  std::string id;
  Tensor image;  // [3,H,W] in [0,1]
  IntMask mask;  // [H,W]
  Domain domain = Domain::source;
};

namespace detail {

/// Rotates an RGB color about the gray axis by `degrees` (Rodrigues).
inline Rgb rotate_hue(const Rgb& c, double degrees) {
  const double th = degrees * 3.14159265358979323846 / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double k = 1.0 / std::sqrt(3.0);
  const double dot = k * (c[0] + c[1] + c[2]);
  // axis u = (k,k,k); v cos + (u x v) sin + u (u.v)(1 - cos)
  const Rgb cross{k * (c[2] - c[1]), k * (c[0] - c[2]), k * (c[1] - c[0])};
  Rgb out;
  for (int i = 0; i < 3; ++i) out[i] = c[i] * cs + cross[i] * sn + k * dot * (1.0 - cs);
  return out;
}

/// Class texture: flat background, then horizontal, vertical, checkerboard
/// and diagonal stripes.
inline double texture_sign(std::size_t cls, std::size_t i, std::size_t j, std::size_t period) {
  const std::size_t half = period / 2;
  switch (cls % 5) {
    case 1: return (i / half) % 2 ? 1.0 : -1.0;
    case 2: return (j / half) % 2 ? 1.0 : -1.0;
    case 3: return ((i / half) + (j / half)) % 2 ? 1.0 : -1.0;
    case 4: return ((i + j) / half) % 2 ? 1.0 : -1.0;
    default: return 0.0;
  }
}

struct ShapeSpec {
  int cls;
  std::int64_t cy, cx, size, aux;
};

inline void rasterize(IntMask& m, const ShapeSpec& s) {
  const auto h = static_cast<std::int64_t>(m.height), w = static_cast<std::int64_t>(m.width);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const std::int64_t dy = y - s.cy, dx = x - s.cx;
      bool inside = false;
      switch (s.cls) {
        case 1: inside = dy * dy + dx * dx <= s.size * s.size; break;
        case 2: inside = std::abs(dy) <= s.size && std::abs(dx) <= s.size; break;
        case 3: {
          // apex at top: half width grows linearly with depth below the apex
          const std::int64_t depth = dy + s.size;
          inside = depth >= 0 && depth <= 2 * s.size && 2 * std::abs(dx) <= depth;
          break;
        }
        case 4:
          inside = s.aux ? (std::abs(dy) <= s.size && std::abs(dx) <= 2) : (std::abs(dx) <= s.size && std::abs(dy) <= 2);
          break;
        default: break;
      }
      if (inside) m.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = s.cls;
    }
}

inline IntMask generate_geometry(const SceneConfig& cfg, CounterRng rng) {
  for (int attempt = 0;; ++attempt) {
    IntMask m(cfg.height, cfg.width, 0);
    const auto n_shapes = rng.between(2, 4);
    for (std::int64_t s = 0; s < n_shapes; ++s) {
      ShapeSpec sp{};
      sp.cls = static_cast<int>(rng.between(1, static_cast<std::int64_t>(cfg.classes) - 1));
      const auto lim = static_cast<std::int64_t>(std::min(cfg.height, cfg.width));
      sp.cy = rng.between(4, static_cast<std::int64_t>(cfg.height) - 5);
      sp.cx = rng.between(4, static_cast<std::int64_t>(cfg.width) - 5);
      sp.size = sp.cls == 4 ? rng.between(lim / 6, lim / 3) : rng.between(lim / 10, lim / 6);
      sp.aux = rng.between(0, 1);
      rasterize(m, sp);
    }
    std::set<std::int32_t> present(m.labels.begin(), m.labels.end());
    if (present.size() >= 2 || attempt > 64) return m;
  }
}

}  // namespace detail

/// Deterministic in (seed, domain, index); with `paired` the geometry only
/// depends on (seed, index).
inline SampleRecord generate_sample(const SceneConfig& cfg, Domain domain, std::uint64_t index,
                                    std::string_view id_prefix = "") {
  cfg.validate();
  const std::string geo_tag = cfg.paired ? "geometry" : std::string("geometry/") + std::string(to_string(domain));
  const IntMask mask = detail::generate_geometry(cfg, CounterRng::stream(cfg.seed, index, geo_tag));

  CounterRng paint = CounterRng::stream(cfg.seed, index, std::string("paint/") + std::string(to_string(domain)));
  std::vector<Rgb> colors(cfg.classes);
  for (std::size_t c = 0; c < cfg.classes; ++c) {
    Rgb col = cfg.palette[c];
    for (auto& v : col) v += paint.uniform(-cfg.color_jitter, cfg.color_jitter);
    if (domain == Domain::target) {
      col = detail::rotate_hue(col, cfg.hue_degrees);
      for (auto& v : col) v += cfg.brightness;
    }
    colors[c] = col;
  }
  const std::size_t h = cfg.height, w = cfg.width;
  std::vector<float> img(3 * h * w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto label = static_cast<std::size_t>(mask.at(i, j));
      const double amp = cfg.texture_amplitude * (domain == Domain::source ? 1.0 : cfg.target_texture);
      const double tex = amp * detail::texture_sign(label, i, j, cfg.texture_period);
      for (std::size_t ch = 0; ch < 3; ++ch) {
        double v = colors[label][ch] + tex;
        if (domain == Domain::target) v += cfg.noise_sigma * paint.normal();
        img[(ch * h + i) * w + j] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }

  SampleRecord rec;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06llu", static_cast<unsigned long long>(index));
  rec.id = std::string(id_prefix.empty() ? (domain == Domain::source ? "src_" : "tgt_") : id_prefix) + buf;
  rec.image = Tensor(Shape{3, h, w}, std::move(img));
  rec.mask = mask;
  rec.domain = domain;
  return rec;
}

// ---------------------------------------------------------------------------
// On-disk dataset
// ---------------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  Domain domain;
};

/// Held-out target samples carry ids starting with "val_"; the training path
/// never draws them.
inline bool is_holdout_id(std::string_view id) { return id.rfind("val_", 0) == 0; }

class Dataset {
 public:
  Dataset(std::filesystem::path dir, std::vector<ManifestEntry> entries, std::vector<std::string> class_names)
      : dir_(std::move(dir)), entries_(std::move(entries)), class_names_(std::move(class_names)) {}

  const std::filesystem::path& dir() const noexcept { return dir_; }
  const std::vector<ManifestEntry>& entries() const noexcept { return entries_; }
  const std::vector<std::string>& class_names() const noexcept { return class_names_; }

  std::vector<std::string> ids(Domain d, bool holdout = false) const {
    std::vector<std::string> out;
    for (const auto& e : entries_)
      if (e.domain == d && is_holdout_id(e.id) == holdout) out.push_back(e.id);
    return out;
  }

  SampleRecord load(const std::string& id) const {
    const ManifestEntry* entry = nullptr;
    for (const auto& e : entries_)
      if (e.id == id) entry = &e;
    if (!entry) throw LookupError("dataset " + dir_.string() + ": no sample with id '" + id + "'");
    const auto img_path = dir_ / ("img_" + id + ".ntf");
    const auto lbl_path = dir_ / ("lbl_" + id + ".ntf");
    for (const auto& p : {img_path, lbl_path})
      if (!std::filesystem::exists(p)) throw LookupError("dataset: sample '" + id + "' is missing file " + p.string());
    SampleRecord rec;
    rec.id = id;
    rec.domain = entry->domain;
    rec.image = read_tensor_ntf(img_path);
    rec.mask = read_mask_ntf(lbl_path);
    if (rec.image.rank() != 3 || rec.image.dim(0) != 3 || rec.image.dim(1) != rec.mask.height ||
        rec.image.dim(2) != rec.mask.width)
      throw FormatError(img_path.string() + ": image " + shape_str(rec.image.shape()) + " does not match mask " +
                            std::to_string(rec.mask.height) + "x" + std::to_string(rec.mask.width),
                        0);
    return rec;
  }

 private:
  std::filesystem::path dir_;
  std::vector<ManifestEntry> entries_;
  std::vector<std::string> class_names_;
};

inline void write_sample(const std::filesystem::path& dir, const SampleRecord& rec) {
  write_tensor_ntf(dir / ("img_" + rec.id + ".ntf"), rec.image);
  write_mask_ntf(dir / ("lbl_" + rec.id + ".ntf"), rec.mask);
}

/// Writes n_source source samples, n_target unlabeled-for-training target
/// samples and n_holdout held-out target samples.
inline void write_dataset(const SceneConfig& cfg, std::size_t n_source, std::size_t n_target,
                          const std::filesystem::path& dir, std::size_t n_holdout = 0) {
  std::filesystem::create_directories(dir);
  std::ostringstream manifest;
  for (std::size_t i = 0; i < n_source; ++i) {
    auto rec = generate_sample(cfg, Domain::source, i);
    write_sample(dir, rec);
    manifest << rec.id << " source\n";
  }
  for (std::size_t i = 0; i < n_target; ++i) {
    auto rec = generate_sample(cfg, Domain::target, i);
    write_sample(dir, rec);
    manifest << rec.id << " target\n";
  }
  for (std::size_t i = 0; i < n_holdout; ++i) {
    // held-out indices follow the training range so geometry never repeats
    auto rec = generate_sample(cfg, Domain::target, n_target + i, "val_");
    write_sample(dir, rec);
    manifest << rec.id << " target\n";
  }
  {
    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    out << manifest.str();
  }
  std::ofstream classes(dir / "classes.txt", std::ios::trunc);
  for (const auto& n : SceneConfig::default_class_names()) classes << n << "\n";
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.txt";
  std::ifstream in(manifest_path);
  if (!in) throw LookupError("dataset: cannot open " + manifest_path.string());
  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id, domain, extra;
    if (!(ls >> id >> domain) || (ls >> extra))
      throw ValidationError(manifest_path.string() + ":" + std::to_string(line_no) + ": expected 'id domain'");
    if (!seen.insert(id).second)
      throw ValidationError(manifest_path.string() + ":" + std::to_string(line_no) + ": duplicate id '" + id + "'");
    entries.push_back({id, parse_domain(domain)});
  }
  for (const auto& e : entries)
    for (const char* prefix : {"img_", "lbl_"}) {
      const auto p = dir / (std::string(prefix) + e.id + ".ntf");
      if (!std::filesystem::exists(p)) throw LookupError("dataset: manifest id '" + e.id + "' has no file " + p.string());
    }
  std::vector<std::string> names;
  std::ifstream cls(dir / "classes.txt");
  if (cls) {
    while (std::getline(cls, line))
      if (!line.empty()) names.push_back(line);
  } else {
    names = SceneConfig::default_class_names();
  }
  return Dataset(dir, std::move(entries), std::move(names));
}

}  // namespace copt
