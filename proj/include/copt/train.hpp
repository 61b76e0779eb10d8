#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "copt/binio.hpp"
#include "copt/config.hpp"
#include "copt/copt_loss.hpp"
#include "copt/data_synth.hpp"
#include "copt/metrics.hpp"
#include "copt/model.hpp"
#include "copt/selftrain.hpp"
#include "copt/text_embed.hpp"

namespace copt {

// ---------------------------------------------------------------------------
// Adam with decoupled weight decay
// ---------------------------------------------------------------------------

struct AdamOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamMoments {
  std::vector<float> m;
  std::vector<float> v;
};

/// One Adam update of `p` in place; `step` is the 1-based step count used for
/// bias correction. Decay is applied first: p <- p - lr * wd * p.
inline void adam_step(std::span<float> p, std::span<const float> g, AdamMoments& moments, std::uint64_t step,
                      const AdamOptions& opt) {
  if (g.size() != p.size()) throw DimensionError("adam_step: gradient size does not match parameter size");
  if (moments.m.empty()) {
    moments.m.assign(p.size(), 0.0f);
    moments.v.assign(p.size(), 0.0f);
  }
  if (moments.m.size() != p.size()) throw DimensionError("adam_step: moment size does not match parameter size");
  for (float x : g)
    if (!std::isfinite(x)) throw NumericError("adam_step: non-finite gradient");
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(step));
  const auto b1 = static_cast<float>(opt.beta1), b2 = static_cast<float>(opt.beta2);
  const auto decay = static_cast<float>(opt.lr * opt.weight_decay);
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (decay != 0.0f) p[i] -= decay * p[i];
    moments.m[i] = b1 * moments.m[i] + (1.0f - b1) * g[i];
    moments.v[i] = b2 * moments.v[i] + (1.0f - b2) * g[i] * g[i];
    const double m_hat = moments.m[i] / bc1;
    const double v_hat = moments.v[i] / bc2;
    p[i] -= static_cast<float>(opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps));
  }
}

/// Optimizer over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions opt) : params_(std::move(params)), opt_(opt), moments_(params_.size()) {}

  void step() {
    ++step_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      std::vector<float> zeros;
      std::span<const float> g = p.grad();
      if (!p.has_grad()) {
        zeros.assign(p.numel(), 0.0f);
        g = zeros;
      }
      try {
        adam_step(p.data(), g, moments_[i], step_, opt_);
      } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " in parameter " + std::to_string(i) + " at optimizer step " +
                           std::to_string(step_));
      }
    }
  }

  std::uint64_t steps() const noexcept { return step_; }
  std::vector<AdamMoments>& moments() noexcept { return moments_; }
  const std::vector<AdamMoments>& moments() const noexcept { return moments_; }
  void restore(std::uint64_t step, std::vector<AdamMoments> moments) {
    if (moments.size() != params_.size()) throw FormatError("optimizer state has wrong parameter count", 0);
    step_ = step;
    moments_ = std::move(moments);
  }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<AdamMoments> moments_;
  std::uint64_t step_ = 0;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

using Predictor = std::function<IntMask(const SampleRecord&)>;

/// Accumulates one dataset-level confusion matrix over `samples`.
inline ConfusionMatrix evaluate_predictor(const Predictor& predict, const std::vector<SampleRecord>& samples,
                                          std::size_t classes) {
  ConfusionMatrix cm(classes);
  for (const auto& s : samples) accumulate(cm, predict(s), s.mask, kIgnoreIndex);
  return cm;
}

inline Predictor model_predictor(const SegModel<float>& model) {
  return [&model](const SampleRecord& s) {
    NoGradGuard no_grad;
    return argmax_channel(forward(model, s.image).logits);
  };
}

// ---------------------------------------------------------------------------
// Checkpoints: "CKPT" | u32 version | sections (4-byte tag, u64 length, payload)
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  std::uint64_t copt_skipped = 0;
  std::string config_text;
  std::vector<Tensor> student;
  std::vector<Tensor> teacher;
  float bank_decay = 0.5f;
  std::vector<std::optional<std::vector<float>>> bank;
  std::uint64_t adam_step = 0;
  std::vector<AdamMoments> adam_moments;
  std::uint64_t rng_seed = 0;
  std::uint64_t rng_next_iteration = 0;
  std::vector<std::string> log_lines;
};

namespace detail {

inline void write_tensors(binio::Writer& w, const std::vector<Tensor>& ts) {
  w.u32(static_cast<std::uint32_t>(ts.size()));
  for (const auto& t : ts) {
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    w.f32s(t.data().data(), t.numel());
  }
}

inline std::vector<Tensor> read_tensors(binio::Reader& r) {
  const auto n = r.u32("tensor count");
  std::vector<Tensor> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto rank = r.u32("rank");
    if (rank > 8) r.fail("implausible tensor rank " + std::to_string(rank));
    Shape s;
    for (std::uint32_t k = 0; k < rank; ++k) s.push_back(r.u32("dim"));
    std::vector<float> v(shape_numel(s));
    r.f32s(v.data(), v.size(), "tensor data");
    out.emplace_back(std::move(s), std::move(v));
  }
  return out;
}

inline void write_floats(binio::Writer& w, const std::vector<float>& v) {
  w.u32(static_cast<std::uint32_t>(v.size()));
  w.f32s(v.data(), v.size());
}

inline std::vector<float> read_floats(binio::Reader& r) {
  std::vector<float> v(r.u32("float count"));
  r.f32s(v.data(), v.size(), "floats");
  return v;
}

inline void section(binio::Writer& out, std::string_view tag, binio::Writer& body) {
  out.magic(tag);
  out.u64(body.size());
  out.bytes(body.buffer().data(), body.size());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& c) {
  binio::Writer w;
  w.magic("CKPT");
  w.u32(kCheckpointVersion);
  {
    binio::Writer s;
    s.u64(c.iteration);
    s.u64(c.seed);
    s.u64(c.copt_skipped);
    s.str(c.config_text);
    detail::section(w, "META", s);
  }
  {
    binio::Writer s;
    detail::write_tensors(s, c.student);
    detail::section(w, "STUD", s);
  }
  {
    binio::Writer s;
    detail::write_tensors(s, c.teacher);
    detail::section(w, "TEAC", s);
  }
  {
    binio::Writer s;
    s.f32(c.bank_decay);
    s.u32(static_cast<std::uint32_t>(c.bank.size()));
    for (const auto& e : c.bank) {
      s.u8(e ? 1 : 0);
      if (e) detail::write_floats(s, *e);
    }
    detail::section(w, "BANK", s);
  }
  {
    binio::Writer s;
    s.u64(c.adam_step);
    s.u32(static_cast<std::uint32_t>(c.adam_moments.size()));
    for (const auto& m : c.adam_moments) {
      detail::write_floats(s, m.m);
      detail::write_floats(s, m.v);
    }
    detail::section(w, "ADAM", s);
  }
  {
    binio::Writer s;
    s.u64(c.rng_seed);
    s.u64(c.rng_next_iteration);
    detail::section(w, "RNGS", s);
  }
  {
    binio::Writer s;
    s.u32(static_cast<std::uint32_t>(c.log_lines.size()));
    for (const auto& l : c.log_lines) s.str(l);
    detail::section(w, "LOG ", s);
  }
  return w.take();
}

inline Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& context) {
  binio::Reader r(bytes, context);
  r.expect_magic("CKPT");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) r.fail("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  std::set<std::string> seen;
  while (!r.at_end()) {
    std::string tag(4, '\0');
    r.copy(tag.data(), 4, "section tag");
    const auto len = r.u64("section length");
    if (len > r.remaining()) r.fail("section '" + tag + "' length exceeds file");
    auto s = r.sub(static_cast<std::size_t>(len), context + " [" + tag + "]");
    seen.insert(tag);
    if (tag == "META") {
      c.iteration = s.u64();
      c.seed = s.u64();
      c.copt_skipped = s.u64();
      c.config_text = s.str("config text");
    } else if (tag == "STUD") {
      c.student = detail::read_tensors(s);
    } else if (tag == "TEAC") {
      c.teacher = detail::read_tensors(s);
    } else if (tag == "BANK") {
      c.bank_decay = s.f32();
      const auto n = s.u32("bank classes");
      for (std::uint32_t i = 0; i < n; ++i) {
        if (s.u8("bank flag"))
          c.bank.emplace_back(detail::read_floats(s));
        else
          c.bank.emplace_back(std::nullopt);
      }
    } else if (tag == "ADAM") {
      c.adam_step = s.u64();
      const auto n = s.u32("moment count");
      for (std::uint32_t i = 0; i < n; ++i) {
        AdamMoments m;
        m.m = detail::read_floats(s);
        m.v = detail::read_floats(s);
        c.adam_moments.push_back(std::move(m));
      }
    } else if (tag == "RNGS") {
      c.rng_seed = s.u64();
      c.rng_next_iteration = s.u64();
    } else if (tag == "LOG ") {
      const auto n = s.u32("log line count");
      for (std::uint32_t i = 0; i < n; ++i) c.log_lines.push_back(s.str("log line"));
    }
    else {
      continue;  // unknown sections are skipped
    }
    if (!s.at_end()) s.fail("unread bytes at end of section");
  }
  for (const char* required : {"META", "STUD", "TEAC"})
    if (!seen.count(required)) throw FormatError(context + ": missing section " + required, bytes.size());
  return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  binio::write_file_atomic(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(binio::read_file(path), path.string());
}

inline void load_params(SegModel<float>& model, const std::vector<Tensor>& values, const char* what) {
  auto ps = model.parameters();
  if (ps.size() != values.size())
    throw ConfigError(std::string(what) + ": checkpoint has " + std::to_string(values.size()) +
                      " parameter tensors, model has " + std::to_string(ps.size()));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (ps[i].shape() != values[i].shape())
      throw ConfigError(std::string(what) + ": parameter " + std::to_string(i) + " shape " +
                        shape_str(values[i].shape()) + " does not match model " + shape_str(ps[i].shape()));
    std::copy(values[i].data().begin(), values[i].data().end(), ps[i].data().begin());
  }
}

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct IterationLosses {
  double ce = 0, copt = 0, masked = 0, strongaug = 0, total = 0;
  std::uint64_t copt_skipped = 0;  // skipped samples in this iteration
};

inline std::unique_ptr<EmbeddingProvider> make_provider(const TrainConfig& cfg) {
  if (cfg.embedding == "hash") return std::make_unique<HashEmbedder>(cfg.embedding_dim);
  std::string path = cfg.embedding;
  if (path.rfind("ctef:", 0) == 0) path = path.substr(5);
  return std::make_unique<EmbeddingTable>(load_ctef(path));
}

/// Source and target template sets selected by the config's template mode.
inline std::pair<DomainTemplateSet, DomainTemplateSet> template_sets(const TrainConfig& cfg) {
  DomainTemplateSet src, tgt;
  if (cfg.template_mode == TemplateMode::handcrafted) {
    src.domain_name = cfg.handcrafted_source;
    tgt.domain_name = cfg.handcrafted_target;
  } else {
    src = resolve_template_set(cfg.source_templates);
    tgt = resolve_template_set(cfg.target_templates);
  }
  return {src, tgt};
}

inline std::vector<std::string> config_prompts(const TrainConfig& cfg, const ClassList& classes) {
  const auto [src, tgt] = template_sets(cfg);
  return all_prompts(src, tgt, classes, cfg.template_mode);
}

inline TextBank make_text_bank(const TrainConfig& cfg, const ClassList& classes, const EmbeddingProvider& provider) {
  const auto [src, tgt] = template_sets(cfg);
  return build_text_bank(provider, src, tgt, classes, cfg.template_mode);
}

inline ModelConfig model_config(const TrainConfig& cfg, std::size_t classes) {
  ModelConfig m;
  m.classes = classes;
  m.feature_dim = cfg.feature_dim;
  m.downsample = cfg.downsample;
  m.channels = cfg.channel_list();
  return m;
}

/// Joint training loop: source CE + weight * CoPT + masked and strongly
/// augmented self-training, Adam, EMA teacher, periodic held-out evaluation.
/// Every random draw is keyed by (seed, iteration, purpose).
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    const Dataset ds = load_dataset(cfg_.data_dir);
    classes_ = ClassList(ds.class_names());
    for (const auto& id : ds.ids(Domain::source)) source_.push_back(ds.load(id));
    for (const auto& id : ds.ids(Domain::target)) target_.push_back(ds.load(id));
    for (const auto& id : ds.ids(Domain::target, true)) holdout_.push_back(ds.load(id));
    if (source_.empty()) throw ConfigError("dataset " + cfg_.data_dir + " has no source samples");
    const bool needs_target = self_training() || (cfg_.copt_enabled && cfg_.copt_features_from != FeatureSource::source);
    if (needs_target && target_.empty()) throw ConfigError("dataset " + cfg_.data_dir + " has no target training samples");
    for (const auto* pool : {&source_, &target_, &holdout_})
      for (const auto& s : *pool)
        for (auto l : s.mask.labels)
          if (l != kIgnoreIndex && (l < 0 || static_cast<std::size_t>(l) >= classes_.size()))
            throw ConfigError("sample " + s.id + " has label " + std::to_string(l) + " but the dataset declares " +
                              std::to_string(classes_.size()) + " classes");

    provider_ = make_provider(cfg_);
    text_bank_ = std::make_unique<TextBank>(make_text_bank(cfg_, classes_, *provider_));

    student_ = init_model<float>(cfg_.seed, model_config(cfg_, classes_.size()));
    if (cfg_.scheme == TrainingScheme::finetune) {
      const auto init = load_checkpoint(cfg_.init_checkpoint);
      load_params(student_, init.student, "init_checkpoint");
    }
    teacher_ = clone_params(student_);
    teacher_.set_requires_grad(false);
    bank_ = std::make_unique<FeatureMemoryBank<float>>(classes_.size(), static_cast<float>(cfg_.membank_decay),
                                                       cfg_.membank_blend_first_zeros);
    adam_ = std::make_unique<Adam>(student_.parameters(),
                                   AdamOptions{cfg_.lr, cfg_.beta1, cfg_.beta2, cfg_.adam_eps, cfg_.weight_decay});
    log_lines_.push_back(metrics_csv_header(classes_.names()));
  }

  const TrainConfig& config() const noexcept { return cfg_; }
  const SegModel<float>& student() const noexcept { return student_; }
  const SegModel<float>& teacher() const noexcept { return teacher_; }
  const FeatureMemoryBank<float>& bank() const noexcept { return *bank_; }
  const TextBank& text_bank() const noexcept { return *text_bank_; }
  const std::vector<SampleRecord>& source_samples() const noexcept { return source_; }
  const std::vector<SampleRecord>& target_samples() const noexcept { return target_; }
  const std::vector<SampleRecord>& holdout_samples() const noexcept { return holdout_; }
  std::uint64_t iteration() const noexcept { return iteration_; }
  std::uint64_t copt_skipped() const noexcept { return copt_skipped_; }
  const std::vector<std::string>& log_lines() const noexcept { return log_lines_; }

  bool self_training() const {
    return cfg_.scheme == TrainingScheme::joint && (cfg_.selftrain_masked || cfg_.selftrain_strongaug);
  }

  /// Indices drawn for iteration `t` from a pool of size n.
  std::vector<std::size_t> batch_indices(std::uint64_t t, std::string_view purpose, std::size_t n) const {
    CounterRng rng = CounterRng::stream(cfg_.seed, t, purpose);
    std::vector<std::size_t> idx(cfg_.batch_size);
    for (auto& i : idx) i = static_cast<std::size_t>(rng.below(n));
    return idx;
  }

  /// Runs iteration `iteration() + 1`.
  IterationLosses step() {
    const std::uint64_t t = iteration_ + 1;
    const auto copt_cfg = cfg_.copt_config();
    const bool copt_source = copt_cfg.enabled && copt_cfg.features_from != FeatureSource::target;
    const bool copt_target = copt_cfg.enabled && copt_cfg.features_from != FeatureSource::source;
    const bool sequential = copt_cfg.features_from == FeatureSource::both_sequential;
    const float inv_b = 1.0f / static_cast<float>(cfg_.batch_size);
    const std::size_t r = cfg_.downsample;
    IterationLosses out;
    student_.zero_grad();

    std::vector<Tensor> copt_terms;
    std::vector<Tensor> terms;
    {
      Tape tape;
      TapeScope scope(tape);
      // source: CE and CoPT over ground-truth classes
      for (std::size_t i : batch_indices(t, "source_batch", source_.size())) {
        const auto& s = source_[i];
        const auto fw = forward(student_, s.image);
        terms.push_back(scale(softmax_cross_entropy(fw.logits, s.mask, kIgnoreIndex), inv_b));
        out.ce += terms.back().item();
        if (copt_source) add_copt(fw.features, downsample_mask(s.mask, r, cfg_.downsample_policy), copt_terms, out);
      }
      std::vector<PseudoLabel> pls;
      std::vector<std::size_t> tgt_idx;
      if (self_training() || copt_target) {
        tgt_idx = batch_indices(t, "target_batch", target_.size());
        for (std::size_t i : tgt_idx) pls.push_back(pseudo_label(teacher_, target_[i].image, static_cast<float>(cfg_.pl_threshold)));
      }
      if (self_training()) {
        const MaskSpec mspec{cfg_.mask_block, static_cast<float>(cfg_.mask_ratio), 0.0f};
        for (std::size_t b = 0; b < tgt_idx.size(); ++b) {
          const auto& x = target_[tgt_idx[b]].image;
          if (cfg_.selftrain_masked) {
            CounterRng rng = CounterRng::stream(cfg_.seed, t, "mask/" + std::to_string(b));
            terms.push_back(scale(masked_loss(student_, x, pls[b], mspec, rng), inv_b));
            out.masked += terms.back().item();
          }
          if (cfg_.selftrain_strongaug) {
            CounterRng rng = CounterRng::stream(cfg_.seed, t, "augment/" + std::to_string(b));
            terms.push_back(scale(strongaug_loss(student_, x, pls[b], rng, AugmentSpec{}, cfg_.st_quality_weight), inv_b));
            out.strongaug += terms.back().item();
          }
        }
      }
      std::vector<Tensor> target_copt;
      if (copt_target && !sequential) {
        for (std::size_t b = 0; b < tgt_idx.size(); ++b) {
          const auto fw = forward(student_, target_[tgt_idx[b]].image);
          add_copt(fw.features, downsample_mask(pls[b].labels, r, cfg_.downsample_policy), copt_terms, out);
        }
      }
      Tensor total = finish_total(terms, copt_terms, copt_cfg.weight, out);
      if (total.requires_grad()) tape.backward(total);

      if (copt_target && sequential) {
        // second pass on a fresh tape; gradients accumulate into the same leaves
        Tape tape2;
        TapeScope scope2(tape2);
        std::vector<Tensor> tgt_terms;
        IterationLosses tgt_out;
        for (std::size_t b = 0; b < tgt_idx.size(); ++b) {
          const auto fw = forward(student_, target_[tgt_idx[b]].image);
          add_copt(fw.features, downsample_mask(pls[b].labels, r, cfg_.downsample_policy), tgt_terms, tgt_out);
        }
        out.copt_skipped += tgt_out.copt_skipped;
        if (!tgt_terms.empty()) {
          Tensor tgt_loss = scale(mean(concat(tgt_terms)), copt_cfg.weight);
          check_loss(tgt_loss.item(), t, "target CoPT");
          out.copt += mean(concat(tgt_terms)).item();
          out.total += tgt_loss.item();
          if (tgt_loss.requires_grad()) tape2.backward(tgt_loss);
        }
      }
    }
    adam_->step();
    const double alpha = std::min(1.0 - 1.0 / static_cast<double>(t), cfg_.ema_alpha);
    ema_update(teacher_, student_, static_cast<float>(alpha));
    iteration_ = t;
    copt_skipped_ += out.copt_skipped;
    last_ = out;
    return out;
  }

  /// Student-only inference on the held-out target split.
  MetricsRow evaluate_holdout() const {
    MetricsRow row;
    row.iter = iteration_;
    row.split = "target_val";
    row.iou = iou(evaluate_predictor(model_predictor(student_), holdout_, classes_.size()));
    row.loss_ce = last_.ce;
    row.loss_copt = last_.copt;
    row.loss_m = last_.masked;
    row.loss_st = last_.strongaug;
    row.copt_skipped = copt_skipped_;
    return row;
  }

  /// Trains until `config().iterations`, writing metrics, the resolved config
  /// and checkpoints under out_dir.
  void run() {
    const std::filesystem::path out = cfg_.out_dir;
    std::filesystem::create_directories(out);
    {
      std::ofstream rc(out / "resolved.cfg", std::ios::trunc);
      rc << serialize_config(cfg_);
    }
    while (iteration_ < cfg_.iterations) {
      step();
      if (iteration_ % cfg_.eval_every == 0 || iteration_ == cfg_.iterations) {
        log_lines_.push_back(metrics_csv_row(evaluate_holdout()));
        write_metrics(out / "metrics.csv");
      }
      if (cfg_.checkpoint_every && iteration_ % cfg_.checkpoint_every == 0 && iteration_ != cfg_.iterations) {
        char name[64];
        std::snprintf(name, sizeof name, "checkpoint_%06llu.ckpt", static_cast<unsigned long long>(iteration_));
        save_checkpoint(out / name, checkpoint());
      }
    }
    write_metrics(out / "metrics.csv");
    save_checkpoint(out / "final.ckpt", checkpoint());
  }

  void write_metrics(const std::filesystem::path& path) const {
    std::ofstream csv(path, std::ios::trunc | std::ios::binary);
    for (const auto& l : log_lines_) csv << l << "\n";
  }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.iteration = iteration_;
    c.seed = cfg_.seed;
    c.copt_skipped = copt_skipped_;
    c.config_text = serialize_config(cfg_);
    for (const auto& p : student_.parameters()) c.student.push_back(p.clone());
    for (const auto& p : teacher_.parameters()) c.teacher.push_back(p.clone());
    c.bank_decay = bank_->decay();
    for (std::size_t k = 0; k < bank_->classes(); ++k)
      c.bank.push_back(bank_->initialized(k) ? std::optional(bank_->stored(k)) : std::nullopt);
    c.adam_step = adam_->steps();
    c.adam_moments = adam_->moments();
    c.rng_seed = cfg_.seed;
    c.rng_next_iteration = iteration_ + 1;
    c.log_lines = log_lines_;
    return c;
  }

  /// Restores the full training state; training continues at c.iteration + 1.
  void restore(const Checkpoint& c) {
    if (c.seed != cfg_.seed) throw ConfigError("checkpoint seed " + std::to_string(c.seed) + " differs from config seed");
    load_params(student_, c.student, "student");
    load_params(teacher_, c.teacher, "teacher");
    if (c.bank.size() != bank_->classes()) throw ConfigError("checkpoint memory bank has the wrong class count");
    bank_ = std::make_unique<FeatureMemoryBank<float>>(classes_.size(), static_cast<float>(cfg_.membank_decay),
                                                       cfg_.membank_blend_first_zeros);
    for (std::size_t k = 0; k < c.bank.size(); ++k)
      if (c.bank[k]) bank_->restore(k, *c.bank[k]);
    adam_->restore(c.adam_step, c.adam_moments);
    iteration_ = c.iteration;
    copt_skipped_ = c.copt_skipped;
    if (!c.log_lines.empty()) log_lines_ = c.log_lines;
  }

 private:
  void add_copt(const Tensor& features, const IntMask& y_small, std::vector<Tensor>& terms, IterationLosses& out) {
    auto loss = copt_step(features, y_small, *bank_, *text_bank_, cfg_.copt_config());
    if (loss)
      terms.push_back(*loss);
    else
      ++out.copt_skipped;
  }

  static void check_loss(double v, std::uint64_t t, const char* what) {
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + what + " loss at iteration " + std::to_string(t));
  }

  Tensor finish_total(std::vector<Tensor>& terms, const std::vector<Tensor>& copt_terms, float weight,
                      IterationLosses& out) {
    if (!copt_terms.empty()) {
      Tensor copt_mean = mean(concat(copt_terms));
      out.copt = copt_mean.item();
      terms.push_back(scale(copt_mean, weight));
    }
    Tensor total = sum(concat(terms));
    out.total = total.item();
    check_loss(out.total, iteration_ + 1, "total");
    return total;
  }

  TrainConfig cfg_;
  ClassList classes_;
  std::vector<SampleRecord> source_, target_, holdout_;
  std::unique_ptr<EmbeddingProvider> provider_;
  std::unique_ptr<TextBank> text_bank_;
  SegModel<float> student_;
  SegModel<float> teacher_;
  std::unique_ptr<FeatureMemoryBank<float>> bank_;
  std::unique_ptr<Adam> adam_;
  std::uint64_t iteration_ = 0;
  std::uint64_t copt_skipped_ = 0;
  IterationLosses last_;
  std::vector<std::string> log_lines_;
};

/// Trains from scratch, or from `resume` when given.
inline void train(const TrainConfig& cfg, const std::optional<std::filesystem::path>& resume = std::nullopt) {
  Trainer trainer(cfg);
  if (resume) trainer.restore(load_checkpoint(*resume));
  trainer.run();
}

/// Evaluates a checkpoint's student on a dataset split ("target_val",
/// "target" or "source").
inline MetricsRow evaluate_checkpoint(const std::filesystem::path& ckpt_path, const std::filesystem::path& data_dir,
                                      const std::string& split = "target_val") {
  const auto ckpt = load_checkpoint(ckpt_path);
  TrainConfig cfg;
  apply_config_text(cfg, ckpt.config_text, ckpt_path.string());
  const Dataset ds = load_dataset(data_dir);
  std::vector<SampleRecord> samples;
  std::vector<std::string> ids;
  if (split == "target_val")
    ids = ds.ids(Domain::target, true);
  else if (split == "target")
    ids = ds.ids(Domain::target);
  else if (split == "source")
    ids = ds.ids(Domain::source);
  else
    throw ConfigError("unknown split '" + split + "' (expected target_val|target|source)");
  for (const auto& id : ids) samples.push_back(ds.load(id));
  const std::size_t classes = ds.class_names().size();
  if (ckpt.student.empty() || ckpt.student.back().rank() != 1 || ckpt.student.back().dim(0) != classes)
    throw ConfigError("checkpoint predicts " + std::to_string(ckpt.student.empty() ? 0 : ckpt.student.back().numel()) +
                      " classes but dataset " + data_dir.string() + " declares " + std::to_string(classes));
  auto model = init_model<float>(cfg.seed, model_config(cfg, classes));
  load_params(model, ckpt.student, "student");
  for (const auto& s : samples)
    for (auto l : s.mask.labels)
      if (l != kIgnoreIndex && static_cast<std::size_t>(l) >= classes)
        throw ConfigError("sample " + s.id + " label " + std::to_string(l) + " exceeds checkpoint class count");
  MetricsRow row;
  row.iter = ckpt.iteration;
  row.split = split;
  row.iou = iou(evaluate_predictor(model_predictor(model), samples, classes));
  row.copt_skipped = ckpt.copt_skipped;
  return row;
}

}  // namespace copt
