// Acceptance suite: one PASS/FAIL line per primary criterion.
#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "copt/ablate.hpp"
#include "copt/copt_loss.hpp"
#include "copt/grad_check.hpp"
#include "copt/metrics.hpp"
#include "copt/pixel_feat.hpp"
#include "copt/plot.hpp"
#include "copt/text_embed.hpp"
#include "copt/train.hpp"

namespace fs = std::filesystem;
using namespace copt;

namespace {

/// Collects named sub-checks for one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok) failures_.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    std::ostringstream os;
    os << what << " (got " << got << ", want " << want << " +- " << tol << ")";
    expect(std::isfinite(got) && std::abs(got - want) <= tol, os.str());
  }
  bool ok() const { return failures_.empty(); }
  std::size_t total() const { return total_; }
  const std::vector<std::string>& failures() const { return failures_; }

 private:
  std::size_t total_ = 0;
  std::vector<std::string> failures_;
};

struct Outcome {
  bool pass;
  std::string detail;
};

Outcome from_checks(const Checks& c, const std::string& extra = "") {
  std::ostringstream os;
  os << c.total() - c.failures().size() << "/" << c.total() << " checks";
  if (!extra.empty()) os << "; " << extra;
  for (const auto& f : c.failures()) os << "\n      failed: " << f;
  return {c.ok(), os.str()};
}

TensorD rand_d(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = u(gen);
  return TensorD(std::move(s), std::move(v));
}

IntMask mask_of(std::size_t h, std::size_t w, std::vector<std::int32_t> labels) {
  IntMask m(h, w);
  m.labels = std::move(labels);
  return m;
}

TextBank hash_bank(std::vector<std::string> names, std::size_t dim = 64) {
  HashEmbedder h(dim);
  return build_text_bank(h, builtin_template_set("synthetic"), builtin_template_set("real"), ClassList(std::move(names)),
                         TemplateMode::llm);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr double h = 1e-3, tol = 1e-4;
  Checks c;
  auto check = [&](const std::string& name, const std::function<TensorD(const TensorD&)>& f, const TensorD& x) {
    const auto rep = grad_check(f, x, h, tol);
    c.expect(rep.passed, name + " max rel error " + std::to_string(rep.max_rel_error));
  };

  const auto labels = mask_of(3, 3, {0, 1, 2, 3, kIgnoreIndex, 1, 0, 0, 2});
  check("cross entropy", [&](const TensorD& x) { return softmax_cross_entropy(x, labels, kIgnoreIndex); },
        rand_d(Shape{4, 3, 3}, 1, -2, 2));

  BinaryMask b{3, 3, {1, 0, 1, 0, 1, 0, 0, 1, 1}};
  const auto w4 = rand_d(Shape{4}, 2);
  for (auto mode : {FeatureNormalization::total, FeatureNormalization::count})
    check(std::string("masked average ") + std::string(to_string(mode)),
          [&](const TensorD& f) { return sum(mul(masked_spatial_average(f, b, mode).vector, w4)); },
          rand_d(Shape{4, 3, 3}, 3));

  const auto w33 = rand_d(Shape{3, 3}, 4);
  check(
      "pixel covariance",
      [&](const TensorD& x) {
        auto flat = reshape(x, Shape{12});
        std::vector<std::pair<int, TensorD>> feats;
        for (int k = 0; k < 3; ++k) {
          TensorD sel(Shape{12}, 0.0);
          for (int i = 0; i < 4; ++i) sel[4 * k + i] = 1.0;
          feats.emplace_back(k, mul(flat, sel));
        }
        return sum(mul(pixel_covariance(feats).values, w33));
      },
      rand_d(Shape{3, 4}, 5));

  const auto bank2 = hash_bank({"road", "car"}, 16);
  const auto text = text_covariance<double>(bank2, {0, 1});
  const auto partner = rand_d(Shape{4}, 6);
  for (auto m : {CoptMetric::cosine, CoptMetric::l1, CoptMetric::l2})
    check(std::string("copt ") + std::string(to_string(m)),
          [&](const TensorD& x) {
            return copt::copt(pixel_covariance(std::vector<std::pair<int, TensorD>>{{0, x}, {1, partner}}), text, m);
          },
          rand_d(Shape{4}, 7));

  const auto y = mask_of(3, 3, {0, 0, 1, 0, 1, 1, kIgnoreIndex, 0, 1});
  const auto s0 = rand_d(Shape{4}, 8), s1 = rand_d(Shape{4}, 9);
  for (double decay : {0.0, 0.5})
    check("copt_step micro-instance decay " + std::to_string(decay),
          [&](const TensorD& f) {
            FeatureMemoryBank<double> bank(2, decay);
            bank.restore(0, s0.values());
            bank.restore(1, s1.values());
            return *copt_step(f, y, bank, bank2, CoptConfig{});
          },
          rand_d(Shape{4, 3, 3}, 10));

  const double secs = elapsed_s(t0);
  c.expect(secs < 60.0, "runtime under 1 min");
  return from_checks(c, "runtime " + std::to_string(secs) + " s");
}

Outcome algebraic_suite() {
  Checks c;
  std::vector<std::pair<int, TensorD>> feats;
  for (int k = 0; k < 5; ++k) feats.emplace_back(k, rand_d(Shape{8}, 20 + k));
  const auto cov = pixel_covariance(feats);
  for (auto m : {CoptMetric::cosine, CoptMetric::l1, CoptMetric::l2})
    c.near(copt::copt(cov, cov, m).item(), 0.0, 1e-12, "CoPT(S,S) = 0 for " + std::string(to_string(m)));

  bool sym = true, diag = true;
  for (std::size_t i = 0; i < 5; ++i) {
    diag = diag && std::abs(cov.at(i, i) - 1.0) < 1e-12;
    for (std::size_t j = 0; j < 5; ++j) sym = sym && cov.at(i, j) == cov.at(j, i);
  }
  c.expect(sym, "covariance symmetric");
  c.expect(diag, "covariance unit diagonal");

  const auto bank = hash_bank({"a", "b", "c", "d", "e"});
  const std::vector<int> ids{0, 1, 2, 3, 4};
  const auto tcov = text_covariance<double>(bank, ids);
  std::vector<std::pair<int, TensorD>> scaled;
  const double factors[] = {0.1, 4.0, 17.0, 0.5, 2.5};
  for (int k = 0; k < 5; ++k) scaled.emplace_back(k, scale(feats[k].second, factors[k]));
  c.near(copt::copt(pixel_covariance(scaled), tcov).item(), copt::copt(cov, tcov).item(), 1e-12,
         "cosine CoPT invariant to per-class positive rescaling");

  const std::vector<int> perm{3, 0, 4, 2, 1};
  std::vector<std::pair<int, TensorD>> permuted;
  for (int k : perm) permuted.emplace_back(k, feats[k].second);
  for (auto m : {CoptMetric::cosine, CoptMetric::l1, CoptMetric::l2})
    c.near(copt::copt(pixel_covariance(permuted), text_covariance<double>(bank, perm), m).item(), copt::copt(cov, tcov, m).item(),
           1e-12, "class-order permutation invariance " + std::string(to_string(m)));

  // domain-agnostic embedding is the mean of the two domain embeddings
  HashEmbedder hash(64);
  const auto src = builtin_template_set("synthetic"), tgt = builtin_template_set("real");
  for (std::size_t k = 0; k < 5; ++k) {
    const auto es = domain_class_embedding(hash, src, bank.classes().names()[k]);
    const auto et = domain_class_embedding(hash, tgt, bank.classes().names()[k]);
    double err = 0;
    for (std::size_t i = 0; i < es.size(); ++i)
      err = std::max(err, std::abs(0.5 * (double(es[i]) + et[i]) - bank.agnostic(k)[i]));
    c.near(err, 0.0, 1e-7, "agnostic = (source + target) / 2 for class " + std::to_string(k));
  }

  for (double lambda : {0.01, 0.1, 0.5, 0.9}) {
    FeatureMemoryBank<double> mb(1, lambda);
    mb.restore(0, {0.0});
    double worst = 0;
    for (int n = 1; n <= 20; ++n) {
      bank_update(mb, 0, TensorD::vector({1.0}));
      worst = std::max(worst, std::abs(mb.stored(0)[0] - (1.0 - std::pow(lambda, n))));
    }
    c.near(worst, 0.0, 1e-5, "memory bank geometric series, lambda " + std::to_string(lambda));
  }

  for (double lambda : {0.0, 0.25, 0.5, 0.9}) {
    FeatureMemoryBank<double> mb(1, lambda);
    mb.restore(0, {3.0, -1.0});
    TensorD f = TensorD::vector({0.2, 0.7});
    f.set_requires_grad(true);
    Tape tape;
    TapeScope scope(tape);
    backward(sum(bank_update(mb, 0, f)));
    c.near(f.grad()[0], 1.0 - lambda, 1e-15, "bank gradient scaled by (1 - lambda), lambda " + std::to_string(lambda));
  }
  return from_checks(c);
}

Outcome oracle_equivalence() {
  Checks c;
  Tensor f(Shape{1, 2, 2}, {1, 2, 3, 4});
  BinaryMask b{2, 2, {1, 0, 0, 1}};
  c.near(masked_spatial_average(f, b, FeatureNormalization::total).vector[0], 1.25, 1e-7, "masked average 1.25");
  const auto half = pixel_covariance<float>({{0, Tensor::vector({1, 0})}, {1, Tensor::vector({1, 1})}});
  c.near(half.at(0, 1), 0.70710678, 1e-7, "2x2 covariance off-diagonal");
  const CovarianceMatrix<float> eye{{0, 1}, Tensor(Shape{2, 2}, {1, 0, 0, 1})};
  const CovarianceMatrix<float> ones{{0, 1}, Tensor(Shape{2, 2}, {1, 1, 1, 1})};
  c.near(copt::copt(eye, ones).item(), 0.29289, 1e-5, "CoPT(I, ones)");
  ConfusionMatrix cm(2);
  accumulate(cm, mask_of(2, 2, {0, 1, 1, 1}), mask_of(2, 2, {0, 0, 1, 1}), kIgnoreIndex);
  c.near(iou(cm).miou, 0.5833, 1e-4, "IoU 2x2 case mIoU");
  std::vector<float> p{0.5f}, g{1.0f};
  AdamMoments m;
  adam_step(p, g, m, 1, AdamOptions{0.1, 0.9, 0.999, 1e-8, 0.0});
  c.near(p[0] - 0.5, -0.1, 1e-6, "first Adam step delta");
  return from_checks(c);
}

// ---------------------------------------------------------------------------

TrainConfig small_run(const fs::path& data, const fs::path& out) {
  TrainConfig cfg;
  cfg.data_dir = data.string();
  cfg.out_dir = out.string();
  cfg.iterations = 40;
  cfg.eval_every = 10;
  return cfg;
}

Outcome determinism(const fs::path& work) {
  Checks c;
  const fs::path data = work / "small_data";
  SceneConfig scene;
  write_dataset(scene, 12, 12, data, 6);

  train(small_run(data, work / "det_a"));
  train(small_run(data, work / "det_b"));
  const auto a = slurp(work / "det_a/metrics.csv");
  c.expect(!a.empty() && a == slurp(work / "det_b/metrics.csv"), "identical runs give byte-identical metrics CSV");
  // final checkpoints differ only through the out_dir echoed in the config; compare params
  const auto ca = load_checkpoint(work / "det_a/final.ckpt"), cb = load_checkpoint(work / "det_b/final.ckpt");
  bool same = ca.student.size() == cb.student.size();
  for (std::size_t i = 0; same && i < ca.student.size(); ++i) same = ca.student[i].values() == cb.student[i].values();
  c.expect(same, "identical runs give identical student parameters");

  // resume: straight run, set its outputs aside, then resume from k into the same directory
  auto cfg = small_run(data, work / "resume");
  cfg.checkpoint_every = 15;
  for (auto from : {FeatureSource::source, FeatureSource::both_sequential}) {
    cfg.copt_features_from = from;
    const std::string tag(to_string(from));
    fs::remove_all(work / "resume");
    train(cfg);
    const auto straight_csv = slurp(work / "resume/metrics.csv");
    const auto straight_ckpt = slurp(work / "resume/final.ckpt");
    fs::copy_file(work / "resume/checkpoint_000015.ckpt", work / "resume_from.ckpt", fs::copy_options::overwrite_existing);
    fs::remove_all(work / "resume");
    train(cfg, work / "resume_from.ckpt");
    c.expect(slurp(work / "resume/metrics.csv") == straight_csv, "resume at 15 reproduces metrics CSV bytes (" + tag + ")");
    c.expect(slurp(work / "resume/final.ckpt") == straight_ckpt, "resume at 15 reproduces final checkpoint bytes (" + tag + ")");
  }
  return from_checks(c);
}

Outcome degenerate_handling(const fs::path& work) {
  Checks c;
  const fs::path data = work / "degenerate_data";
  fs::create_directories(data);
  SampleRecord single{"src_000000", Tensor(Shape{3, 64, 64}, 0.5f), IntMask(64, 64, 2), Domain::source};
  SampleRecord ignored{"src_000001", Tensor(Shape{3, 64, 64}, 0.3f), IntMask(64, 64, kIgnoreIndex), Domain::source};
  write_sample(data, single);
  write_sample(data, ignored);
  std::ofstream(data / "manifest.txt") << "src_000000 source\nsrc_000001 source\n";
  std::ofstream(data / "classes.txt") << "background\ndisk\nsquare\ntriangle\nbar\n";

  auto cfg = small_run(data, work / "degenerate_run");
  cfg.selftrain_masked = cfg.selftrain_strongaug = false;
  cfg.batch_size = 2;
  Trainer trainer(cfg);
  std::uint64_t skipped = 0;
  bool zero_copt = true, finite = true;
  for (int i = 0; i < 5; ++i) {
    const auto l = trainer.step();
    skipped += l.copt_skipped;
    zero_copt = zero_copt && l.copt == 0.0;
    finite = finite && std::isfinite(l.total);
  }
  c.expect(skipped == 10 && trainer.copt_skipped() == 10, "every single-class / empty sample skipped and counted");
  c.expect(zero_copt, "skipped CoPT contributes zero loss");
  c.expect(finite, "training continues with finite loss");

  // all-ignore image: zero CE and zero gradient
  auto model = init_model<float>(1, ModelConfig{});
  Tape tape;
  TapeScope scope(tape);
  const auto loss = softmax_cross_entropy(forward(model, ignored.image).logits, ignored.mask, kIgnoreIndex);
  c.expect(loss.item() == 0.0f, "all-ignore image has CE 0");
  if (loss.requires_grad()) backward(loss);
  bool zero_grad = true;
  for (const auto& p : model.parameters())
    for (float g : p.grad()) zero_grad = zero_grad && g == 0.0f;
  c.expect(zero_grad, "all-ignore image contributes zero gradient");
  return from_checks(c);
}

// ---------------------------------------------------------------------------

struct ExperimentOptions {
  std::size_t iterations = 2000;
  std::size_t n_source = 200, n_target = 200, n_holdout = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2};
};

double median3(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

double final_miou(const fs::path& csv) {
  const auto t = parse_csv(slurp(csv));
  const auto col = std::find(t.header.begin(), t.header.end(), "miou") - t.header.begin();
  return std::stod(t.rows.back().at(static_cast<std::size_t>(col)));
}

Outcome directional_experiment(const fs::path& work, const ExperimentOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path data = work / "benchmark";
  SceneConfig scene;  // default gap, 64x64, C = 5
  fs::remove_all(data);
  write_dataset(scene, opt.n_source, opt.n_target, data, opt.n_holdout);

  std::map<char, std::vector<double>> miou;
  for (auto seed : opt.seeds)
    for (char v : {'a', 'b', 'c'}) {
      TrainConfig cfg;
      cfg.data_dir = data.string();
      cfg.out_dir = (work / ("experiment_" + std::string(1, v) + "_seed" + std::to_string(seed))).string();
      cfg.seed = seed;
      cfg.iterations = opt.iterations;
      cfg.eval_every = opt.iterations;
      cfg.copt_enabled = v == 'c';
      cfg.selftrain_masked = cfg.selftrain_strongaug = v != 'a';
      train(cfg);
      miou[v].push_back(final_miou(fs::path(cfg.out_dir) / "metrics.csv"));
      std::printf("      seed %llu (%c): target mIoU %.4f\n", static_cast<unsigned long long>(seed), v, miou[v].back());
      std::fflush(stdout);
    }
  const double ma = median3(miou['a']), mb = median3(miou['b']), mc = median3(miou['c']);
  int c_wins = 0;
  for (std::size_t i = 0; i < opt.seeds.size(); ++i) c_wins += miou['c'][i] > miou['b'][i];
  const double secs = elapsed_s(t0);

  Checks c;
  c.expect(std::isfinite(ma), "(a) baseline median recorded");
  c.expect(mb >= ma, "(b) self-training median >= baseline median");
  // 0.5 mIoU points on the 0-100 scale
  c.expect(mc >= mb - 0.005, "(c) CoPT median >= (b) median - 0.5 points");
  c.expect(c_wins >= 2, "(c) beats (b) outright on at least 2 of 3 seeds");
  c.expect(secs < 45 * 60, "runtime under 45 min");
  char buf[256];
  std::snprintf(buf, sizeof buf, "median mIoU a=%.4f b=%.4f c=%.4f; c>b on %d/%zu seeds; runtime %.0f s", ma, mb, mc,
                c_wins, opt.seeds.size(), secs);
  return from_checks(c, buf);
}

Outcome ablation_harness(const fs::path& work) {
  Checks c;
  const fs::path data = work / "small_data";
  if (!fs::exists(data / "manifest.txt")) write_dataset(SceneConfig{}, 12, 12, data, 6);
  auto base = small_run(data, work / "ablation");
  base.iterations = 20;
  const std::map<std::string, std::vector<std::string>> expect{{"metric", {"cosine", "l1", "l2"}},
                                                               {"membank", {"0.01", "0.1", "0.5"}}};
  for (const auto& [axis, values] : expect) {
    const auto csv = work / ("ablation_" + axis + ".csv");
    run_ablation(base, axis, csv);
    const auto t = parse_csv(slurp(csv));
    c.expect(t.header == split_csv_line(ablation_csv_header()), axis + ": CSV header");
    std::vector<std::string> got;
    bool finite = true;
    for (const auto& r : t.rows) {
      got.push_back(r.at(1));
      finite = finite && std::isfinite(std::stod(r.at(4)));
    }
    c.expect(got == values, axis + ": one row per grid value in order");
    c.expect(finite, axis + ": every row has a final mIoU");
  }
  return from_checks(c);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"primary acceptance criteria"};
  std::string work = "acceptance_work";
  std::vector<std::string> only;
  ExperimentOptions exp;
  app.add_option("--work", work, "scratch directory");
  app.add_option("--only", only, "run only these criteria (by key)");
  app.add_option("--iterations", exp.iterations, "directional experiment iterations");
  app.add_option("--seeds", exp.seeds, "directional experiment seeds");
  CLI11_PARSE(app, argc, argv);

  fs::create_directories(work);
  const fs::path w = fs::absolute(work);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient-suite", gradient_suite},
      {"algebraic-suite", algebraic_suite},
      {"oracle-equivalence", oracle_equivalence},
      {"determinism", [&] { return determinism(w); }},
      {"degenerate-handling", [&] { return degenerate_handling(w); }},
      {"directional-experiment", [&] { return directional_experiment(w, exp); }},
      {"ablation-harness", [&] { return ablation_harness(w); }},
  };
  int failed = 0;
  for (const auto& [key, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), key) == only.end()) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s  [PRIMARY] %s: %s\n", o.pass ? "PASS" : "FAIL", key.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
