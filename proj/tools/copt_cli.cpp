#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "copt/ablate.hpp"
#include "copt/config.hpp"
#include "copt/data_synth.hpp"
#include "copt/metrics.hpp"
#include "copt/plot.hpp"
#include "copt/text_embed.hpp"
#include "copt/train.hpp"

namespace {

struct ConfigArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iterations;
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config_file, "flat key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", a.sets, "override one key: --set key=value (repeatable)");
  cmd->add_option("--seed", a.seed, "seed override");
  cmd->add_option("--iterations", a.iterations, "iteration count override");
  cmd->add_option("--data", a.data_dir, "dataset directory override");
  cmd->add_option("--out", a.out_dir, "output directory override");
}

copt::TrainConfig resolve_config(const ConfigArgs& a) {
  copt::TrainConfig cfg;
  if (!a.config_file.empty()) cfg = copt::load_config_file(a.config_file);
  for (const auto& s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw copt::ConfigError("--set expects key=value, got '" + s + "'");
    copt::set_config_value(cfg, copt::detail::trim(std::string_view(s).substr(0, eq)),
                           copt::detail::trim(std::string_view(s).substr(eq + 1)));
  }
  if (a.seed) cfg.seed = *a.seed;
  if (a.iterations) cfg.iterations = *a.iterations;
  if (a.data_dir) cfg.data_dir = *a.data_dir;
  if (a.out_dir) cfg.out_dir = *a.out_dir;
  cfg.validate();
  return cfg;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw copt::Error("cannot open " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CoPT desk-scale domain adaptation toolkit"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a seeded synthetic source/target dataset");
  copt::SceneConfig scene;
  std::string gen_out = "data/synth";
  std::size_t n_source = 200, n_target = 200, n_holdout = 100;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--seed", scene.seed, "generator seed");
  gen->add_option("--n-source", n_source, "labeled source samples");
  gen->add_option("--n-target", n_target, "unlabeled target training samples");
  gen->add_option("--n-holdout", n_holdout, "held-out labeled target samples");
  gen->add_option("--size", scene.height, "crop height and width");
  gen->add_flag("--paired", scene.paired, "share geometry between domains per index");
  gen->add_option("--hue", scene.hue_degrees, "target hue rotation in degrees");
  gen->add_option("--noise", scene.noise_sigma, "target noise sigma");
  gen->add_option("--brightness", scene.brightness, "target brightness offset");
  gen->add_option("--texture", scene.texture_amplitude, "source texture amplitude");
  gen->add_option("--target-texture", scene.target_texture, "target texture amplitude relative to source");

  // embed-hash
  auto* emb = app.add_subcommand("embed-hash", "write a CTEF file of hash embeddings for every prompt of a config");
  ConfigArgs emb_args;
  std::string emb_out = "embeddings.ctef";
  add_config_args(emb, emb_args);
  emb->add_option("--output", emb_out, "CTEF path");

  // prompts
  auto* pr = app.add_subcommand("prompts", "list every formatted prompt of a config, one per line");
  ConfigArgs pr_args;
  std::string pr_classes, pr_out;
  add_config_args(pr, pr_args);
  pr->add_option("--classes", pr_classes, "class-name file (default: classes of the config's dataset)")
      ->check(CLI::ExistingFile);
  pr->add_option("--output,-o", pr_out, "output file (default stdout)");

  // train
  auto* tr = app.add_subcommand("train", "train one run");
  ConfigArgs tr_args;
  std::string resume;
  add_config_args(tr, tr_args);
  tr->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint's student on a dataset split");
  std::string ev_ckpt, ev_data = "data/synth", ev_split = "target_val";
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--data", ev_data, "dataset directory");
  ev->add_option("--split", ev_split, "target_val|target|source");

  // ablate
  auto* ab = app.add_subcommand("ablate", "run an ablation grid and write a comparison CSV");
  ConfigArgs ab_args;
  std::string axis = "all", ab_csv;
  add_config_args(ab, ab_args);
  ab->add_option("--axis", axis, "metric|membank|features_from|template|all");
  ab->add_option("--csv", ab_csv, "comparison CSV path (default <out>/ablation_<axis>.csv)");

  // plot
  auto* pl = app.add_subcommand("plot", "render a metrics CSV as an SVG line chart");
  std::string pl_csv, pl_out;
  pl->add_option("csv", pl_csv, "metrics CSV")->required()->check(CLI::ExistingFile);
  pl->add_option("--output,-o", pl_out, "SVG path (default: CSV path with .svg)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*gen) {
      scene.width = scene.height;
      copt::write_dataset(scene, n_source, n_target, gen_out, n_holdout);
      std::cout << "wrote " << n_source << " source, " << n_target << " target, " << n_holdout
                << " held-out samples to " << gen_out << "\n";
    } else if (*emb) {
      const auto cfg = resolve_config(emb_args);
      const copt::ClassList classes(copt::load_dataset(cfg.data_dir).class_names());
      copt::HashEmbedder hash(cfg.embedding_dim);
      copt::EmbeddingTable table(cfg.embedding_dim);
      for (const auto& p : copt::config_prompts(cfg, classes)) table.add(p, hash.embed(p));
      copt::save_ctef(emb_out, table);
      std::cout << "wrote " << table.entries().size() << " prompts (dim " << cfg.embedding_dim << ") to " << emb_out
                << "\n";
    } else if (*pr) {
      const auto cfg = resolve_config(pr_args);
      std::vector<std::string> names;
      if (pr_classes.empty()) {
        names = copt::load_dataset(cfg.data_dir).class_names();
      } else {
        std::istringstream in(read_text(pr_classes));
        for (std::string line; std::getline(in, line);)
          if (!line.empty()) names.push_back(line);
      }
      std::ostringstream text;
      for (const auto& p : copt::config_prompts(cfg, copt::ClassList(names))) text << p << "\n";
      if (pr_out.empty())
        std::cout << text.str();
      else
        std::ofstream(pr_out, std::ios::trunc | std::ios::binary) << text.str();
    } else if (*tr) {
      const auto cfg = resolve_config(tr_args);
      copt::Trainer trainer(cfg);
      if (!resume.empty()) trainer.restore(copt::load_checkpoint(resume));
      trainer.run();
      std::cout << trainer.log_lines().back() << "\n";
    } else if (*ev) {
      const auto row = copt::evaluate_checkpoint(ev_ckpt, ev_data, ev_split);
      std::vector<std::string> names = copt::load_dataset(ev_data).class_names();
      std::cout << copt::metrics_csv_header(names) << "\n" << copt::metrics_csv_row(row) << "\n";
      if (!row.iou.miou_defined) std::cerr << "warning: mIoU undefined (no class present in split)\n";
    } else if (*ab) {
      const auto cfg = resolve_config(ab_args);
      const std::filesystem::path csv =
          ab_csv.empty() ? std::filesystem::path(cfg.out_dir) / ("ablation_" + axis + ".csv") : std::filesystem::path(ab_csv);
      for (const auto& r : copt::run_ablation(cfg, axis, csv)) std::cout << r << "\n";
    } else if (*pl) {
      const std::filesystem::path out =
          pl_out.empty() ? std::filesystem::path(pl_csv).replace_extension(".svg") : std::filesystem::path(pl_out);
      std::ofstream(out, std::ios::trunc | std::ios::binary) << copt::metrics_svg(copt::parse_csv(read_text(pl_csv)));
      std::cout << "wrote " << out.string() << "\n";
    }
  } catch (const copt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
