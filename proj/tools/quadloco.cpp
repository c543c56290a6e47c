// Command-line front end: training, evaluation, terrain export, the latent
// separability probe, and the ablation / prototype sweeps.

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "quadloco/eval.hpp"
#include "quadloco/trainer.hpp"

namespace ql = quadloco;

namespace {

ql::TerrainType parse_terrain(const std::string& s) {
  if (s == "slope") return ql::TerrainType::Slope;
  if (s == "rough") return ql::TerrainType::RoughSlope;
  if (s == "stairs") return ql::TerrainType::Stairs;
  if (s == "obstacles") return ql::TerrainType::DiscreteObstacles;
  throw CLI::ValidationError("--terrain must be slope|rough|stairs|obstacles");
}

ql::eval::Regime parse_regime(const std::string& s) {
  if (s == "lin") return ql::eval::Regime::Linear;
  if (s == "ang") return ql::eval::Regime::Angular;
  if (s == "combined") return ql::eval::Regime::Combined;
  throw CLI::ValidationError("--regime must be lin|ang|combined");
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid-internal-model quadruped locomotion trainer"};
  app.require_subcommand(1);

  // ---- train ----
  std::string cfg_path, out_dir, resume_path, ablation_flags;
  std::int64_t seed = -1;
  int workers = -1, iterations = -1;
  auto* train = app.add_subcommand("train", "run the training loop");
  train->add_option("--config", cfg_path, "config file")->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--seed", seed, "seed override");
  train->add_option("--resume", resume_path, "checkpoint to resume from");
  train->add_option("--workers", workers, "worker thread count");
  train->add_option("--iterations", iterations, "iteration count override");
  train->add_option("--ablation", ablation_flags,
                    "comma-separated ablation flags");

  // ---- eval ----
  std::string ckpt_path, terrain_s = "slope", regime_s = "combined", out_file;
  int range_level = 1, episodes = 1, eval_envs = 64;
  std::uint64_t eval_seed = 97;
  auto* ev = app.add_subcommand("eval", "tracking-score evaluation");
  ev->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  ev->add_option("--terrain", terrain_s, "slope|rough|stairs|obstacles");
  ev->add_option("--regime", regime_s, "lin|ang|combined");
  ev->add_option("--range", range_level, "command range 1|2|3")
      ->check(CLI::Range(1, 3));
  ev->add_option("--episodes", episodes, "episodes per env");
  ev->add_option("--envs", eval_envs, "environments per cell");
  ev->add_option("--seed", eval_seed, "evaluation seed");
  ev->add_option("--out", out_file, "write the report to a file");
  ev->add_option("--workers", workers, "worker thread count");

  // ---- probe-latent ----
  std::string probe_ckpt, probe_out;
  int probe_samples = 300, probe_max_level = 2;
  std::uint64_t probe_seed = 31;
  auto* probe = app.add_subcommand("probe-latent",
                                   "terrain separability of the latent");
  probe->add_option("--checkpoint", probe_ckpt)->required();
  probe->add_option("--out", probe_out, "latent rows output file")->required();
  probe->add_option("--samples", probe_samples, "samples per terrain class");
  probe->add_option("--seed", probe_seed);
  probe->add_option("--max-level", probe_max_level, "highest terrain level");
  probe->add_option("--workers", workers);

  // ---- ablate ----
  std::string spec_path;
  int num_seeds = 4;
  auto* ab = app.add_subcommand("ablate", "train ablation variants");
  ab->add_option("--config", cfg_path)->required();
  ab->add_option("--spec", spec_path, "ablation spec file")->required();
  ab->add_option("--seeds", num_seeds, "seeds per variant");
  ab->add_option("--out", out_dir)->required();

  // ---- sweep-k ----
  std::string k_values = "4,16,64";
  auto* sw = app.add_subcommand("sweep-k", "prototype-count sweep");
  sw->add_option("--config", cfg_path)->required();
  sw->add_option("--values", k_values, "comma-separated prototype counts");
  sw->add_option("--seeds", num_seeds, "seeds per value");
  sw->add_option("--out", out_dir)->required();

  // ---- terrain-dump ----
  auto* td = app.add_subcommand("terrain-dump", "export the heightfield");
  td->add_option("--config", cfg_path)->required();
  td->add_option("--out", out_file, "output text file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      ql::TrainConfig cfg = ql::load_config(cfg_path);
      if (seed >= 0) cfg.seed = static_cast<std::uint64_t>(seed);
      if (workers >= 0) cfg.workers = workers;
      if (iterations >= 0) cfg.num_iterations = iterations;
      ql::TrainerOptions opts;
      opts.out_dir = out_dir;
      opts.resume_path = resume_path;
      if (!ablation_flags.empty()) {
        std::string spec = "cli " + ablation_flags;
        for (auto& c : spec)
          if (c == ',') c = ' ';
        opts.ablation = ql::eval::parse_ablation_spec(spec).at(0).second;
      }
      ql::Trainer trainer(cfg, opts);
      const bool ok = trainer.run();
      std::cerr << (ok ? "training finished" : "training aborted") << " at iteration "
                << trainer.iteration() << "\n";
      return ok ? 0 : 1;
    }

    if (*ev) {
      ql::PolicyBundle bundle = ql::load_policy(ckpt_path);
      ql::eval::EvalProtocol proto;
      proto.terrain = parse_terrain(terrain_s);
      proto.regime = parse_regime(regime_s);
      proto.range_level = range_level;
      proto.episodes = episodes;
      proto.num_envs = eval_envs;
      proto.seed = eval_seed;
      auto rep = ql::eval::evaluate(bundle, proto, workers > 0 ? workers : 0);
      std::ostringstream os;
      os << "terrain\tregime\trange\ttrials\tlin_err\tlin_ci\tang_err\tang_ci"
            "\tnlts\tnlts_ci\tnats\tnats_ci\n";
      char buf[256];
      std::snprintf(buf, sizeof(buf),
                    "%s\t%s\t%d\t%ld\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\n",
                    terrain_s.c_str(), regime_s.c_str(), range_level, rep.trials,
                    rep.lin_err_mean, rep.lin_err_ci, rep.ang_err_mean,
                    rep.ang_err_ci, rep.nlts_mean, rep.nlts_ci, rep.nats_mean,
                    rep.nats_ci);
      os << buf;
      if (out_file.empty()) {
        std::cout << os.str();
      } else {
        std::ofstream out(out_file);
        out << os.str();
        std::cout << "report written to " << out_file << "\n";
      }
      return 0;
    }

    if (*probe) {
      ql::PolicyBundle bundle = ql::load_policy(probe_ckpt);
      auto res = ql::eval::latent_probe(bundle, probe_samples, probe_seed,
                                        probe_out, workers > 0 ? workers : 0,
                                        probe_max_level);
      std::printf("probe_accuracy\t%.4f\n", res.accuracy);
      std::printf("control_accuracy\t%.4f\n", res.control_accuracy);
      std::printf("chance\t%.4f +- %.4f\n", res.chance, res.chance_band);
      std::printf("n_train\t%ld\nn_test\t%ld\n", res.n_train, res.n_test);
      std::printf("rows\t%s\n", probe_out.c_str());
      return 0;
    }

    if (*ab) {
      ql::TrainConfig cfg = ql::load_config(cfg_path);
      auto variants = ql::eval::parse_ablation_spec(read_file(spec_path));
      auto rows = ql::eval::run_ablation(cfg, variants, num_seeds, out_dir);
      std::printf("variant\tseed\tnlts\tnats\tmean_level\n");
      for (const auto& r : rows)
        std::printf("%s\t%llu\t%.4f\t%.4f\t%.3f\n", r.variant.c_str(),
                    static_cast<unsigned long long>(r.seed), r.nlts, r.nats,
                    r.level);
      return 0;
    }

    if (*sw) {
      ql::TrainConfig cfg = ql::load_config(cfg_path);
      std::vector<int> ks;
      std::stringstream ss(k_values);
      std::string tok;
      while (std::getline(ss, tok, ',')) ks.push_back(std::stoi(tok));
      auto rows = ql::eval::sweep_prototypes(cfg, ks, num_seeds, out_dir);
      std::printf("num_prototypes\tseed\tnlts\tnats\tmean_level\n");
      for (const auto& r : rows)
        std::printf("%s\t%llu\t%.4f\t%.4f\t%.3f\n", r.variant.substr(1).c_str(),
                    static_cast<unsigned long long>(r.seed), r.nlts, r.nats,
                    r.level);
      return 0;
    }

    if (*td) {
      ql::TrainConfig cfg = ql::load_config(cfg_path);
      ql::HeightField field = ql::build_field(cfg.terrain, cfg.seed);
      std::ofstream out(out_file);
      if (!out) throw std::runtime_error("cannot open " + out_file);
      ql::export_text(field, out);
      std::cout << "heightfield written to " << out_file << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
