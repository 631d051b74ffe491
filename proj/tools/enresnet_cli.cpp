#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "enres/attack/attacks.hpp"
#include "enres/common/error.hpp"
#include "enres/lab/checkpoint.hpp"
#include "enres/lab/evaluate.hpp"
#include "enres/lab/experiment.hpp"
#include "enres/lab/training.hpp"
#include "enres/pde/field_io.hpp"
#include "enres/pde/field_pde.hpp"

namespace {

using enres::lab::json;
namespace fs = std::filesystem;

json load_config(const std::string& path) {
  return path.empty() ? json::object() : enres::lab::read_config_file(path);
}

/// Writes `value` at `section.key` when the flag was given on the command line.
template <typename T>
void override_key(json& cfg, const CLI::App* app, const std::string& flag, const std::string& section,
                  const std::string& key, const T& value) {
  if (app->count(flag) == 0) return;
  if (section.empty()) {
    cfg[key] = value;
  } else {
    cfg[section][key] = value;
  }
}

/// A dataset argument is either a JSON file with dataset keys or a source name.
enres::lab::Dataset load_data_arg(const std::string& arg) {
  json j = fs::exists(arg) ? enres::lab::read_config_file(arg) : json{{"source", arg}};
  return enres::lab::load_dataset(enres::lab::parse_dataset_spec(j));
}

void write_json(const std::string& path, const json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

struct AttackFlags {
  std::string kind = "ifgsm";
  double eps = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int iters = 20;
  int eot = 5;
  double cw_c = 10.0;
  int cw_steps = 50;

  void add_to(CLI::App* app) {
    app->add_option("--kind", kind, "fgsm | ifgsm | cw");
    app->add_option("--eps", eps, "max l-inf perturbation");
    app->add_option("--alpha", alpha, "ifgsm step size");
    app->add_option("--iters", iters, "ifgsm iterations");
    app->add_option("--eot", eot, "EOT runs for noisy models");
    app->add_option("--cw-c", cw_c, "C&W hinge weight");
    app->add_option("--cw-steps", cw_steps, "C&W Adam iterations");
  }

  enres::attack::AttackSpec spec() const {
    return enres::lab::parse_attack_spec(json{{"kind", kind},
                                              {"epsilon", eps},
                                              {"alpha", alpha},
                                              {"iters", iters},
                                              {"eot", eot},
                                              {"cw_c", cw_c},
                                              {"cw_steps", cw_steps}});
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EnResNet numerical laboratory"};
  app.require_subcommand(1);

  // pde-solve
  auto* pde = app.add_subcommand("pde-solve", "Solve the terminal-value convection-diffusion problem");
  int pde_n = 128, pde_cutoff = 8;
  double pde_sigma = 0.1, pde_dt = 1e-3;
  std::uint64_t pde_seed = 0;
  std::string pde_out = "field.csv";
  pde->add_option("--n", pde_n, "grid nodes per side (power of two)");
  pde->add_option("--sigma", pde_sigma, "diffusion coefficient");
  pde->add_option("--dt", pde_dt, "time step");
  pde->add_option("--seed", pde_seed, "seed of the random velocity and terminal field");
  pde->add_option("--cutoff", pde_cutoff, "terminal low-pass cutoff");
  pde->add_option("--out", pde_out, "CSV output path");

  // fk-compare
  auto* fkc = app.add_subcommand("fk-compare", "Compare Monte Carlo path averages with the spectral solution");
  std::string fk_config, fk_out = "fk-compare";
  int fk_n = 32, fk_probes = 16, fk_refine = 4;
  long fk_paths = 20000;
  double fk_sigma = 0.1;
  std::uint64_t fk_seed = 7;
  fkc->add_option("--config", fk_config, "JSON config (keys of the fk section)");
  fkc->add_option("--n", fk_n);
  fkc->add_option("--sigma", fk_sigma);
  fkc->add_option("--paths", fk_paths);
  fkc->add_option("--probes", fk_probes);
  fkc->add_option("--refine", fk_refine);
  fkc->add_option("--seed", fk_seed);
  fkc->add_option("--out-dir", fk_out, "output directory");

  // train
  auto* trn = app.add_subcommand("train", "Train an ensemble (natural or PGD)");
  std::string tr_config, tr_out = "model.bin", tr_report;
  int tr_epochs = 30;
  bool tr_adv = false;
  std::size_t tr_members = 1;
  double tr_a = 0.1;
  std::uint64_t tr_seed = 1;
  trn->add_option("--config", tr_config, "JSON with data/model/train sections");
  trn->add_option("--epochs", tr_epochs);
  trn->add_flag("--adversarial", tr_adv, "PGD adversarial training");
  trn->add_option("--members", tr_members);
  trn->add_option("--a", tr_a, "noise scale");
  trn->add_option("--seed", tr_seed, "training and initialization seed");
  trn->add_option("--out", tr_out, "checkpoint path");
  trn->add_option("--report", tr_report, "training report JSON (default: stdout)");

  // attack
  auto* atk = app.add_subcommand("attack", "Attack a checkpoint on the test split");
  AttackFlags atk_flags;
  std::string atk_model, atk_data = "synthetic-moons", atk_out;
  atk_flags.add_to(atk);
  atk->add_option("--model", atk_model, "checkpoint")->required();
  atk->add_option("--data", atk_data, "dataset JSON file or source name");
  atk->add_option("--out", atk_out, "report JSON (default: stdout)");

  // evaluate
  auto* evl = app.add_subcommand("evaluate", "Natural and robust accuracy of a checkpoint");
  std::string ev_model, ev_data = "synthetic-moons", ev_out;
  std::vector<std::string> ev_attacks{"fgsm", "ifgsm"};
  int ev_eot = 5;
  evl->add_option("--model", ev_model, "checkpoint")->required();
  evl->add_option("--data", ev_data, "dataset JSON file or source name");
  evl->add_option("--attacks", ev_attacks, "attack kinds with default settings");
  evl->add_option("--eot", ev_eot, "EOT runs for noisy models");
  evl->add_option("--out", ev_out, "report JSON (default: stdout)");

  // blind
  auto* bld = app.add_subcommand("blind", "Transfer attack from an oracle to a target");
  AttackFlags bl_flags;
  std::string bl_target, bl_oracle, bl_data = "synthetic-moons", bl_out;
  bl_flags.add_to(bld);
  bld->add_option("--target", bl_target, "target checkpoint")->required();
  bld->add_option("--oracle", bl_oracle, "oracle checkpoint")->required();
  bld->add_option("--data", bl_data, "dataset JSON file or source name");
  bld->add_option("--out", bl_out, "report JSON (default: stdout)");

  // integrate
  auto* itg = app.add_subcommand("integrate", "Combine separately trained checkpoints into one ensemble");
  std::vector<std::string> it_models;
  std::vector<double> it_weights;
  std::string it_out = "integrated.bin";
  itg->add_option("--models", it_models, "checkpoints")->required();
  itg->add_option("--weights", it_weights, "model weights (default: uniform)");
  itg->add_option("--out", it_out, "output checkpoint");

  // report
  auto* rep = app.add_subcommand("report", "Run an experiment pipeline from a JSON config");
  std::string rep_config, rep_out = "report";
  rep->add_option("--config", rep_config, "experiment config")->required();
  rep->add_option("--out-dir", rep_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    enres::lab::worker_threads();
    if (*pde) {
      const enres::pde::Grid2D grid(pde_n);
      enres::pde::DiffusionConfig d;
      d.sigma = pde_sigma;
      d.dt = pde_dt;
      const auto u0 = enres::pde::solve_convection_diffusion(enres::pde::sample_random_terminal(grid, pde_seed, pde_cutoff),
                                                            enres::pde::sample_random_velocity(grid, pde_seed), d);
      enres::pde::write_field_csv(pde_out, u0, pde_sigma);
      std::cout << json{{"grad_sup_norm", enres::pde::grad_sup_norm(u0)}, {"sup_norm", u0.sup_norm()},
                        {"out", pde_out}}.dump(2)
                << "\n";
    } else if (*fkc) {
      json cfg{{"pipeline", "fk-compare"}, {"fk", load_config(fk_config)}};
      override_key(cfg, fkc, "--n", "fk", "n", fk_n);
      override_key(cfg, fkc, "--sigma", "fk", "sigma", fk_sigma);
      override_key(cfg, fkc, "--paths", "fk", "paths", fk_paths);
      override_key(cfg, fkc, "--probes", "fk", "probes", fk_probes);
      override_key(cfg, fkc, "--refine", "fk", "refine", fk_refine);
      override_key(cfg, fkc, "--seed", "fk", "seed", fk_seed);
      const json report = enres::lab::run_experiment(enres::lab::parse_experiment_config(cfg), fk_out);
      std::cout << json{{"max_abs_err", report["max_abs_err"]}, {"max_err_over_stderr", report["max_err_over_stderr"]}}.dump(2)
                << "\n";
    } else if (*trn) {
      json cfg = load_config(tr_config);
      for (const char* s : {"data", "model", "train"})
        if (!cfg.contains(s)) cfg[s] = json::object();
      override_key(cfg, trn, "--epochs", "train", "epochs", tr_epochs);
      override_key(cfg, trn, "--adversarial", "train", "adversarial", tr_adv);
      override_key(cfg, trn, "--members", "model", "members", tr_members);
      override_key(cfg, trn, "--a", "model", "a", tr_a);
      override_key(cfg, trn, "--seed", "train", "seed", tr_seed);
      override_key(cfg, trn, "--seed", "model", "seed", tr_seed);
      const auto data_spec = enres::lab::parse_dataset_spec(cfg["data"]);
      const auto model_cfg = enres::lab::parse_model_config(cfg["model"]);
      const auto train_cfg = enres::lab::parse_train_config(cfg["train"]);
      for (const auto& [key, value] : cfg.items()) {
        if (key != "data" && key != "model" && key != "train") throw enres::ConfigError("unknown config key '" + key + "'");
      }
      const auto data = enres::lab::load_dataset(data_spec);
      const auto result = enres::lab::train(model_cfg.build(data.train.x.dim(1), data.classes), data, train_cfg);
      enres::lab::save_checkpoint(enres::lab::Checkpoint{result.model, result.val_accuracy}, fs::path(tr_out));
      write_json(tr_report, json{{"val_accuracy", result.val_accuracy},
                                 {"best_epoch", result.best_epoch},
                                 {"val_history", result.val_history},
                                 {"loss_history", result.loss_history},
                                 {"checkpoint", tr_out}});
    } else if (*atk) {
      auto model = enres::lab::load_checkpoint(fs::path(atk_model)).model;
      const auto data = load_data_arg(atk_data);
      const std::vector<enres::attack::AttackSpec> specs{atk_flags.spec()};
      const auto report = enres::lab::evaluate(model, data.test, specs, enres::lab::eval_key);
      write_json(atk_out, enres::lab::report_to_json(report));
    } else if (*evl) {
      auto model = enres::lab::load_checkpoint(fs::path(ev_model)).model;
      const auto data = load_data_arg(ev_data);
      std::vector<enres::attack::AttackSpec> specs;
      for (const auto& k : ev_attacks) specs.push_back(enres::lab::parse_attack_spec(json{{"kind", k}, {"eot", ev_eot}}));
      const auto report = enres::lab::evaluate(model, data.test, specs, enres::lab::eval_key);
      write_json(ev_out, enres::lab::report_to_json(report));
    } else if (*bld) {
      auto target = enres::lab::load_checkpoint(fs::path(bl_target)).model;
      auto oracle = enres::lab::load_checkpoint(fs::path(bl_oracle)).model;
      const auto data = load_data_arg(bl_data);
      const auto report = enres::lab::evaluate_blind(target, oracle, fs::path(bl_oracle).stem().string(), data.test,
                                                     bl_flags.spec(), enres::lab::eval_key);
      write_json(bl_out, enres::lab::report_to_json(report));
    } else if (*itg) {
      std::vector<enres::net::EnResNetModel> models;
      for (const auto& p : it_models) models.push_back(enres::lab::load_checkpoint(fs::path(p)).model);
      if (it_weights.empty()) it_weights.assign(models.size(), 1.0 / static_cast<double>(models.size()));
      const auto merged = enres::net::integrate_separate(models, it_weights);
      enres::lab::save_checkpoint(enres::lab::Checkpoint{merged, std::nullopt}, fs::path(it_out));
      std::cout << enres::net::spec_record(merged);
    } else if (*rep) {
      const auto cfg = enres::lab::parse_experiment_config(enres::lab::read_config_file(rep_config));
      enres::lab::run_experiment(cfg, rep_out);
      std::cout << (fs::path(rep_out) / "report.json").string() << "\n";
    }
  } catch (const enres::ConfigError& e) {
    std::fprintf(stderr, "enresnet: config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "enresnet: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
