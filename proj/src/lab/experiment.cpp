#include "enres/lab/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <set>

#include "enres/common/error.hpp"
#include "enres/fk/feynman_kac.hpp"
#include "enres/lab/checkpoint.hpp"
#include "enres/lab/evaluate.hpp"
#include "enres/pde/field_io.hpp"
#include "enres/pde/field_pde.hpp"

namespace enres::lab {

namespace {

/// One JSON object whose keys must all be consumed.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw ConfigError("config key '" + where_ + "' must be an object");
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!j_.contains(key)) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + path(key) + "' has the wrong type: " + e.what());
    }
  }

  template <typename T>
  T require(const std::string& key) {
    if (!j_.contains(key)) throw ConfigError("config key '" + path(key) + "' is required");
    return get<T>(key, T{});
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const json& sub(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }

  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError("unknown config key '" + path(key) + "'");
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> used_;
};

/// Runs `fn` and rewraps parameter errors as config errors for `where`.
template <typename Fn>
void check(const std::string& where, Fn&& fn) {
  try {
    fn();
  } catch (const ParameterError& e) {
    throw ConfigError("invalid config '" + where + "': " + e.what());
  }
}

net::NoiseMode parse_noise_mode(const std::string& s, const std::string& where) {
  if (s == "scaled") return net::NoiseMode::scaled;
  if (s == "fixed") return net::NoiseMode::fixed;
  throw ConfigError("config key '" + where + "' must be \"scaled\" or \"fixed\", got \"" + s + "\"");
}

PdeFigureConfig parse_pde_figure(const json& j, const std::string& where) {
  Section s(j, where);
  PdeFigureConfig c;
  c.n = s.get("n", c.n);
  c.sigmas = s.get("sigmas", c.sigmas);
  c.dt = s.get("dt", c.dt);
  c.terminal_cutoff = s.get("terminal_cutoff", c.terminal_cutoff);
  c.seed = s.get("seed", c.seed);
  s.finish();
  check(where, [&] {
    pde::Grid2D grid(c.n);
    if (c.sigmas.empty()) throw ParameterError("sigmas must not be empty");
    for (double sigma : c.sigmas) {
      pde::DiffusionConfig d;
      d.sigma = sigma;
      d.dt = c.dt;
      d.validate();
    }
    if (c.terminal_cutoff < 1 || c.terminal_cutoff > c.n / 2) throw ParameterError("terminal_cutoff outside [1, n/2]");
  });
  return c;
}

FkCompareConfig parse_fk_compare(const json& j, const std::string& where) {
  Section s(j, where);
  FkCompareConfig c;
  c.n = s.get("n", c.n);
  c.sigma = s.get("sigma", c.sigma);
  c.paths = s.get("paths", c.paths);
  c.probes = s.get("probes", c.probes);
  c.dt = s.get("dt", c.dt);
  c.terminal_cutoff = s.get("terminal_cutoff", c.terminal_cutoff);
  c.refine = s.get("refine", c.refine);
  c.seed = s.get("seed", c.seed);
  s.finish();
  check(where, [&] {
    pde::Grid2D grid(c.n);
    fk::SDEConfig sde;
    sde.sigma = c.sigma;
    sde.dt = c.dt;
    sde.n_paths = c.paths;
    sde.validate();
    fk::lattice_probe_points(grid, c.probes);
    if (c.refine < 1) throw ParameterError("refine must be >= 1");
    if (c.terminal_cutoff < 1 || c.terminal_cutoff > c.n / 2) throw ParameterError("terminal_cutoff outside [1, n/2]");
  });
  return c;
}

std::vector<attack::AttackSpec> parse_attack_list(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError("config key '" + where + "' must be an array");
  std::vector<attack::AttackSpec> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(parse_attack_spec(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

json run_pde_figure(const PdeFigureConfig& c, const std::filesystem::path& dir) {
  const pde::Grid2D grid(c.n);
  const pde::VelocityField velocity = pde::sample_random_velocity(grid, c.seed);
  const pde::ScalarField2D terminal = pde::sample_random_terminal(grid, c.seed, c.terminal_cutoff);
  json rows = json::array();
  std::string summary = "sigma,grad_sup_norm,sup_norm\n";
  bool decreasing = true;
  double previous = 0.0;
  for (std::size_t i = 0; i < c.sigmas.size(); ++i) {
    pde::DiffusionConfig d;
    d.sigma = c.sigmas[i];
    d.dt = c.dt;
    const pde::ScalarField2D u0 = pde::solve_convection_diffusion(terminal, velocity, d);
    const std::string file = "field_" + std::to_string(i) + ".csv";
    pde::write_field_csv((dir / file).string(), u0, c.sigmas[i]);
    const double g = pde::grad_sup_norm(u0);
    if (i > 0 && !(g < previous)) decreasing = false;
    previous = g;
    rows.push_back({{"sigma", c.sigmas[i]}, {"grad_sup_norm", g}, {"sup_norm", u0.sup_norm()}, {"field_csv", file}});
    char line[128];
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g\n", c.sigmas[i], g, u0.sup_norm());
    summary += line;
  }
  write_text(dir / "summary.csv", summary);
  return {{"pipeline", "pde-figure"}, {"n", c.n}, {"seed", c.seed}, {"rows", rows},
          {"grad_sup_norm_strictly_decreasing", decreasing}};
}

json run_fk_compare(const FkCompareConfig& c, const std::filesystem::path& dir) {
  const pde::Grid2D grid(c.n);
  const pde::VelocityField velocity = pde::sample_random_velocity(grid, c.seed);
  const pde::ScalarField2D terminal = pde::sample_random_terminal(grid, c.seed, c.terminal_cutoff);
  fk::SDEConfig sde;
  sde.dt = c.dt;
  sde.n_paths = c.paths;
  sde.seed = c.seed;
  pde::DiffusionConfig d;
  d.dt = c.dt;
  const auto rep = fk::compare_with_pde(fk::lattice_probe_points(grid, c.probes), terminal, velocity, c.sigma, sde,
                                        d, c.refine);
  std::string csv = "x,y,pde,mc,std_error,abs_err,err_over_stderr\n";
  json rows = json::array();
  for (const auto& r : rep.rows) {
    char line[256];
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.point[0], r.point[1],
                  r.pde_value, r.mc.mean, r.mc.std_error, r.abs_err, r.err_over_stderr);
    csv += line;
    rows.push_back({{"x", r.point[0]},
                    {"y", r.point[1]},
                    {"pde", r.pde_value},
                    {"mc", r.mc.mean},
                    {"std_error", r.mc.std_error},
                    {"abs_err", r.abs_err},
                    {"err_over_stderr", r.err_over_stderr}});
  }
  write_text(dir / "probes.csv", csv);
  return {{"pipeline", "fk-compare"}, {"n", c.n},        {"sigma", c.sigma},
          {"paths", c.paths},         {"seed", c.seed},  {"max_abs_err", rep.max_abs_err},
          {"max_err_over_stderr", rep.max_err_over_stderr}, {"rows", rows}};
}

std::string history_csv(const TrainResult& r, const TrainConfig& cfg) {
  std::string csv = "epoch,lr,train_loss,val_accuracy\n";
  for (std::size_t e = 0; e < r.val_history.size(); ++e) {
    char line[160];
    if (e == 0) {
      std::snprintf(line, sizeof line, "0,,,%.17g\n", r.val_history[0]);
    } else {
      std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", e, cfg.lr_at_epoch(static_cast<int>(e - 1)),
                    r.loss_history[e - 1], r.val_history[e]);
    }
    csv += line;
  }
  return csv;
}

json train_summary(const TrainResult& r) {
  return {{"val_accuracy", r.val_accuracy}, {"best_epoch", r.best_epoch}, {"weights", r.model.weights}};
}

json run_train_eval(const ExperimentConfig& c, const std::filesystem::path& dir, json& timing) {
  const Dataset data = load_dataset(c.data);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(c.model.build(data.train.x.dim(1), data.classes), data, c.train);
  timing["train_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  save_checkpoint(Checkpoint{r.model, r.val_accuracy}, dir / "model.bin");
  write_text(dir / "history.csv", history_csv(r, c.train));
  net::EnResNetModel model = r.model.clone();
  const EvalReport ev = evaluate(model, data.test, c.attacks, c.eval_seed);
  timing["eval_seconds"] = ev.seconds;
  json out{{"pipeline", "train-eval"}, {"train", train_summary(r)}, {"eval", report_to_json(ev)}};
  out["checkpoint"] = "model.bin";
  return out;
}

json run_weight_learning(const ExperimentConfig& c, const std::filesystem::path& dir, json& timing) {
  TrainConfig cfg = c.train;
  cfg.learn_weights = true;
  const Dataset data = load_dataset(c.data);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult r = train(c.model.build(data.train.x.dim(1), data.classes), data, cfg);
  timing["train_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string csv = "epoch";
  for (std::size_t k = 0; k < c.model.members; ++k) csv += ",w" + std::to_string(k);
  csv += "\n";
  for (std::size_t e = 0; e < r.weight_history.size(); ++e) {
    csv += std::to_string(e + 1);
    for (double w : r.weight_history[e]) {
      char buf[40];
      std::snprintf(buf, sizeof buf, ",%.17g", w);
      csv += buf;
    }
    csv += "\n";
  }
  write_text(dir / "weights.csv", csv);
  write_text(dir / "history.csv", history_csv(r, cfg));
  save_checkpoint(Checkpoint{r.model, r.val_accuracy}, dir / "model.bin");
  net::EnResNetModel model = r.model.clone();
  const EvalReport ev = evaluate(model, data.test, c.attacks, c.eval_seed);
  timing["eval_seconds"] = ev.seconds;
  return {{"pipeline", "weight-learning"},
          {"train", train_summary(r)},
          {"final_weights", r.weight_history.empty() ? r.model.weights : r.weight_history.back()},
          {"eval", report_to_json(ev)}};
}

json run_blind_matrix(const ExperimentConfig& c, const std::filesystem::path& dir, json& timing) {
  const Dataset data = load_dataset(c.data);
  const attack::AttackSpec spec = c.attacks.front();
  std::vector<net::EnResNetModel> trained;
  json models = json::object();
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& m : c.models) {
    const TrainResult r = train(m.model.build(data.train.x.dim(1), data.classes), data, m.train);
    save_checkpoint(Checkpoint{r.model, r.val_accuracy}, dir / (m.name + ".bin"));
    trained.push_back(r.model);
    models[m.name] = train_summary(r);
  }
  timing["train_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::vector<attack::AttackSpec> one{spec};
  json blind = json::object();
  std::string csv = "target,oracle,accuracy\n";
  for (std::size_t t = 0; t < trained.size(); ++t) {
    const EvalReport wb = evaluate(trained[t], data.test, one, c.eval_seed);
    models[c.models[t].name]["eval"] = report_to_json(wb);
    csv += c.models[t].name + "," + c.models[t].name + "," + json(wb.a_rob.begin()->second).dump() + "\n";
    for (std::size_t o = 0; o < trained.size(); ++o) {
      if (o == t) continue;
      const EvalReport br =
          evaluate_blind(trained[t], trained[o], c.models[o].name, data.test, spec, c.eval_seed);
      const double acc = br.blind->begin()->second;
      blind[c.models[t].name][c.models[o].name] = acc;
      csv += c.models[t].name + "," + c.models[o].name + "," + json(acc).dump() + "\n";
    }
  }
  write_text(dir / "matrix.csv", csv);
  return {{"pipeline", "blind-matrix"}, {"attack", spec.label()}, {"models", models}, {"blind", blind}};
}

}  // namespace

net::EnResNetModel ModelConfig::build(std::size_t in_channels, std::size_t classes) const {
  return net::EnResNetModel::create(members, in_channels, width, blocks, classes, noise, seed);
}

DatasetSpec parse_dataset_spec(const json& j, const std::string& where) {
  Section s(j, where);
  DatasetSpec d;
  d.source = parse_data_source(s.get<std::string>("source", to_string(d.source)));
  d.n_train = s.get("n_train", d.n_train);
  d.n_val = s.get("n_val", d.n_val);
  d.n_test = s.get("n_test", d.n_test);
  d.seed = s.get("seed", d.seed);
  d.classes = s.get("classes", d.classes);
  d.geometry_noise = s.get("geometry_noise", d.geometry_noise);
  d.texture_features = s.get("texture_features", d.texture_features);
  d.texture_shift = s.get("texture_shift", d.texture_shift);
  d.texture_noise = s.get("texture_noise", d.texture_noise);
  for (const auto& f : s.get("train_files", std::vector<std::string>{})) d.train_files.emplace_back(f);
  d.test_file = s.get<std::string>("test_file", "");
  d.downscale = s.get("downscale", d.downscale);
  d.max_records = s.get("max_records", d.max_records);
  s.finish();
  check(where, [&] { d.validate(); });
  return d;
}

ModelConfig parse_model_config(const json& j, const std::string& where) {
  Section s(j, where);
  ModelConfig m;
  m.members = s.get("members", m.members);
  m.width = s.get("width", m.width);
  m.blocks = s.get("blocks", m.blocks);
  m.noise.a = s.get("a", m.noise.a);
  m.noise.mode = parse_noise_mode(s.get<std::string>("noise_mode", "scaled"), s.path("noise_mode"));
  m.noise.active_in_eval = s.get("noise_in_eval", m.noise.active_in_eval);
  m.seed = s.get("seed", m.seed);
  s.finish();
  check(where, [&] {
    if (m.members == 0 || m.width == 0) throw ParameterError("members and width must be >= 1");
    m.noise.validate();
  });
  return m;
}

TrainConfig parse_train_config(const json& j, const std::string& where) {
  Section s(j, where);
  TrainConfig t;
  t.epochs = s.get("epochs", t.epochs);
  t.lr0 = s.get("lr0", t.lr0);
  t.decay_fractions = s.get("decay_fractions", t.decay_fractions);
  t.decay_factor = s.get("decay_factor", t.decay_factor);
  t.batch_size = s.get("batch_size", t.batch_size);
  t.momentum = s.get("momentum", t.momentum);
  t.weight_decay = s.get("weight_decay", t.weight_decay);
  t.adversarial = s.get("adversarial", t.adversarial);
  t.pgd.iters = s.get("pgd_iters", t.pgd.iters);
  t.pgd.alpha = s.get("pgd_alpha", t.pgd.alpha);
  t.pgd.epsilon = s.get("pgd_epsilon", t.pgd.epsilon);
  t.pgd.eot_runs = s.get("pgd_eot", t.pgd.eot_runs);
  t.learn_weights = s.get("learn_weights", t.learn_weights);
  t.lr_w = s.get("lr_w", t.lr_w);
  t.seed = s.get("seed", t.seed);
  s.finish();
  check(where, [&] { t.validate(); });
  return t;
}

attack::AttackSpec parse_attack_spec(const json& j, const std::string& where) {
  Section s(j, where);
  attack::AttackSpec a;
  try {
    a.kind = attack::parse_attack_kind(s.get<std::string>("kind", "ifgsm"));
  } catch (const ParameterError& e) {
    throw ConfigError("config key '" + s.path("kind") + "': " + e.what());
  }
  a.epsilon = s.get("epsilon", a.epsilon);
  a.alpha = s.get("alpha", a.alpha);
  a.iters = s.get("iters", a.iters);
  a.cw_c = s.get("cw_c", a.cw_c);
  a.cw_kappa = s.get("cw_kappa", a.cw_kappa);
  a.cw_steps = s.get("cw_steps", a.cw_steps);
  a.cw_lr = s.get("cw_lr", a.cw_lr);
  a.eot_runs = s.get("eot", a.eot_runs);
  a.random_init = s.get("random_init", a.random_init);
  s.finish();
  check(where, [&] { a.validate(); });
  return a;
}

json report_to_json(const EvalReport& r) {
  json j{{"a_nat", r.a_nat}, {"a_rob", json::object()}, {"n_examples", r.n_examples}};
  for (const auto& [k, v] : r.a_rob) j["a_rob"][k] = v;
  if (r.blind) {
    j["blind"] = json::object();
    for (const auto& [k, v] : *r.blind) j["blind"][k] = v;
  }
  return j;
}

ExperimentConfig parse_experiment_config(const json& j) {
  Section s(j, "");
  ExperimentConfig c;
  c.pipeline = s.require<std::string>("pipeline");
  static const std::set<std::string> known{"pde-figure", "fk-compare", "train-eval", "blind-matrix",
                                           "weight-learning"};
  if (!known.count(c.pipeline)) throw ConfigError("config key 'pipeline' names unknown pipeline '" + c.pipeline + "'");
  c.eval_seed = s.get("eval_seed", c.eval_seed);

  if (c.pipeline == "pde-figure") {
    c.pde = parse_pde_figure(s.has("pde") ? s.sub("pde") : json::object(), "pde");
  } else if (c.pipeline == "fk-compare") {
    c.fk = parse_fk_compare(s.has("fk") ? s.sub("fk") : json::object(), "fk");
  } else {
    c.data = parse_dataset_spec(s.has("data") ? s.sub("data") : json::object(), "data");
    c.attacks = s.has("attacks") ? parse_attack_list(s.sub("attacks"), "attacks") : std::vector<attack::AttackSpec>{};
    if (c.pipeline == "blind-matrix") {
      if (!s.has("models") || !s.sub("models").is_array() || s.sub("models").size() < 2) {
        throw ConfigError("config key 'models' must list at least two models for blind-matrix");
      }
      if (c.attacks.size() != 1) throw ConfigError("config key 'attacks' must hold exactly one attack for blind-matrix");
      const json& list = s.sub("models");
      std::set<std::string> names;
      for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string where = "models[" + std::to_string(i) + "]";
        Section m(list[i], where);
        NamedModel nm;
        nm.name = m.require<std::string>("name");
        if (nm.name.empty() || nm.name.find_first_of("/\\,") != std::string::npos || !names.insert(nm.name).second) {
          throw ConfigError("config key '" + where + ".name' must be unique and free of '/', '\\\\' and ','");
        }
        nm.model = parse_model_config(m.has("model") ? m.sub("model") : json::object(), where + ".model");
        nm.train = parse_train_config(m.has("train") ? m.sub("train") : json::object(), where + ".train");
        m.finish();
        c.models.push_back(std::move(nm));
      }
    } else {
      c.model = parse_model_config(s.has("model") ? s.sub("model") : json::object(), "model");
      c.train = parse_train_config(s.has("train") ? s.sub("train") : json::object(), "train");
    }
  }
  s.finish();
  return c;
}

json run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  json timing = json::object();
  const auto t0 = std::chrono::steady_clock::now();
  json report;
  try {
    if (cfg.pipeline == "pde-figure") {
      report = run_pde_figure(cfg.pde, out_dir);
    } else if (cfg.pipeline == "fk-compare") {
      report = run_fk_compare(cfg.fk, out_dir);
    } else if (cfg.pipeline == "train-eval") {
      report = run_train_eval(cfg, out_dir, timing);
    } else if (cfg.pipeline == "blind-matrix") {
      report = run_blind_matrix(cfg, out_dir, timing);
    } else if (cfg.pipeline == "weight-learning") {
      report = run_weight_learning(cfg, out_dir, timing);
    } else {
      throw ConfigError("unknown pipeline '" + cfg.pipeline + "'");
    }
  } catch (const DivergenceError& e) {
    throw DivergenceError(cfg.pipeline + ": " + e.what(), e.step());
  }
  timing["total_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  timing["threads"] = worker_threads();
  write_text(out_dir / "report.json", dump(report));
  write_text(out_dir / "timing.json", dump(timing));
  return report;
}

json read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
}

int worker_threads() {
  const char* env = std::getenv("ENRESNET_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1) throw ConfigError("ENRESNET_THREADS must be a positive integer, got '" + std::string(env) + "'");
  return static_cast<int>(v);
}

}  // namespace enres::lab
