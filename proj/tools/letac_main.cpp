#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "letac/config.hpp"
#include "letac/scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace letac;

namespace {

// All output files are staged to a sibling .tmp path and moved into place,
// so a crashed run never leaves a truncated file behind.
void commit_tmp(const std::string& tmp, const std::string& final_path) {
  std::error_code ec;
  fs::rename(tmp, final_path, ec);
  if (ec) {
    throw std::runtime_error("cannot move " + tmp + " to " + final_path + ": " + ec.message());
  }
}

void write_text_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot open " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  commit_tmp(tmp, path);
}

std::string hash_hex(std::uint64_t h) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "0x%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int cmd_collect(const std::string& config_path, std::uint64_t seed, std::string out_dir) {
  const Config cfg = load_effective_config(config_path);
  const CollectConfig cc = collect_config_from(cfg);
  if (out_dir.empty()) out_dir = "data";
  fs::create_directories(out_dir);

  const CollectResult res = collect_dataset(cc, seed);

  const std::string train_path = out_dir + "/train.csv";
  const std::string val_path = out_dir + "/val.csv";
  save_samples_csv(train_path + ".tmp", res.dataset.train);
  commit_tmp(train_path + ".tmp", train_path);
  save_samples_csv(val_path + ".tmp", res.dataset.val);
  commit_tmp(val_path + ".tmp", val_path);

  std::string meta;
  meta += "master_seed = " + std::to_string(seed) + "\n";
  meta += "config_hash = " + hash_hex(cfg.hash()) + "\n";
  meta += "train_samples = " + std::to_string(res.dataset.train.size()) + "\n";
  meta += "val_samples = " + std::to_string(res.dataset.val.size()) + "\n";
  for (const MaterialCollection& mc : res.per_material) {
    const std::string pfx = "material." + mc.material + ".";
    meta += pfx + "r2 = " + detail::format_g17(mc.fit.r2) + "\n";
    meta += pfx + "slope = " + detail::format_g17(mc.fit.slope) + "\n";
    meta += pfx + "intercept = " + detail::format_g17(mc.fit.intercept) + "\n";
    meta += pfx + "trials = " + std::to_string(mc.trials_total) + "\n";
    meta += pfx + "degenerate = " + std::to_string(mc.trials_degenerate) + "\n";
    meta += pfx + "regression_labeled = " + std::to_string(mc.trials_regression_labeled) + "\n";
  }
  write_text_atomic(out_dir + "/metadata.txt", meta);

  std::cout << "dataset: " << res.dataset.train.size() << " train / "
            << res.dataset.val.size() << " val samples -> " << out_dir << "\n";
  for (const MaterialCollection& mc : res.per_material) {
    std::cout << "material " << mc.material << ": R^2 = " << mc.fit.r2
              << ", slope = " << mc.fit.slope << ", intercept = " << mc.fit.intercept
              << " (" << mc.trials_total << " trials, " << mc.trials_degenerate
              << " degenerate, " << mc.trials_regression_labeled
              << " regression-labeled)\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, std::uint64_t seed, std::string out,
              const std::string& dataset_dir, bool resume) {
  const Config cfg = load_effective_config(config_path);
  if (out.empty()) out = "letac_checkpoint.txt";

  Dataset ds;
  ds.train = load_samples_csv(dataset_dir + "/train.csv");
  ds.val = load_samples_csv(dataset_dir + "/val.csv");
  if (ds.train.empty()) throw std::invalid_argument("cmd_train: empty training set");

  const std::string state_path = out + ".state";
  const std::string losses_path = out + ".losses.csv";

  TrainResult res;
  std::vector<LossPoint> prior_curve;
  const std::string config_hash = hash_hex(cfg.hash());
  if (resume) {
    const Checkpoint ck = load_checkpoint(out);
    if (ck.config_hash != config_hash) {
      std::cerr << "warning: config hash changed since the checkpoint was written ("
                << ck.config_hash << " -> " << config_hash << ")\n";
    }
    TrainingConfig tc = training_config_from(cfg, ck.train_seed);
    const TrainState st =
        load_train_state(state_path, detail::param_count(ck.layer, ck.encoder));
    prior_curve = load_loss_curve(losses_path);
    res = train(ds, ck.layer, ck.encoder, ck.dims, tc, &st);
  } else {
    const MpcDims dims = dims_from(cfg);
    const TrainingConfig tc = training_config_from(cfg, seed);
    const LayerParams layer = init_layer_params(
        dims, seed ^ 0x6c62272e07bb0142ull, cfg.get_double("model.Q_v", 0.01),
        cfg.get_double("model.Q_a", 1e-4), cfg.get_double("model.P", 5.0),
        cfg.get_double("model.eps", 1e-4));
    const int K = static_cast<int>(ds.train.front().obs.to_vector().size());
    const int hidden = static_cast<int>(cfg.get_int("model.hidden", 64));
    const EncoderParams enc =
        EncoderParams::init(K, hidden, dims.M, seed ^ 0xcbf29ce484222325ull);
    res = train(ds, layer, enc, dims, tc);
  }

  Checkpoint ck = res.checkpoint;
  ck.config_hash = config_hash;
  save_checkpoint(out + ".tmp", ck);
  commit_tmp(out + ".tmp", out);
  save_train_state(state_path + ".tmp", res.final_state);
  commit_tmp(state_path + ".tmp", state_path);

  std::vector<LossPoint> curve = prior_curve;
  curve.insert(curve.end(), res.curve.begin(), res.curve.end());
  save_loss_curve(losses_path + ".tmp", curve);
  commit_tmp(losses_path + ".tmp", losses_path);

  std::cout << "trained " << res.steps << " steps; val loss "
            << detail::format_g17(res.initial_val_loss) << " -> "
            << detail::format_g17(res.final_val_loss) << "\n";
  std::cout << "checkpoint: " << out << "\n";
  return 0;
}

// Deterministic in-contact observation for gradient spot checks.
DatasetSample synthetic_contact_sample(const Checkpoint& ck) {
  Rng rng(0x5eedf00dULL ^ ck.train_seed);
  DatasetSample s;
  s.obs.c = 400.0 + 200.0 * rng.uniform01();
  s.obs.d = 30.0 * rng.uniform01();
  s.obs.depth_mean = 0.2 + 0.3 * rng.uniform01();
  s.obs.depth_max = 2.0 * s.obs.depth_mean;
  s.obs.texture_energy = 0.3 + 0.4 * rng.uniform01();
  const int extra = ck.encoder.input_dim() - TactileObservation::kNamedChannels;
  if (extra < 0) throw std::invalid_argument("checkpoint encoder input narrower than named channels");
  s.obs.extra = Eigen::VectorXd(extra);
  for (int i = 0; i < extra; ++i) s.obs.extra[i] = std::abs(rng.normal());
  s.p_n = 29.0 + rng.uniform01();
  s.v_n = -0.4;
  s.p_slip = s.p_n - 1.0 - rng.uniform01();
  s.material = "synthetic";
  return s;
}

int cmd_verify(const std::string& checkpoint_path) {
  const Checkpoint ck = load_checkpoint(checkpoint_path, /*validate=*/false);
  int rc = 0;
  try {
    ck.validate();
  } catch (const std::exception& e) {
    std::cout << "storage invariant: FAIL (" << e.what() << ")\n";
    return 5;
  }
  std::cout << "storage invariant: ok\n";

  const FeasibilityReport rep = check_feasibility(ck.layer, ck.dims);
  std::cout << "min eigenvalue(H) = " << detail::format_g17(rep.min_eigenvalue_H) << "\n";
  std::cout << "rank(S_bar) = " << rep.rank_S_bar << " / " << ck.dims.N << "\n";
  if (!rep.spd || rep.rank_S_bar != ck.dims.N) {
    std::cout << "feasibility: FAIL\n";
    rc = 5;
  } else {
    std::cout << "feasibility: ok\n";
  }

  const DatasetSample s = synthetic_contact_sample(ck);
  const GradCheckReport g = grad_check(ck.layer, ck.encoder, ck.dims, s);
  std::cout << "max relative gradient error (end to end) = "
            << detail::format_g17(g.max_rel_end_to_end) << "\n";
  std::cout << "max relative gradient error (layer only) = "
            << detail::format_g17(g.max_rel_layer_only) << "\n";
  if (g.max_rel_end_to_end > 1e-3 || g.max_rel_layer_only > 1e-4) {
    std::cout << "gradients: FAIL\n";
    rc = 5;
  } else {
    std::cout << "gradients: ok\n";
  }
  return rc;
}

ordered_json metrics_to_json(const RunMetrics& m) {
  ordered_json j;
  j["controller"] = m.controller;
  j["scenario"] = m.scenario;
  j["seed"] = m.seed;
  j["drop_occurred"] = m.drop_occurred;
  j["converged"] = m.converged;
  j["convergence_time_s"] = m.convergence_time;
  j["mean_force_N"] = m.mean_force;
  j["std_force_N"] = m.std_force;
  j["final_width_mm"] = m.final_width;
  j["steady_width_mm"] = m.steady_width;
  j["prevailing_load_N"] = m.prevailing_load;
  j["oracle_p_slip_mm"] = m.oracle_p_slip;
  j["steady_width_error_mm"] = m.steady_width_error;
  j["max_width_error_mm"] = m.max_width_error;
  j["fluctuation_band_mm"] = m.fluctuation_band;
  j["cum_slip_mm"] = m.cum_slip;
  j["limit_hit"] = m.limit_hit;
  j["solver_flag"] = m.solver_flag;
  j["bound_violation"] = m.bound_violation;
  j["solve_ms_mean"] = m.solve_ms_mean;
  j["solve_ms_p99"] = m.solve_ms_p99;
  j["solve_ms_max"] = m.solve_ms_max;
  j["control_steps"] = m.control_steps;
  return j;
}

int cmd_scenario(const std::string& config_path, const std::string& checkpoint_path,
                 const std::string& scenario_name, const std::string& controller_name,
                 std::uint64_t base_seed, int n_seeds, std::string out_dir, bool timing,
                 int jobs) {
  const Config cfg = load_effective_config(config_path);
  const ControllerKind kind = controller_kind_from_string(controller_name);
  if (out_dir.empty()) out_dir = "runs";
  fs::create_directories(out_dir);

  Checkpoint ck;
  if (kind == ControllerKind::letac) {
    if (checkpoint_path.empty()) {
      throw ConfigError("scenario: --checkpoint is required for the letac controller");
    }
    ck = load_checkpoint(checkpoint_path);
  }
  const DeploymentConfig deploy = deployment_config_from(cfg);
  const PDConfig pd = pd_config_from(cfg);
  const MPCBaselineConfig mpc = mpc_config_from(cfg);
  const OpenLoopConfig ol = openloop_config_from(cfg);
  timing = timing || cfg.get_bool("scenario.timing", false);

  std::vector<RunResult> results(static_cast<std::size_t>(n_seeds));
  std::vector<std::exception_ptr> errs(static_cast<std::size_t>(n_seeds));
  auto run_one = [&](int k) {
    try {
      const std::uint64_t seed_k = base_seed + static_cast<std::uint64_t>(k);
      const ScenarioConfig sc = scenario_from(cfg, scenario_name, seed_k);
      results[static_cast<std::size_t>(k)] =
          run_scenario(sc, kind, kind == ControllerKind::letac ? &ck : nullptr,
                       SimParams{}, deploy, pd, mpc, ol);
    } catch (...) {
      errs[static_cast<std::size_t>(k)] = std::current_exception();
    }
  };
  if (jobs <= 1) {
    for (int k = 0; k < n_seeds; ++k) run_one(k);
  } else {
    std::vector<std::thread> pool;
    std::atomic<int> next{0};
    for (int w = 0; w < jobs; ++w) {
      pool.emplace_back([&] {
        for (int k = next.fetch_add(1); k < n_seeds; k = next.fetch_add(1)) run_one(k);
      });
    }
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errs) {
    if (e) std::rethrow_exception(e);
  }

  ordered_json root;
  root["scenario"] = scenario_name;
  root["controller"] = controller_name;
  root["base_seed"] = base_seed;
  root["seeds"] = n_seeds;
  root["timing_recorded"] = timing;
  ordered_json runs = ordered_json::array();
  int drops = 0, converged = 0;
  for (int k = 0; k < n_seeds; ++k) {
    RunResult& rr = results[static_cast<std::size_t>(k)];
    if (!timing) {
      rr.metrics.solve_ms_mean = rr.metrics.solve_ms_p99 = rr.metrics.solve_ms_max = 0.0;
      for (CurvePoint& cp : rr.curve) cp.solve_ms = 0.0;
    }
    drops += rr.metrics.drop_occurred ? 1 : 0;
    converged += rr.metrics.converged ? 1 : 0;
    runs.push_back(metrics_to_json(rr.metrics));
    const std::string curve_path = out_dir + "/" + scenario_name + "_" + controller_name +
                                   "_seed" + std::to_string(rr.metrics.seed) + "_curves.csv";
    save_curves_csv(curve_path + ".tmp", rr.curve);
    commit_tmp(curve_path + ".tmp", curve_path);
    std::cout << scenario_name << " " << controller_name << " seed " << rr.metrics.seed
              << ": " << (rr.metrics.drop_occurred ? "DROP" : "held") << ", "
              << (rr.metrics.converged ? "converged" : "not converged")
              << ", final width " << rr.metrics.final_width << " mm, slip "
              << rr.metrics.cum_slip << " mm\n";
  }
  root["runs"] = runs;
  root["drop_count"] = drops;
  root["converged_count"] = converged;

  const std::string metrics_path =
      out_dir + "/" + scenario_name + "_" + controller_name + "_metrics.json";
  write_text_atomic(metrics_path, root.dump(2) + "\n");
  std::cout << "drops: " << drops << "/" << n_seeds << ", metrics: " << metrics_path << "\n";
  return 0;
}

void print_bench_line(const std::string& name, const RunMetrics& m, double mean_limit,
                      double p99_limit) {
  const bool ok = m.solve_ms_mean < mean_limit && m.solve_ms_p99 < p99_limit;
  std::cout << name << ": mean " << m.solve_ms_mean << " ms, p99 " << m.solve_ms_p99
            << " ms, max " << m.solve_ms_max << " ms over " << m.control_steps
            << " steps (limits " << mean_limit << "/" << p99_limit << ") "
            << (ok ? "PASS" : "FAIL") << "\n";
}

int cmd_bench(const std::string& config_path, const std::string& checkpoint_path,
              std::uint64_t seed) {
  const Config cfg = load_effective_config(config_path);
  const Checkpoint ck = load_checkpoint(checkpoint_path);
  ScenarioConfig sc = make_scenario("grasp_transport", seed);
  sc.object = make_material("rigid");
  sc.object.mass = 0.45;
  sc.duration = 12.0;

  const DeploymentConfig deploy = deployment_config_from(cfg);
  const PDConfig pd = pd_config_from(cfg);
  const MPCBaselineConfig mpc = mpc_config_from(cfg);
  const OpenLoopConfig ol = openloop_config_from(cfg);

  const RunResult r_letac = run_scenario(sc, ControllerKind::letac, &ck, SimParams{}, deploy, pd, mpc, ol);
  const RunResult r_pd = run_scenario(sc, ControllerKind::pd, nullptr, SimParams{}, deploy, pd, mpc, ol);
  const RunResult r_mpc = run_scenario(sc, ControllerKind::mpc, nullptr, SimParams{}, deploy, pd, mpc, ol);
  const RunResult r_ol = run_scenario(sc, ControllerKind::openloop, nullptr, SimParams{}, deploy, pd, mpc, ol);

  print_bench_line("letac", r_letac.metrics, 40.0, 60.0);
  print_bench_line("pd", r_pd.metrics, 16.7, 16.7);
  print_bench_line("mpc", r_mpc.metrics, 16.7, 16.7);
  print_bench_line("openloop", r_ol.metrics, 16.7, 16.7);
  return 0;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const QpError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 4;
  } catch (const TrainDivergenceError& e) {
    std::cerr << "solver error: " << e.what() << "\n";
    return 4;
  } catch (const std::logic_error& e) {
    std::cerr << "invariant error: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tactile grasping pipeline: data collection, training, verification, closed-loop evaluation"};
  app.require_subcommand(1);

  std::string config_path, out, dataset_dir = "data", checkpoint_path;
  std::string scenario_name, controller_name;
  std::uint64_t seed = 1;
  int n_seeds = 1, jobs = 1;
  bool resume = false, timing = false;

  app.add_option("--config", config_path, "key-value config file overlaying the defaults");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out, "output path (directory or file, per subcommand)");
  app.fallthrough();

  CLI::App* c_collect = app.add_subcommand("collect", "generate the synthetic grasp dataset");

  CLI::App* c_train = app.add_subcommand("train", "train the tactile controller");
  c_train->add_option("--dataset", dataset_dir, "directory holding train.csv/val.csv");
  c_train->add_flag("--resume", resume, "continue from the checkpoint at --out");

  CLI::App* c_verify = app.add_subcommand("verify", "check feasibility and gradients of a checkpoint");
  c_verify->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  CLI::App* c_scenario = app.add_subcommand("scenario", "closed-loop scenario evaluation");
  c_scenario->add_option("--checkpoint", checkpoint_path, "checkpoint file (letac only)");
  c_scenario->add_option("--scenario", scenario_name, "scenario name")
      ->required()
      ->check(CLI::IsMember(scenario_names()));
  c_scenario->add_option("--controller", controller_name, "controller name")
      ->required()
      ->check(CLI::IsMember(std::vector<std::string>{"letac", "pd", "mpc", "openloop"}));
  c_scenario->add_option("--seeds", n_seeds, "number of consecutive seeds to run");
  c_scenario->add_option("--jobs", jobs, "parallel seed fan-out");
  c_scenario->add_flag("--timing", timing, "record wall-clock solve times (breaks byte-identical reruns)");

  CLI::App* c_bench = app.add_subcommand("bench", "per-step solve-time benchmark");
  c_bench->add_option("--checkpoint", checkpoint_path, "checkpoint file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  if (c_collect->parsed()) return guarded([&] { return cmd_collect(config_path, seed, out); });
  if (c_train->parsed()) {
    return guarded([&] { return cmd_train(config_path, seed, out, dataset_dir, resume); });
  }
  if (c_verify->parsed()) return guarded([&] { return cmd_verify(checkpoint_path); });
  if (c_scenario->parsed()) {
    return guarded([&] {
      return cmd_scenario(config_path, checkpoint_path, scenario_name, controller_name, seed,
                          n_seeds, out, timing, jobs);
    });
  }
  if (c_bench->parsed()) {
    return guarded([&] { return cmd_bench(config_path, checkpoint_path, seed); });
  }
  return 2;
}
