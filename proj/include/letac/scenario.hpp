#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "letac/controllers.hpp"
#include "letac/dataset.hpp"
#include "letac/sim.hpp"

namespace letac {

enum class ControllerKind { letac, pd, mpc, openloop };

inline ControllerKind controller_kind_from_string(const std::string& s) {
  if (s == "letac") return ControllerKind::letac;
  if (s == "pd") return ControllerKind::pd;
  if (s == "mpc") return ControllerKind::mpc;
  if (s == "openloop") return ControllerKind::openloop;
  throw std::invalid_argument("unknown controller '" + s + "'");
}

inline std::string to_string(ControllerKind k) {
  switch (k) {
    case ControllerKind::letac: return "letac";
    case ControllerKind::pd: return "pd";
    case ControllerKind::mpc: return "mpc";
    case ControllerKind::openloop: return "openloop";
  }
  return "?";
}

struct ScenarioConfig {
  std::string name;
  ObjectModel object;
  DisturbanceProfile profile;
  double duration = 20.0;  // s
  double p_start_margin = 3.0;  // mm above the object width
  double sim_dt = 1.0 / 300.0;  // common multiple of the 25 Hz and 60 Hz loops
  double convergence_band = 0.25;  // mm (half-width)
  double convergence_hold = 1.0;   // s
  double drop_slip = 10.0;         // mm cumulative slip
  double drop_contact_loss = 0.5;  // s without contact while loaded
  double drop_load_min = 0.5;      // N, load above which lost contact counts
  double force_limit = 15.0;       // N, reporting threshold
  std::uint64_t seed = 0;

  double p_start() const { return object.width_0 + p_start_margin; }
};

// Builds the named scenario with the seed-dependent disturbance realization
// (slam magnitudes, impulse sizes).
inline ScenarioConfig make_scenario(const std::string& name, std::uint64_t seed) {
  ScenarioConfig sc;
  sc.name = name;
  sc.seed = seed;
  Rng rng(seed ^ 0xd6e8feb86659fd93ull);
  if (name == "grasp_transport") {
    sc.object = make_material("interp_mid");
    sc.object.mass = 0.45;
    sc.profile.kind = DisturbanceProfile::Kind::transport;
    sc.profile.peak_acceleration = 3.82;
    sc.profile.peak_velocity = 1.0;
    sc.profile.omega = 0.4;
    sc.profile.t_start = 4.0;
    sc.profile.duration = 18.0;
    sc.duration = 24.0;
  } else if (name == "shaking") {
    sc.object = make_material("rigid");
    sc.object.name = "bead_box";
    sc.object.width_0 = 40.0;
    sc.object.stiffness = 12.0;
    sc.object.mu = 0.45;
    sc.object.mass = 0.45;
    sc.object.contact_force_scale = 6.0;
    sc.object.imprint_sharpness = 2.5;
    sc.object.texture_scale = 0.8;
    sc.object.taper = 0.1;
    sc.object.loose_mass_fraction = 0.5;
    sc.profile.kind = DisturbanceProfile::Kind::shaking;
    sc.profile.peak_acceleration = 8.15;
    sc.profile.peak_velocity = 1.4;
    sc.profile.omega = 5.91;
    sc.profile.t_start = 4.0;
    sc.profile.duration = 8.0;
    sc.duration = 16.0;
    // Loose contents slam the walls at every shake reversal.
    constexpr double kPi = 3.14159265358979323846;
    const double base = sc.object.loose_mass_fraction * sc.object.mass *
                        sc.profile.peak_acceleration;
    for (double u = 0.5 * kPi / sc.profile.omega; u < sc.profile.duration;
         u += kPi / sc.profile.omega) {
      SlamEvent ev;
      ev.t = sc.profile.t_start + u;
      ev.F_peak = base * rng.uniform(1.15, 1.8);
      ev.duration = 0.04;
      sc.profile.slams.push_back(ev);
    }
  } else if (name == "collision") {
    sc.object = make_material("rigid");
    sc.object.name = "box";
    sc.object.width_0 = 35.0;
    sc.object.stiffness = 12.0;
    sc.object.mu = 0.5;
    sc.object.mass = 0.45;
    sc.object.contact_force_scale = 5.0;
    sc.object.imprint_sharpness = 2.5;
    sc.object.texture_scale = 0.8;
    sc.object.taper = 0.45;
    sc.profile.kind = DisturbanceProfile::Kind::collision;
    sc.profile.peak_acceleration = 0.65;
    sc.profile.peak_velocity = 0.3;
    sc.profile.omega = 0.8;
    sc.profile.t_start = 4.0;
    sc.profile.duration = 10.0;
    sc.duration = 16.0;
    // One impact plus two weakening aftershocks; the impulse realization
    // varies with the seed.
    sc.profile.impulse_magnitude = rng.uniform(0.26, 0.83);
    const double F_main = sc.profile.impulse_magnitude / 0.04;
    const double offsets[3] = {1.0, 1.6, 2.2};
    const double scales[3] = {1.0, 0.55, 0.3};
    for (int i = 0; i < 3; ++i) {
      SlamEvent ev;
      ev.t = sc.profile.t_start + offsets[i];
      ev.F_peak = F_main * scales[i];
      ev.duration = 0.04;
      sc.profile.slams.push_back(ev);
    }
  } else if (name == "soft_object") {
    sc.object = make_material("gel");
    sc.profile.kind = DisturbanceProfile::Kind::transport;
    sc.profile.peak_acceleration = 2.0;
    sc.profile.peak_velocity = 0.5;
    sc.profile.omega = 0.4;
    sc.profile.t_start = 4.0;
    sc.profile.duration = 14.0;
    sc.duration = 26.0;
  } else if (name == "egg_stress") {
    sc.object = make_material("egg");
    sc.profile.kind = DisturbanceProfile::Kind::transport;
    sc.profile.peak_acceleration = 1.0;
    sc.profile.peak_velocity = 0.3;
    sc.profile.omega = 0.4;
    sc.profile.t_start = 4.0;
    sc.profile.duration = 6.0;
    sc.duration = 12.0;
  } else {
    throw std::invalid_argument("unknown scenario '" + name + "'");
  }
  return sc;
}

inline std::vector<std::string> scenario_names() {
  return {"grasp_transport", "shaking", "collision", "soft_object", "egg_stress"};
}

struct CurvePoint {
  double t = 0.0;
  double p = 0.0;
  double v = 0.0;
  double ref = 0.0;
  double c = 0.0;
  double d = 0.0;
  double F_normal = 0.0;
  double F_ext = 0.0;
  int slipping = 0;
  double solve_ms = 0.0;
};

struct RunMetrics {
  std::string controller;
  std::string scenario;
  std::uint64_t seed = 0;
  bool drop_occurred = false;
  bool converged = false;
  double convergence_time = -1.0;  // s, -1 when never converged
  double mean_force = 0.0;         // N, after convergence
  double std_force = 0.0;
  double final_width = 0.0;        // mm
  double steady_width = 0.0;       // mm, mean over the last 2 s
  double prevailing_load = 0.0;    // N, mean |F_ext| over the last 2 s
  double oracle_p_slip = 0.0;      // mm, slip_width at the prevailing load
  double steady_width_error = 0.0;  // mm, |steady_width - oracle_p_slip|
  double max_width_error = 0.0;     // mm, max |p - pointwise oracle| post-convergence
  double fluctuation_band = 0.0;    // mm, half-range of width over the last 2 s
  double cum_slip = 0.0;            // mm
  bool limit_hit = false;           // touched the width floor or force limit
  bool solver_flag = false;         // any solver failure
  bool bound_violation = false;     // any saturation-bound breach
  double solve_ms_mean = 0.0;
  double solve_ms_p99 = 0.0;
  double solve_ms_max = 0.0;
  long control_steps = 0;
};

struct RunResult {
  RunMetrics metrics;
  std::vector<CurvePoint> curve;
};

namespace detail {
inline std::uint64_t frame_seed(std::uint64_t seed, long step) {
  std::uint64_t x = seed ^ (0x517cc1b727220a95ull * static_cast<std::uint64_t>(step + 1));
  x ^= x >> 32;
  x *= 0xd6e8feb86659fd93ull;
  x ^= x >> 32;
  return x;
}
}  // namespace detail

// Closed-loop run of the chosen controller against the scenario's world at
// the controller's native rate (25 Hz for letac, 60 Hz for the baselines),
// with the world stepped at sim_dt.
inline RunResult run_scenario(const ScenarioConfig& sc, ControllerKind kind,
                              const Checkpoint* ck,
                              const SimParams& sp = SimParams{},
                              const DeploymentConfig& letac_cfg = DeploymentConfig{},
                              const PDConfig& pd_cfg = PDConfig{},
                              const MPCBaselineConfig& mpc_cfg = MPCBaselineConfig{},
                              const OpenLoopConfig& ol_cfg = OpenLoopConfig{}) {
  sc.object.validate();
  sc.profile.validate();
  std::unique_ptr<LetacController> letac;
  std::unique_ptr<PDController> pd;
  std::unique_ptr<MpcBaselineController> mpc;
  std::unique_ptr<OpenLoopController> ol;
  double ctl_dt = 0.0;
  SaturationBounds bounds;
  switch (kind) {
    case ControllerKind::letac: {
      if (ck == nullptr) throw std::invalid_argument("run_scenario: letac requires a checkpoint");
      DeploymentConfig cfg = letac_cfg;
      letac = std::make_unique<LetacController>(*ck, cfg);
      ctl_dt = cfg.dt;
      bounds = cfg.bounds;
      break;
    }
    case ControllerKind::pd: {
      pd = std::make_unique<PDController>(pd_cfg);
      ctl_dt = pd_cfg.dt;
      break;
    }
    case ControllerKind::mpc: {
      mpc = std::make_unique<MpcBaselineController>(mpc_cfg);
      ctl_dt = mpc_cfg.dt;
      bounds = mpc_cfg.bounds;
      break;
    }
    case ControllerKind::openloop: {
      OpenLoopConfig cfg = ol_cfg;
      ol = std::make_unique<OpenLoopController>(cfg);
      ctl_dt = cfg.dt;
      break;
    }
  }
  const long ctl_every = std::lround(ctl_dt / sc.sim_dt);
  if (ctl_every < 1 || std::abs(ctl_every * sc.sim_dt - ctl_dt) > 1e-12) {
    throw std::invalid_argument("run_scenario: control period not a multiple of sim_dt");
  }
  const long log_every = std::lround((1.0 / 60.0) / sc.sim_dt);

  WorldState w = make_world(sc.object, sc.p_start());
  double ref = sc.p_start();
  const long n_steps = std::lround(sc.duration / sc.sim_dt);

  RunResult result;
  RunMetrics& m = result.metrics;
  m.controller = to_string(kind);
  m.scenario = sc.name;
  m.seed = sc.seed;

  std::vector<double> solve_times;
  std::deque<std::pair<double, double>> window;  // (t, p) trailing convergence window
  bool motion_started = false;
  bool had_contact = false;
  double loaded_loss_time = 0.0;
  std::vector<CurvePoint> post_conv;  // logged points after convergence
  double last_solve_ms = 0.0;
  double last_c = 0.0, last_d = 0.0;

  for (long step = 0; step < n_steps; ++step) {
    const double t = static_cast<double>(step) * sc.sim_dt;
    if (step % ctl_every == 0) {
      const TactileObservation obs =
          observe(sc.object, w, detail::frame_seed(sc.seed, step), sp);
      last_c = obs.c;
      last_d = obs.d;
      const auto t0 = std::chrono::steady_clock::now();
      ControlOutput out;
      switch (kind) {
        case ControllerKind::letac: out = letac->step(obs, w.gripper); break;
        case ControllerKind::pd: out = pd->step(obs, w.gripper); break;
        case ControllerKind::mpc: out = mpc->step(obs, w.gripper); break;
        case ControllerKind::openloop: out = ol->step(w.F_normal, w.gripper); break;
      }
      const auto t1 = std::chrono::steady_clock::now();
      last_solve_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
      solve_times.push_back(last_solve_ms);
      ++m.control_steps;
      if (!out.solver_ok) m.solver_flag = true;
      ref = out.width_ref;
      if (kind == ControllerKind::letac || kind == ControllerKind::mpc) {
        const double tol = 1e-7;
        if (ref < bounds.p_min - tol || ref > bounds.p_max + tol ||
            out.a0 < bounds.a_min - tol || out.a0 > bounds.a_max + tol) {
          m.bound_violation = true;
        }
      }
    }
    w = step_world(sc.object, w, ref, sc.profile, t, sc.sim_dt, sp);
    if (std::abs(w.gripper.v) > 15.0 + 1e-7) m.bound_violation = true;
    if (w.F_normal > 0.0) had_contact = true;
    if (had_contact && w.F_normal <= 0.0 && w.F_ext > sc.drop_load_min) {
      loaded_loss_time += sc.sim_dt;
    } else if (w.F_normal > 0.0) {
      loaded_loss_time = 0.0;
    }
    if (!m.drop_occurred &&
        (w.slip_total > sc.drop_slip || loaded_loss_time > sc.drop_contact_loss)) {
      m.drop_occurred = true;
    }
    if (w.F_normal >= sc.force_limit || w.gripper.p <= bounds.p_min + 0.25) {
      m.limit_hit = true;
    }

    if (std::abs(w.gripper.p - sc.p_start()) > 1.0) motion_started = true;
    if (step % log_every == 0) {
      CurvePoint cp;
      cp.t = w.t;
      cp.p = w.gripper.p;
      cp.v = w.gripper.v;
      cp.ref = ref;
      cp.c = last_c;
      cp.d = last_d;
      cp.F_normal = w.F_normal;
      cp.F_ext = w.F_ext;
      cp.slipping = w.slipping ? 1 : 0;
      cp.solve_ms = last_solve_ms;
      result.curve.push_back(cp);

      window.emplace_back(w.t, w.gripper.p);
      while (!window.empty() && window.front().first < w.t - sc.convergence_hold) {
        window.pop_front();
      }
      if (!m.converged && motion_started &&
          w.t >= sc.convergence_hold + sc.sim_dt * static_cast<double>(log_every)) {
        double lo = window.front().second, hi = lo;
        for (const auto& [wt, wp] : window) {
          lo = std::min(lo, wp);
          hi = std::max(hi, wp);
        }
        if (hi - lo <= 2.0 * sc.convergence_band &&
            window.front().first <= w.t - sc.convergence_hold + 2.0 / 60.0) {
          m.converged = true;
          m.convergence_time = w.t;
        }
      }
      if (m.converged) post_conv.push_back(cp);
    }
  }

  m.final_width = w.gripper.p;
  m.cum_slip = w.slip_total;

  if (!solve_times.empty()) {
    std::vector<double> sorted = solve_times;
    std::sort(sorted.begin(), sorted.end());
    double total = 0.0;
    for (double v : sorted) total += v;
    m.solve_ms_mean = total / static_cast<double>(sorted.size());
    m.solve_ms_p99 = sorted[static_cast<std::size_t>(
        std::min<double>(static_cast<double>(sorted.size()) - 1.0,
                         std::ceil(0.99 * static_cast<double>(sorted.size())) - 1.0))];
    m.solve_ms_max = sorted.back();
  }

  if (m.converged && !post_conv.empty()) {
    double fsum = 0.0, fsq = 0.0;
    for (const CurvePoint& cp : post_conv) {
      fsum += cp.F_normal;
      const double oracle_t = slip_width(sc.object, cp.F_ext);
      m.max_width_error = std::max(m.max_width_error, std::abs(cp.p - oracle_t));
    }
    const double n = static_cast<double>(post_conv.size());
    m.mean_force = fsum / n;
    for (const CurvePoint& cp : post_conv) {
      fsq += (cp.F_normal - m.mean_force) * (cp.F_normal - m.mean_force);
    }
    m.std_force = std::sqrt(fsq / n);

    const double t_tail = w.t - 2.0;
    double psum = 0.0, lsum = 0.0, plo = 1e300, phi = -1e300;
    long cnt = 0;
    for (const CurvePoint& cp : post_conv) {
      if (cp.t < t_tail) continue;
      psum += cp.p;
      lsum += cp.F_ext;
      plo = std::min(plo, cp.p);
      phi = std::max(phi, cp.p);
      ++cnt;
    }
    if (cnt > 0) {
      m.steady_width = psum / static_cast<double>(cnt);
      m.prevailing_load = lsum / static_cast<double>(cnt);
      m.oracle_p_slip = slip_width(sc.object, m.prevailing_load);
      m.steady_width_error = std::abs(m.steady_width - m.oracle_p_slip);
      m.fluctuation_band = 0.5 * (phi - plo);
    }
  }
  return result;
}

inline void save_curves_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_curves_csv: cannot open " + path);
  out << "t,p,v,ref,c,d,F_normal,F_ext,slipping,solve_ms\n";
  for (const CurvePoint& cp : curve) {
    out << detail::format_g17(cp.t) << ',' << detail::format_g17(cp.p) << ','
        << detail::format_g17(cp.v) << ',' << detail::format_g17(cp.ref) << ','
        << detail::format_g17(cp.c) << ',' << detail::format_g17(cp.d) << ','
        << detail::format_g17(cp.F_normal) << ',' << detail::format_g17(cp.F_ext) << ','
        << cp.slipping << ',' << detail::format_g17(cp.solve_ms) << '\n';
  }
  if (!out) throw std::runtime_error("save_curves_csv: write failed for " + path);
}

}  // namespace letac
