#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "letac/encoder.hpp"
#include "letac/rng.hpp"
#include "letac/sim.hpp"

namespace letac {

struct DatasetSample {
  TactileObservation obs;
  double p_n = 0.0;     // mm
  double v_n = 0.0;     // mm/s
  double p_slip = 0.0;  // mm, label
  std::string material;
  int trial_id = -1;
  int frame = 0;
  double t = 0.0;
};

struct TrialFrame {
  double t = 0.0;
  double p = 0.0;
  TactileObservation obs;
  bool slipping = false;
};

struct TrialRecord {
  int trial_id = -1;
  std::string material;
  double dx = 0.0, dy = 0.0;  // mm, leader position increments
  double F_ext = 0.0;         // N
  std::vector<TrialFrame> frames;
  int slip_frame = -1;  // index of the detection frame, -1 if never detected
  double p_slip = std::numeric_limits<double>::quiet_NaN();
  bool labeled = false;
  bool degenerate = false;
};

struct CollectConfig {
  int trials_per_material = 60;
  int no_contact_samples = 1000;
  double impedance_stiffness = 0.15;  // N/mm
  double relax_velocity = 4.5;        // mm/s, follower opening rate
  double frame_rate = 60.0;           // Hz
  double recoil_threshold = 5.0;      // mm/s, slip declaration
  double post_slip_time = 0.2;        // s recorded beyond slip onset
  double grip_margin = 3.0;           // N beyond the worst-case holding force
  double dx_max = 35.0;               // mm
  double dy_max = 21.0;               // mm
  double split_fraction = 0.8;        // train share, split by trial
};

// One automated leader/follower trial: pull the object with a random
// in-plane increment, relax the follower until recoil exceeds the detection
// threshold, then label every recorded frame with the slip-onset width.
// Trials whose load exceeds the initial grip are degenerate and discarded;
// trials whose load is too small to ever trip the detector end unlabeled.
inline TrialRecord run_trial(const ObjectModel& object, double impedance_stiffness,
                             Rng& rng, const CollectConfig& cfg = CollectConfig{},
                             const SimParams& sp = SimParams{}) {
  object.validate();
  if (!(object.width_0 < 70.0)) throw std::invalid_argument("run_trial: object not graspable");
  if (!(impedance_stiffness > 0.0)) {
    throw std::invalid_argument("run_trial: impedance stiffness must be > 0");
  }
  TrialRecord tr;
  tr.material = object.name;
  tr.dx = rng.uniform(-cfg.dx_max, cfg.dx_max);
  tr.dy = rng.uniform(-cfg.dy_max, cfg.dy_max);
  tr.F_ext = impedance_stiffness * std::hypot(tr.dx, tr.dy);

  const double F_cap = impedance_stiffness * std::hypot(cfg.dx_max, cfg.dy_max);
  const double grip_force = F_cap / object.mu + cfg.grip_margin;
  const double p0 = std::max(0.5, object.width_0 - grip_force / object.stiffness);
  if (tr.F_ext > object.mu * object.stiffness * (object.width_0 - p0)) {
    tr.degenerate = true;
    return tr;
  }

  const double dt = 1.0 / cfg.frame_rate;
  const double dp = cfg.relax_velocity * dt;
  const int post_frames = static_cast<int>(std::lround(cfg.post_slip_time * cfg.frame_rate));
  WorldState w = make_world(object, p0);
  w.follower_offset = tr.F_ext / impedance_stiffness;
  w.F_ext = tr.F_ext;

  int first_slipping = -1;
  bool detected = false;
  int frame = 0;
  const int frame_cap = static_cast<int>(80.0 / dp);  // hard stop, never reached at defaults
  while (frame < frame_cap) {
    w.indentation = std::max(0.0, object.width_0 - w.gripper.p);
    w.F_normal = object.stiffness * w.indentation;
    const double excess = std::max(0.0, tr.F_ext - object.mu * w.F_normal);
    w.slipping = excess > 0.0;
    if (w.slipping) {
      const double slip = (excess / sp.b_anchor) * dt;
      w.slip_total += slip;
      w.d_residual += sp.d_slip_gain * slip;
    }
    w.d_residual *= std::exp(-dt / sp.tau_d);

    TrialFrame fr;
    fr.t = frame * dt;
    fr.p = w.gripper.p;
    fr.slipping = w.slipping;
    fr.obs = observe(object, w, rng.fork_seed(), sp);
    tr.frames.push_back(fr);
    if (w.slipping && first_slipping < 0) first_slipping = frame;

    const double recoil_v = excess / sp.b_recoil;
    if (recoil_v > cfg.recoil_threshold && !detected) {
      detected = true;
      // The recoil trace pins the onset in hindsight: the first slipping
      // frame is the slip frame and its width is the recorded slip width.
      tr.slip_frame = first_slipping;
      tr.p_slip = tr.frames[static_cast<std::size_t>(first_slipping)].p;
      tr.labeled = true;
    }
    if (detected && frame >= first_slipping + post_frames) break;
    if (!detected && w.gripper.p >= object.width_0 + 0.75) break;

    w.gripper.p += dp;
    w.gripper.v = cfg.relax_velocity;
    ++frame;
  }
  // Frames recorded past the onset window exist only to confirm detection;
  // the emitted record keeps at most post_slip_time beyond onset.
  if (first_slipping >= 0) {
    const std::size_t keep = static_cast<std::size_t>(first_slipping + post_frames + 1);
    if (tr.frames.size() > keep) tr.frames.resize(keep);
  }
  return tr;
}

struct RegressionFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  int n_points = 0;
};

// Ordinary least squares of p_slip on F_ext over the labeled trials of one
// material; unlabeled trials get the fitted line at their load.
inline RegressionFit regression_fill(std::vector<TrialRecord>& trials) {
  std::vector<double> x, y;
  for (const TrialRecord& tr : trials) {
    if (tr.labeled && !tr.degenerate) {
      x.push_back(tr.F_ext);
      y.push_back(tr.p_slip);
    }
  }
  const int n = static_cast<int>(x.size());
  if (n < 2) throw std::runtime_error("regression_fill: fewer than 2 labeled trials");
  double sx = 0, sy = 0;
  for (int i = 0; i < n; ++i) { sx += x[i]; sy += y[i]; }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (int i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw std::runtime_error("regression_fill: degenerate load spread");
  RegressionFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.n_points = n;
  double ss_res = 0;
  for (int i = 0; i < n; ++i) {
    const double e = y[i] - (fit.intercept + fit.slope * x[i]);
    ss_res += e * e;
  }
  fit.r2 = (syy > 0.0) ? 1.0 - ss_res / syy : 1.0;
  for (TrialRecord& tr : trials) {
    if (!tr.labeled && !tr.degenerate) {
      tr.p_slip = fit.intercept + fit.slope * tr.F_ext;
      tr.labeled = true;
    }
  }
  return fit;
}

// Samples teaching the closing policy when nothing is felt: the gripper at
// the nominal width with an empty tactile frame, target slightly inside it.
inline std::vector<DatasetSample> add_no_contact_samples(
    int count, Rng& rng, const SimParams& sp = SimParams{}) {
  std::vector<DatasetSample> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  const auto names = dataset_materials();
  for (int i = 0; i < count; ++i) {
    const ObjectModel object = make_material(names[static_cast<std::size_t>(i) % names.size()]);
    WorldState w = make_world(object, object.width_0 + 5.0);
    DatasetSample s;
    s.material = "none";
    s.trial_id = -1 - i;
    s.p_n = 30.0;
    s.p_slip = 28.5 + rng.uniform(-0.5, 0.5);
    s.v_n = (s.p_slip - s.p_n) / 3.0;
    s.obs = observe(object, w, rng.fork_seed(), sp);
    out.push_back(std::move(s));
  }
  return out;
}

struct Dataset {
  std::vector<DatasetSample> train;
  std::vector<DatasetSample> val;
};

// Flattens labeled trials into samples (one per recorded frame, all sharing
// the trial label), draws each contact sample's gripper velocity uniformly
// in (-1, 1) mm/s, and splits train/validation by trial.
inline Dataset assemble_dataset(const std::vector<TrialRecord>& trials,
                                std::vector<DatasetSample> no_contact, Rng& rng,
                                double split_fraction = 0.8) {
  if (trials.empty() && no_contact.empty()) {
    throw std::invalid_argument("assemble_dataset: empty input");
  }
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw std::invalid_argument("assemble_dataset: split fraction must lie in (0, 1)");
  }
  std::vector<std::vector<DatasetSample>> per_trial;
  for (const TrialRecord& tr : trials) {
    if (tr.degenerate) continue;
    if (!tr.labeled || !std::isfinite(tr.p_slip)) {
      throw std::invalid_argument("assemble_dataset: unlabeled trial (run regression_fill first)");
    }
    std::vector<DatasetSample> samples;
    samples.reserve(tr.frames.size());
    int idx = 0;
    for (const TrialFrame& fr : tr.frames) {
      DatasetSample s;
      s.obs = fr.obs;
      s.p_n = fr.p;
      s.v_n = rng.uniform(-1.0, 1.0);
      s.p_slip = tr.p_slip;
      s.material = tr.material;
      s.trial_id = tr.trial_id;
      s.frame = idx++;
      s.t = fr.t;
      samples.push_back(std::move(s));
    }
    per_trial.push_back(std::move(samples));
  }
  // No-contact samples are grouped into pseudo-trials so the split stays
  // by-trial for them as well.
  const std::size_t group = 25;
  for (std::size_t i = 0; i < no_contact.size(); i += group) {
    std::vector<DatasetSample> g(no_contact.begin() + static_cast<std::ptrdiff_t>(i),
                                 no_contact.begin() +
                                     static_cast<std::ptrdiff_t>(std::min(i + group, no_contact.size())));
    per_trial.push_back(std::move(g));
  }
  std::vector<std::size_t> order(per_trial.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t n_train =
      static_cast<std::size_t>(std::lround(split_fraction * static_cast<double>(order.size())));
  Dataset ds;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = (i < n_train) ? ds.train : ds.val;
    for (DatasetSample& s : per_trial[order[i]]) dst.push_back(std::move(s));
  }
  if (ds.train.empty() || ds.val.empty()) {
    throw std::runtime_error("assemble_dataset: a split side is empty; add trials");
  }
  return ds;
}

namespace detail {
inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
}  // namespace detail

inline void save_samples_csv(const std::string& path,
                             const std::vector<DatasetSample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_samples_csv: cannot open " + path);
  const int K = samples.empty()
                    ? 8
                    : static_cast<int>(samples.front().obs.to_vector().size());
  out << "trial_id,material,frame,t";
  for (int i = 0; i < K; ++i) out << ",obs_" << i;
  out << ",p_n,v_n,p_slip\n";
  for (const DatasetSample& s : samples) {
    out << s.trial_id << ',' << s.material << ',' << s.frame << ','
        << detail::format_g17(s.t);
    const Eigen::VectorXd v = s.obs.to_vector();
    for (Eigen::Index i = 0; i < v.size(); ++i) out << ',' << detail::format_g17(v(i));
    out << ',' << detail::format_g17(s.p_n) << ',' << detail::format_g17(s.v_n)
        << ',' << detail::format_g17(s.p_slip) << '\n';
  }
  if (!out) throw std::runtime_error("save_samples_csv: write failed for " + path);
}

inline std::vector<DatasetSample> load_samples_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_samples_csv: cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("load_samples_csv: empty file " + path);
  int K = 0;
  {
    std::stringstream hs(line);
    std::string col;
    while (std::getline(hs, col, ',')) {
      if (col.rfind("obs_", 0) == 0) ++K;
    }
  }
  if (K < TactileObservation::kNamedChannels) {
    throw std::runtime_error("load_samples_csv: bad header in " + path);
  }
  std::vector<DatasetSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string tok;
    auto next = [&](const char* what) {
      if (!std::getline(ls, tok, ',')) {
        throw std::runtime_error("load_samples_csv: missing " + std::string(what) + " at line " +
                                 std::to_string(line_no));
      }
      return tok;
    };
    DatasetSample s;
    s.trial_id = std::stoi(next("trial_id"));
    s.material = next("material");
    s.frame = std::stoi(next("frame"));
    s.t = std::stod(next("t"));
    Eigen::VectorXd v(K);
    for (int i = 0; i < K; ++i) v(i) = std::stod(next("obs"));
    s.obs = TactileObservation::from_vector(v);
    s.p_n = std::stod(next("p_n"));
    s.v_n = std::stod(next("v_n"));
    s.p_slip = std::stod(next("p_slip"));
    out.push_back(std::move(s));
  }
  return out;
}

struct MaterialCollection {
  std::string material;
  RegressionFit fit;
  int trials_total = 0;
  int trials_degenerate = 0;
  int trials_regression_labeled = 0;
};

struct CollectResult {
  Dataset dataset;
  std::vector<MaterialCollection> per_material;
};

// Full data-collection pipeline over the canonical material set.
inline CollectResult collect_dataset(const CollectConfig& cfg, std::uint64_t master_seed,
                                     const SimParams& sp = SimParams{}) {
  Rng rng(master_seed);
  std::vector<TrialRecord> all_trials;
  CollectResult result;
  int next_id = 0;
  for (const std::string& name : dataset_materials()) {
    const ObjectModel object = make_material(name);
    std::vector<TrialRecord> trials;
    MaterialCollection mc;
    mc.material = name;
    for (int i = 0; i < cfg.trials_per_material; ++i) {
      Rng trial_rng(rng.fork());
      TrialRecord tr = run_trial(object, cfg.impedance_stiffness, trial_rng, cfg, sp);
      tr.trial_id = next_id++;
      ++mc.trials_total;
      if (tr.degenerate) {
        ++mc.trials_degenerate;
        continue;
      }
      if (!tr.labeled) ++mc.trials_regression_labeled;
      trials.push_back(std::move(tr));
    }
    mc.fit = regression_fill(trials);
    result.per_material.push_back(mc);
    for (TrialRecord& tr : trials) all_trials.push_back(std::move(tr));
  }
  std::vector<DatasetSample> nc = add_no_contact_samples(cfg.no_contact_samples, rng, sp);
  result.dataset = assemble_dataset(all_trials, std::move(nc), rng, cfg.split_fraction);
  return result;
}

}  // namespace letac
