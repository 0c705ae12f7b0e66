#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "letac/encoder.hpp"
#include "letac/gripper.hpp"
#include "letac/rng.hpp"

namespace letac {

// Material/object description. Contact between the fingers and the object is
// a series spring: F_normal = stiffness * max(0, width_eff - p). Friction is
// Coulomb with coefficient mu. imprint_sharpness controls how deep a visual
// imprint the object leaves in the gel per mm of indentation (rigid edges
// leave deep distinct imprints, very soft objects leave shallow diffuse
// ones). taper models how much effective grasped width is lost per mm of
// in-hand slip (0 for parallel-faced objects).
struct ObjectModel {
  std::string name = "rigid";
  double width_0 = 30.0;             // mm
  double stiffness = 25.0;           // N/mm
  double mu = 0.4;                   // dimensionless
  double mass = 0.3;                 // kg
  double texture_scale = 1.0;        // dimensionless
  double contact_force_scale = 6.0;  // N, F_c in the contact-area law
  double imprint_sharpness = 9.0;    // mm imprint depth per mm indentation
  double taper = 0.0;                // mm width lost per mm slip
  double loose_mass_fraction = 0.0;  // fraction of mass free to slam

  void validate() const {
    if (!(stiffness > 0.0)) throw std::invalid_argument("ObjectModel: stiffness must be > 0");
    if (!(mu > 0.0)) throw std::invalid_argument("ObjectModel: mu must be > 0");
    if (!(width_0 > 0.0 && width_0 < 70.0)) {
      throw std::invalid_argument("ObjectModel: width_0 must lie in (0, 70) mm");
    }
    if (!(mass > 0.0) || !(contact_force_scale > 0.0) || !(imprint_sharpness > 0.0)) {
      throw std::invalid_argument("ObjectModel: mass, contact_force_scale, imprint_sharpness must be > 0");
    }
    if (taper < 0.0 || texture_scale < 0.0 || loose_mass_fraction < 0.0) {
      throw std::invalid_argument("ObjectModel: negative taper/texture/loose fraction");
    }
  }
};

// Shared simulation constants (not per-material).
struct SimParams {
  double c_sat = 1800.0;       // contact-area saturation, pixel-equivalent
  double k_marker = 25.0;      // marker displacement per N of tangential load
  double b_recoil = 0.2;       // N*s/mm, follower recoil damping (data collection)
  double b_anchor = 0.24;      // N*s/mm, in-hand anchor drag while slipping
  double d_slip_gain = 60.0;   // marker burst per mm of slip
  double tau_d = 0.5;          // s, marker-burst relaxation time
  double tracker_tau = 0.03;   // s, low-level width tracker time constant
  double tracker_rate = 15.0;  // mm/s, low-level tracker rate limit
  double noise_c = 8.0;        // per-channel noise scales, multiplied by texture_scale
  double noise_d = 2.0;
  double noise_depth = 0.02;
  double noise_texture = 0.02;
  double noise_extra = 1.0;
  int extra_channels = 3;
  double imprint_threshold = 0.5;  // mm, baseline contact-area threshold depth
};

struct WorldState {
  GripperState gripper{45.0, 0.0};
  double indentation = 0.0;  // mm
  double F_normal = 0.0;     // N
  double F_ext = 0.0;        // N, tangential load on the grasp
  bool slipping = false;
  double follower_offset = 0.0;  // mm, impedance displacement (data collection)
  double t = 0.0;                // s
  double width_eff = 30.0;       // mm, effective grasped width (taper erosion)
  double slip_total = 0.0;       // mm, cumulative in-hand slip
  double contact_loss = 0.0;     // s, consecutive time without contact
  double d_residual = 0.0;       // marker memory left by slip bursts
};

inline WorldState make_world(const ObjectModel& object, double p0, double v0 = 0.0) {
  object.validate();
  WorldState w;
  w.gripper = {p0, v0};
  w.width_eff = object.width_0;
  w.indentation = std::max(0.0, w.width_eff - p0);
  w.F_normal = object.stiffness * w.indentation;
  return w;
}

// Width at which Coulomb friction exactly balances the external load:
// mu * stiffness * (width_0 - p) = F_ext, clipped to >= 0.
inline double slip_width(const ObjectModel& object, double F_ext) {
  if (!(F_ext >= 0.0)) throw std::invalid_argument("slip_width: F_ext must be >= 0");
  return std::max(0.0, object.width_0 - F_ext / (object.mu * object.stiffness));
}

// Synthesizes the tactile frame for the current contact state. Deterministic
// given the seed; every noise term scales with the material's texture_scale.
inline TactileObservation observe(const ObjectModel& object, const WorldState& world,
                                  std::uint64_t rng_seed,
                                  const SimParams& sp = SimParams{}) {
  Rng rng(rng_seed);
  const double ts = object.texture_scale;
  const double Fn = world.F_normal;
  TactileObservation o;
  const double c_clean =
      sp.c_sat * (1.0 - std::exp(-Fn / object.contact_force_scale));
  const double grip_limit = object.mu * Fn;
  const double d_clean = sp.k_marker * std::min(world.F_ext, grip_limit) + world.d_residual;
  const double depth_max_clean = object.imprint_sharpness * world.indentation;
  o.c = std::max(0.0, c_clean + sp.noise_c * ts * rng.normal());
  o.d = std::max(0.0, d_clean + sp.noise_d * ts * rng.normal());
  o.depth_max = std::max(0.0, depth_max_clean + 2.0 * sp.noise_depth * ts * rng.normal());
  o.depth_mean = std::max(0.0, 0.5 * depth_max_clean + sp.noise_depth * ts * rng.normal());
  o.texture_energy = std::max(
      0.0, ts * (1.0 - std::exp(-Fn / object.contact_force_scale)) +
               sp.noise_texture * ts * rng.normal());
  o.extra.resize(sp.extra_channels);
  for (int i = 0; i < sp.extra_channels; ++i) {
    o.extra(i) = sp.noise_extra * ts * rng.normal();
  }
  return o;
}

// Contact-area feedback as the classical controllers consume it: the raw
// area counts only where the imprint is deeper than a fixed threshold.
// A parabolic imprint of peak depth depth_max has an above-threshold area
// fraction of (1 - threshold/depth_max); below-threshold imprints vanish.
inline double thresholded_contact_area(const TactileObservation& obs,
                                       double threshold_depth) {
  if (obs.depth_max <= threshold_depth) return 0.0;
  return obs.c * (1.0 - threshold_depth / obs.depth_max);
}

// One impulsive load event (loose-mass slam or collision impact).
struct SlamEvent {
  double t = 0.0;       // s, onset
  double F_peak = 0.0;  // N
  double duration = 0.04;  // s
};

struct DisturbanceProfile {
  enum class Kind { none, transport, shaking, collision };
  Kind kind = Kind::none;
  double peak_velocity = 0.0;      // m/s (reporting only)
  double peak_acceleration = 0.0;  // m/s^2
  double impulse_magnitude = 0.0;  // N*s (collision only)
  double duration = 0.0;           // s, active disturbance window
  double t_start = 3.0;            // s, disturbance onset
  double omega = 1.0;              // rad/s, profile angular rate
  std::uint64_t seed = 0;
  std::vector<SlamEvent> slams;

  void validate() const {
    if (peak_velocity < 0.0 || peak_acceleration < 0.0 || impulse_magnitude < 0.0 ||
        duration < 0.0) {
      throw std::invalid_argument("DisturbanceProfile: negative magnitude");
    }
  }
};

inline double profile_acceleration(const DisturbanceProfile& profile, double t) {
  if (profile.kind == DisturbanceProfile::Kind::none) return 0.0;
  const double u = t - profile.t_start;
  if (u < 0.0 || u > profile.duration) return 0.0;
  switch (profile.kind) {
    case DisturbanceProfile::Kind::transport: {
      const double s = std::sin(profile.omega * u);
      return profile.peak_acceleration * s * s;
    }
    case DisturbanceProfile::Kind::shaking:
      return profile.peak_acceleration * std::sin(profile.omega * u);
    case DisturbanceProfile::Kind::collision:
      return profile.peak_acceleration * std::sin(profile.omega * u);
    default:
      return 0.0;
  }
}

inline double slam_force(const DisturbanceProfile& profile, double t) {
  double f = 0.0;
  for (const SlamEvent& s : profile.slams) {
    if (t >= s.t && t < s.t + s.duration) f += s.F_peak;
  }
  return f;
}

inline double external_force(const ObjectModel& object,
                             const DisturbanceProfile& profile, double t) {
  return object.mass * std::abs(profile_acceleration(profile, t)) +
         slam_force(profile, t);
}

// Advances the world by dt under a width reference. The gripper follows a
// rate-limited first-order tracker; slip follows the Coulomb rule with a
// viscous anchor drag, erodes the effective width on tapered objects, and
// leaves a decaying marker residual.
inline WorldState step_world(const ObjectModel& object, const WorldState& world,
                             double width_cmd, const DisturbanceProfile& profile,
                             double t, double dt,
                             const SimParams& sp = SimParams{}) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_world: dt must be > 0");
  WorldState w = world;
  double v = (width_cmd - w.gripper.p) / sp.tracker_tau;
  v = std::clamp(v, -sp.tracker_rate, sp.tracker_rate);
  w.gripper.p = std::clamp(w.gripper.p + v * dt, 0.0, 70.0);
  w.gripper.v = v;

  w.F_ext = external_force(object, profile, t);
  w.indentation = std::max(0.0, w.width_eff - w.gripper.p);
  w.F_normal = object.stiffness * w.indentation;
  const double grip_limit = object.mu * w.F_normal;
  w.slipping = w.F_ext > grip_limit;
  if (w.slipping) {
    const double slip_rate = (w.F_ext - grip_limit) / sp.b_anchor;
    const double slip = slip_rate * dt;
    w.slip_total += slip;
    w.d_residual += sp.d_slip_gain * slip;
    w.width_eff = std::max(0.0, object.width_0 - object.taper * w.slip_total);
    w.indentation = std::max(0.0, w.width_eff - w.gripper.p);
    w.F_normal = object.stiffness * w.indentation;
  }
  w.d_residual *= std::exp(-dt / sp.tau_d);
  if (w.F_normal > 0.0) {
    w.contact_loss = 0.0;
  } else {
    w.contact_loss += dt;
  }
  w.t = t + dt;
  return w;
}

// Canonical material set for data collection plus the stress configuration.
inline ObjectModel make_material(const std::string& name) {
  ObjectModel m;
  m.name = name;
  if (name == "rigid") {
    m.stiffness = 25.0; m.mu = 0.4; m.contact_force_scale = 6.0;
    m.imprint_sharpness = 9.0; m.texture_scale = 1.0;
  } else if (name == "hard_rubber") {
    m.stiffness = 6.0; m.mu = 0.6; m.contact_force_scale = 3.0;
    m.imprint_sharpness = 2.2; m.texture_scale = 0.8;
  } else if (name == "soft_rubber") {
    m.stiffness = 1.8; m.mu = 0.8; m.contact_force_scale = 1.5;
    m.imprint_sharpness = 0.45; m.texture_scale = 0.6;
  } else if (name == "gel") {
    m.stiffness = 0.6; m.mu = 1.0; m.contact_force_scale = 0.6;
    m.imprint_sharpness = 0.016; m.texture_scale = 0.4;
  } else if (name == "egg") {
    m.stiffness = 0.1; m.mu = 0.3; m.contact_force_scale = 0.15;
    m.imprint_sharpness = 0.004; m.texture_scale = 0.3;
  } else if (name == "interp_mid") {
    // Held-out object: log-space midpoint of hard_rubber and soft_rubber.
    m.stiffness = std::sqrt(6.0 * 1.8);
    m.mu = std::sqrt(0.6 * 0.8);
    m.contact_force_scale = std::sqrt(3.0 * 1.5);
    m.imprint_sharpness = std::sqrt(2.2 * 0.45);
    m.texture_scale = std::sqrt(0.8 * 0.6);
  } else {
    throw std::invalid_argument("make_material: unknown material '" + name + "'");
  }
  return m;
}

inline std::vector<std::string> dataset_materials() {
  return {"rigid", "hard_rubber", "soft_rubber", "gel"};
}

}  // namespace letac
