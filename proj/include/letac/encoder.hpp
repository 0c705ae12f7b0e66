#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>

#include "letac/rng.hpp"

namespace letac {

// Synthetic tactile frame: scalar contact statistics plus dimensionless
// extra channels, flattened to a K-vector for the encoder (default K = 8).
struct TactileObservation {
  double c = 0.0;               // contact area, pixel-equivalent units
  double d = 0.0;               // marker-displacement magnitude, pixel-equivalent units
  double depth_mean = 0.0;      // mean indentation, mm
  double depth_max = 0.0;       // max indentation, mm
  double texture_energy = 0.0;  // dimensionless
  Eigen::VectorXd extra;        // dimensionless channels (default 3)

  static constexpr int kNamedChannels = 5;

  void validate() const {
    if (!(c >= 0.0) || !(d >= 0.0) || !(depth_mean >= 0.0) || !(depth_max >= 0.0)) {
      throw std::invalid_argument("TactileObservation: negative channel");
    }
    if (!std::isfinite(c) || !std::isfinite(d) || !std::isfinite(depth_mean) ||
        !std::isfinite(depth_max) || !std::isfinite(texture_energy) ||
        !extra.allFinite()) {
      throw std::invalid_argument("TactileObservation: non-finite channel");
    }
  }

  Eigen::VectorXd to_vector() const {
    Eigen::VectorXd x(kNamedChannels + extra.size());
    x(0) = c;
    x(1) = d;
    x(2) = depth_mean;
    x(3) = depth_max;
    x(4) = texture_energy;
    x.tail(extra.size()) = extra;
    return x;
  }

  static TactileObservation from_vector(const Eigen::VectorXd& x) {
    if (x.size() < kNamedChannels) {
      throw std::invalid_argument("TactileObservation: vector shorter than named channels");
    }
    TactileObservation o;
    o.c = x(0);
    o.d = x(1);
    o.depth_mean = x(2);
    o.depth_max = x(3);
    o.texture_energy = x(4);
    o.extra = x.tail(x.size() - kNamedChannels);
    return o;
  }
};

// Feed-forward K -> h -> h -> M network with rectified-linear activations,
// plus the fixed per-channel normalization applied to the input. The
// normalization constants travel with the weights so deployment never needs
// dataset statistics.
struct EncoderParams {
  Eigen::MatrixXd W1, W2, W3;
  Eigen::VectorXd b1, b2, b3;
  Eigen::VectorXd obs_mean;   // length K
  Eigen::VectorXd obs_scale;  // length K, entries > 0
  std::uint64_t init_seed = 0;

  int input_dim() const { return static_cast<int>(W1.cols()); }
  int hidden_dim() const { return static_cast<int>(W1.rows()); }
  int output_dim() const { return static_cast<int>(W3.rows()); }

  void validate() const {
    if (W1.rows() != b1.size() || W2.rows() != b2.size() || W3.rows() != b3.size() ||
        W2.cols() != W1.rows() || W3.cols() != W2.rows()) {
      throw std::invalid_argument("EncoderParams: inconsistent layer shapes");
    }
    if (obs_mean.size() != W1.cols() || obs_scale.size() != W1.cols()) {
      throw std::invalid_argument("EncoderParams: normalization length != input dim");
    }
    if ((obs_scale.array() <= 0.0).any()) {
      throw std::invalid_argument("EncoderParams: normalization scale must be > 0");
    }
    if (!W1.allFinite() || !W2.allFinite() || !W3.allFinite() || !b1.allFinite() ||
        !b2.allFinite() || !b3.allFinite() || !obs_mean.allFinite() ||
        !obs_scale.allFinite()) {
      throw std::invalid_argument("EncoderParams: non-finite parameter");
    }
  }

  // Scaled-normal initialization (std = sqrt(2 / fan_in)), zero biases,
  // unit normalization unless the caller installs calibrated constants.
  static EncoderParams init(int K, int h, int M, std::uint64_t seed) {
    if (K <= 0 || h <= 0 || M <= 0) {
      throw std::invalid_argument("EncoderParams::init: dims must be positive");
    }
    Rng rng(seed);
    EncoderParams p;
    p.init_seed = seed;
    auto fill = [&rng](Eigen::MatrixXd& W, int rows, int cols) {
      W.resize(rows, cols);
      const double std_dev = std::sqrt(2.0 / static_cast<double>(cols));
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) W(i, j) = std_dev * rng.normal();
      }
    };
    fill(p.W1, h, K);
    fill(p.W2, h, h);
    fill(p.W3, M, h);
    p.b1 = Eigen::VectorXd::Zero(h);
    p.b2 = Eigen::VectorXd::Zero(h);
    p.b3 = Eigen::VectorXd::Zero(M);
    p.obs_mean = Eigen::VectorXd::Zero(K);
    p.obs_scale = Eigen::VectorXd::Ones(K);
    return p;
  }
};

// Gradients with the same shapes as the corresponding parameters.
// Normalization constants are fixed, never trained.
struct EncoderGrads {
  Eigen::MatrixXd W1, W2, W3;
  Eigen::VectorXd b1, b2, b3;

  static EncoderGrads zeros_like(const EncoderParams& p) {
    EncoderGrads g;
    g.W1 = Eigen::MatrixXd::Zero(p.W1.rows(), p.W1.cols());
    g.W2 = Eigen::MatrixXd::Zero(p.W2.rows(), p.W2.cols());
    g.W3 = Eigen::MatrixXd::Zero(p.W3.rows(), p.W3.cols());
    g.b1 = Eigen::VectorXd::Zero(p.b1.size());
    g.b2 = Eigen::VectorXd::Zero(p.b2.size());
    g.b3 = Eigen::VectorXd::Zero(p.b3.size());
    return g;
  }
};

// Intermediate activations kept for the backward pass.
struct EncoderCache {
  bool valid = false;
  Eigen::VectorXd x_norm;  // normalized input
  Eigen::VectorXd z1, h1;  // pre/post activation, layer 1
  Eigen::VectorXd z2, h2;  // pre/post activation, layer 2
};

inline Eigen::VectorXd encode(const TactileObservation& obs,
                              const EncoderParams& params,
                              EncoderCache* cache = nullptr) {
  params.validate();
  const Eigen::VectorXd raw = obs.to_vector();
  if (raw.size() != params.input_dim()) {
    throw std::invalid_argument("encode: observation dim != encoder input dim");
  }
  const Eigen::VectorXd x =
      (raw - params.obs_mean).array() / params.obs_scale.array();
  const Eigen::VectorXd z1 = params.W1 * x + params.b1;
  const Eigen::VectorXd h1 = z1.cwiseMax(0.0);
  const Eigen::VectorXd z2 = params.W2 * h1 + params.b2;
  const Eigen::VectorXd h2 = z2.cwiseMax(0.0);
  Eigen::VectorXd f = params.W3 * h2 + params.b3;
  if (cache != nullptr) {
    cache->valid = true;
    cache->x_norm = x;
    cache->z1 = z1;
    cache->h1 = h1;
    cache->z2 = z2;
    cache->h2 = h2;
  }
  return f;
}

struct EncoderBackwardResult {
  EncoderGrads grad_params;
  Eigen::VectorXd grad_obs;  // w.r.t. the raw (unnormalized) observation vector
};

// Exact gradients of <grad_f, f>; the rectifier subgradient at 0 is taken
// as 0 (strict z > 0 mask).
inline EncoderBackwardResult encode_backward(const EncoderParams& params,
                                             const EncoderCache& cache,
                                             const Eigen::VectorXd& grad_f) {
  if (!cache.valid) {
    throw std::logic_error("encode_backward: forward cache missing");
  }
  if (grad_f.size() != params.output_dim()) {
    throw std::invalid_argument("encode_backward: grad_f dim != encoder output dim");
  }
  EncoderBackwardResult out;
  out.grad_params.W3 = grad_f * cache.h2.transpose();
  out.grad_params.b3 = grad_f;
  const Eigen::VectorXd mask2 =
      (cache.z2.array() > 0.0).cast<double>().matrix();
  const Eigen::VectorXd dz2 =
      (params.W3.transpose() * grad_f).cwiseProduct(mask2);
  out.grad_params.W2 = dz2 * cache.h1.transpose();
  out.grad_params.b2 = dz2;
  const Eigen::VectorXd mask1 =
      (cache.z1.array() > 0.0).cast<double>().matrix();
  const Eigen::VectorXd dz1 =
      (params.W2.transpose() * dz2).cwiseProduct(mask1);
  out.grad_params.W1 = dz1 * cache.x_norm.transpose();
  out.grad_params.b1 = dz1;
  out.grad_obs = (params.W1.transpose() * dz1).array() / params.obs_scale.array();
  return out;
}

}  // namespace letac
