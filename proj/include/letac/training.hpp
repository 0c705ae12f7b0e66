#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "letac/checkpoint.hpp"
#include "letac/dataset.hpp"
#include "letac/encoder.hpp"
#include "letac/mpc_layer.hpp"
#include "letac/rng.hpp"

namespace letac {

struct TrainingConfig {
  double P_tilde = 3.0;  // terminal loss amplifier
  double learning_rate = 1e-3;
  int batch_size = 64;
  int epochs = 40;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 10.0;  // global L2 norm threshold
  std::uint64_t seed = 0;
  int checkpoint_every = 10;  // epochs between logged checkpoints

  void validate() const {
    if (!(P_tilde > 0.0)) throw std::invalid_argument("TrainingConfig: P_tilde must be > 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainingConfig: learning rate must be > 0");
    if (batch_size <= 0 || epochs <= 0) {
      throw std::invalid_argument("TrainingConfig: batch size and epochs must be positive");
    }
    if (!(grad_clip > 0.0)) throw std::invalid_argument("TrainingConfig: grad clip must be > 0");
  }
};

// Training blew up numerically: non-finite loss/gradient or a cost matrix
// that lost positive definiteness.
struct TrainDivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Random starting point for the learnable layer: mildly negative force
// dynamics (contact area decays as the gripper opens) and a scaled-identity
// Cholesky factor, so the horizon cost is well conditioned from step one.
inline LayerParams init_layer_params(const MpcDims& dims, std::uint64_t seed,
                                     double Q_v = 1.0, double Q_a = 1.0,
                                     double P = 5.0, double eps = 1e-4) {
  Rng rng(seed ^ 0xa24baed4963ee407ull);
  LayerParams layer;
  layer.A_f = Eigen::VectorXd(dims.M);
  for (Eigen::Index i = 0; i < layer.A_f.size(); ++i) {
    layer.A_f[i] = -0.05 + 0.02 * rng.normal();
  }
  layer.L_f = Eigen::MatrixXd::Zero(dims.M, dims.M);
  for (Eigen::Index i = 0; i < layer.L_f.rows(); ++i) {
    layer.L_f(i, i) = 0.3 + 0.02 * rng.normal();
    for (Eigen::Index j = 0; j < i; ++j) layer.L_f(i, j) = 0.01 * rng.normal();
  }
  layer.Q_v = Q_v;
  layer.Q_a = Q_a;
  layer.P = P;
  layer.eps = eps;
  layer.validate(dims);
  return layer;
}

inline double sequence_loss(const Eigen::VectorXd& p_traj, double p_slip, double P_tilde) {
  const Eigen::Index N = p_traj.size();
  if (N == 0) throw std::invalid_argument("sequence_loss: empty trajectory");
  double l = 0.0;
  for (Eigen::Index k = 0; k < N; ++k) {
    const double e = p_traj(k) - p_slip;
    l += e * e;
  }
  const double eN = p_traj(N - 1) - p_slip;
  return l + P_tilde * eN * eN;
}

inline Eigen::VectorXd sequence_loss_grad(const Eigen::VectorXd& p_traj, double p_slip,
                                          double P_tilde) {
  const Eigen::Index N = p_traj.size();
  Eigen::VectorXd g(N);
  for (Eigen::Index k = 0; k < N; ++k) g(k) = 2.0 * (p_traj(k) - p_slip);
  g(N - 1) += 2.0 * P_tilde * (p_traj(N - 1) - p_slip);
  return g;
}

// Flattened parameter vector ordering: A_f, lower triangle of L_f row-major,
// W1, b1, W2, b2, W3, b3. The strict upper triangle of L_f never enters, so
// it stays exactly zero through training.
namespace detail {

inline Eigen::Index lower_count(Eigen::Index M) { return M * (M + 1) / 2; }

inline Eigen::Index param_count(const LayerParams& layer, const EncoderParams& enc) {
  return layer.A_f.size() + lower_count(layer.L_f.rows()) + enc.W1.size() + enc.b1.size() +
         enc.W2.size() + enc.b2.size() + enc.W3.size() + enc.b3.size();
}

inline void copy_matrix_out(const Eigen::MatrixXd& m, Eigen::VectorXd& theta, Eigen::Index& at) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) theta(at++) = m(i, j);
  }
}

inline void copy_matrix_in(Eigen::MatrixXd& m, const Eigen::VectorXd& theta, Eigen::Index& at) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = theta(at++);
  }
}

}  // namespace detail

inline Eigen::VectorXd flatten_params(const LayerParams& layer, const EncoderParams& enc) {
  Eigen::VectorXd theta(detail::param_count(layer, enc));
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < layer.A_f.size(); ++i) theta(at++) = layer.A_f(i);
  for (Eigen::Index i = 0; i < layer.L_f.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) theta(at++) = layer.L_f(i, j);
  }
  detail::copy_matrix_out(enc.W1, theta, at);
  for (Eigen::Index i = 0; i < enc.b1.size(); ++i) theta(at++) = enc.b1(i);
  detail::copy_matrix_out(enc.W2, theta, at);
  for (Eigen::Index i = 0; i < enc.b2.size(); ++i) theta(at++) = enc.b2(i);
  detail::copy_matrix_out(enc.W3, theta, at);
  for (Eigen::Index i = 0; i < enc.b3.size(); ++i) theta(at++) = enc.b3(i);
  return theta;
}

inline void unflatten_params(const Eigen::VectorXd& theta, LayerParams& layer,
                             EncoderParams& enc) {
  if (theta.size() != detail::param_count(layer, enc)) {
    throw std::invalid_argument("unflatten_params: size mismatch");
  }
  Eigen::Index at = 0;
  for (Eigen::Index i = 0; i < layer.A_f.size(); ++i) layer.A_f(i) = theta(at++);
  for (Eigen::Index i = 0; i < layer.L_f.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) layer.L_f(i, j) = theta(at++);
  }
  detail::copy_matrix_in(enc.W1, theta, at);
  for (Eigen::Index i = 0; i < enc.b1.size(); ++i) enc.b1(i) = theta(at++);
  detail::copy_matrix_in(enc.W2, theta, at);
  for (Eigen::Index i = 0; i < enc.b2.size(); ++i) enc.b2(i) = theta(at++);
  detail::copy_matrix_in(enc.W3, theta, at);
  for (Eigen::Index i = 0; i < enc.b3.size(); ++i) enc.b3(i) = theta(at++);
}

// Loss and flattened gradient for one sample through encoder + MPC layer.
inline double sample_loss_grad(const LayerParams& layer, const EncoderParams& enc,
                               const MpcDims& dims, const DatasetSample& s,
                               double P_tilde, Eigen::VectorXd* grad_out) {
  EncoderCache cache;
  const Eigen::VectorXd f_n = encode(s.obs, enc, &cache);
  const ForwardResult fwd = forward(layer, dims, f_n, s.p_n, s.v_n);
  const double loss = sequence_loss(fwd.p_traj, s.p_slip, P_tilde);
  if (grad_out != nullptr) {
    const Eigen::VectorXd gp = sequence_loss_grad(fwd.p_traj, s.p_slip, P_tilde);
    const LayerGrads lg = backward(layer, dims, f_n, s.p_n, s.v_n, fwd, gp);
    const EncoderBackwardResult eb = encode_backward(enc, cache, lg.grad_f_n);
    LayerParams gl = layer;
    gl.A_f = lg.grad_A_f;
    gl.L_f = lg.grad_L_f;
    EncoderParams ge = enc;
    ge.W1 = eb.grad_params.W1;
    ge.b1 = eb.grad_params.b1;
    ge.W2 = eb.grad_params.W2;
    ge.b2 = eb.grad_params.b2;
    ge.W3 = eb.grad_params.W3;
    ge.b3 = eb.grad_params.b3;
    *grad_out = flatten_params(gl, ge);
  }
  return loss;
}

inline double mean_loss(const LayerParams& layer, const EncoderParams& enc,
                        const MpcDims& dims, const std::vector<DatasetSample>& samples,
                        double P_tilde) {
  if (samples.empty()) throw std::invalid_argument("mean_loss: empty sample set");
  double total = 0.0;
  for (const DatasetSample& s : samples) {
    total += sample_loss_grad(layer, enc, dims, s, P_tilde, nullptr);
  }
  return total / static_cast<double>(samples.size());
}

struct AdamState {
  Eigen::VectorXd m, v;
  long t = 0;

  static AdamState zeros(Eigen::Index n) {
    AdamState s;
    s.m = Eigen::VectorXd::Zero(n);
    s.v = Eigen::VectorXd::Zero(n);
    return s;
  }

  void update(Eigen::VectorXd& theta, const Eigen::VectorXd& grad,
              const TrainingConfig& cfg) {
    ++t;
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * grad;
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(t));
    theta -= (cfg.learning_rate *
              (m / bc1).array() / ((v / bc2).array().sqrt() + cfg.adam_eps))
                 .matrix();
  }
};

struct LossPoint {
  int epoch = 0;
  long step = 0;
  double train_loss = 0.0;  // running mean over the epoch's batches
  double val_loss = 0.0;
};

// Optimizer/progress sidecar enabling seamless resume; the epoch shuffle is
// re-derivable from (seed, epoch), so no generator state needs saving.
struct TrainState {
  int epochs_done = 0;
  AdamState adam;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossPoint> curve;
  double initial_val_loss = 0.0;
  double final_val_loss = 0.0;
  long steps = 0;
  TrainState final_state;
};

inline void save_train_state(const std::string& path, const TrainState& st) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_train_state: cannot open " + path);
  out << "letac_train_state v1\n";
  out << "epochs_done " << st.epochs_done << '\n';
  out << "t " << st.adam.t << '\n';
  detail::write_values(out, "m", st.adam.m.data(), st.adam.m.size());
  detail::write_values(out, "v", st.adam.v.data(), st.adam.v.size());
  if (!out) throw std::runtime_error("save_train_state: write failed for " + path);
}

inline TrainState load_train_state(const std::string& path, Eigen::Index n_params) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_train_state: cannot open " + path);
  std::string magic;
  if (!std::getline(in, magic) || magic != "letac_train_state v1") {
    throw std::runtime_error("load_train_state: bad magic in " + path);
  }
  detail::KeyReader r(in, path);
  TrainState st;
  st.epochs_done = static_cast<int>(r.scalar("epochs_done"));
  st.adam.t = static_cast<long>(r.scalar("t"));
  st.adam.m = detail::to_vector(r.expect("m", n_params));
  st.adam.v = detail::to_vector(r.expect("v", n_params));
  return st;
}

inline std::uint64_t epoch_shuffle_seed(std::uint64_t seed, int epoch) {
  return seed ^ (0x9e3779b97f4a7c15ull * static_cast<std::uint64_t>(epoch + 1));
}

// Mini-batch Adam over the full learnable set. The horizon QP is certified
// positive definite after every update; training aborts on a non-finite
// loss or gradient.
inline TrainResult train(const Dataset& dataset, LayerParams layer, EncoderParams enc,
                         const MpcDims& dims, const TrainingConfig& cfg,
                         const TrainState* resume = nullptr) {
  cfg.validate();
  dims.validate();
  layer.validate(dims);
  enc.validate();
  if (dataset.train.empty()) throw std::invalid_argument("train: empty training set");

  Eigen::VectorXd theta = flatten_params(layer, enc);
  TrainState st;
  if (resume != nullptr) {
    st = *resume;
    if (st.adam.m.size() != theta.size()) {
      throw std::invalid_argument("train: resume state size mismatch");
    }
  } else {
    st.adam = AdamState::zeros(theta.size());
  }

  TrainResult result;
  const bool have_val = !dataset.val.empty();
  result.initial_val_loss =
      have_val ? mean_loss(layer, enc, dims, dataset.val, cfg.P_tilde)
               : mean_loss(layer, enc, dims, dataset.train, cfg.P_tilde);

  const std::size_t n = dataset.train.size();
  std::vector<std::size_t> order(n);
  Eigen::VectorXd grad(theta.size()), batch_grad(theta.size());
  for (int epoch = st.epochs_done; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng shuffle_rng(epoch_shuffle_seed(cfg.seed, epoch));
    shuffle_rng.shuffle(order);
    double epoch_loss = 0.0;
    long epoch_batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      batch_grad.setZero();
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i) {
        batch_loss +=
            sample_loss_grad(layer, enc, dims, dataset.train[order[i]], cfg.P_tilde, &grad);
        batch_grad += grad;
      }
      const double count = static_cast<double>(stop - start);
      batch_loss /= count;
      batch_grad /= count;
      if (!std::isfinite(batch_loss) || !batch_grad.allFinite()) {
        throw TrainDivergenceError("train: non-finite loss or gradient at epoch " +
                                   std::to_string(epoch) + ", step " +
                                   std::to_string(st.adam.t));
      }
      const double gnorm = batch_grad.norm();
      if (gnorm > cfg.grad_clip) batch_grad *= cfg.grad_clip / gnorm;
      st.adam.update(theta, batch_grad, cfg);
      unflatten_params(theta, layer, enc);
      const FeasibilityReport rep = check_feasibility(layer, dims);
      if (!rep.spd) {
        throw TrainDivergenceError("train: horizon QP lost positive definiteness at step " +
                                   std::to_string(st.adam.t));
      }
      epoch_loss += batch_loss;
      ++epoch_batches;
      ++result.steps;
    }
    LossPoint pt;
    pt.epoch = epoch;
    pt.step = st.adam.t;
    pt.train_loss = epoch_loss / static_cast<double>(std::max(1L, epoch_batches));
    pt.val_loss = have_val ? mean_loss(layer, enc, dims, dataset.val, cfg.P_tilde)
                           : mean_loss(layer, enc, dims, dataset.train, cfg.P_tilde);
    result.curve.push_back(pt);
    st.epochs_done = epoch + 1;
  }

  result.final_val_loss = result.curve.empty() ? result.initial_val_loss
                                               : result.curve.back().val_loss;
  result.checkpoint.dims = dims;
  result.checkpoint.layer = layer;
  result.checkpoint.encoder = enc;
  result.checkpoint.train_seed = cfg.seed;
  result.final_state = st;
  return result;
}

inline void save_loss_curve(const std::string& path, const std::vector<LossPoint>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_loss_curve: cannot open " + path);
  out << "epoch,step,train_loss,val_loss\n";
  for (const LossPoint& pt : curve) {
    out << pt.epoch << ',' << pt.step << ',' << detail::format_g17(pt.train_loss) << ','
        << detail::format_g17(pt.val_loss) << '\n';
  }
  if (!out) throw std::runtime_error("save_loss_curve: write failed for " + path);
}

inline std::vector<LossPoint> load_loss_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_loss_curve: cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "epoch,step,train_loss,val_loss") {
    throw std::runtime_error("load_loss_curve: bad header in " + path);
  }
  std::vector<LossPoint> curve;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    LossPoint pt;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(ss >> pt.epoch >> c1 >> pt.step >> c2 >> pt.train_loss >> c3 >> pt.val_loss) ||
        c1 != ',' || c2 != ',' || c3 != ',') {
      throw std::runtime_error("load_loss_curve: " + path + ":" +
                               std::to_string(lineno) + ": malformed row");
    }
    curve.push_back(pt);
  }
  return curve;
}

struct GradCheckReport {
  double max_rel_end_to_end = 0.0;
  double max_rel_layer_only = 0.0;
  double h = 1e-5;
};

namespace detail {
// Per-coordinate relative error with a floor tied to the gradient's overall
// scale: central differences on a loss of magnitude L carry ~L*eps/h of
// cancellation noise, which would swamp coordinates whose true gradient is
// orders of magnitude below the dominant ones.
inline double rel_err(double a, double b, double scale_floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), scale_floor, 1e-6});
}
}  // namespace detail

// Central finite differences over every parameter coordinate, against the
// analytic gradient. The layer-only pass treats f_n as the leaf variable.
inline GradCheckReport grad_check(const LayerParams& layer, const EncoderParams& enc,
                                  const MpcDims& dims, const DatasetSample& sample,
                                  double P_tilde = 3.0, double h = 1e-5) {
  GradCheckReport rep;
  rep.h = h;

  Eigen::VectorXd analytic;
  sample_loss_grad(layer, enc, dims, sample, P_tilde, &analytic);
  const double floor_full = 1e-3 * analytic.cwiseAbs().maxCoeff();
  LayerParams lp = layer;
  EncoderParams ep = enc;
  Eigen::VectorXd theta = flatten_params(lp, ep);
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double orig = theta(i);
    theta(i) = orig + h;
    unflatten_params(theta, lp, ep);
    const double lp_hi = sample_loss_grad(lp, ep, dims, sample, P_tilde, nullptr);
    theta(i) = orig - h;
    unflatten_params(theta, lp, ep);
    const double lp_lo = sample_loss_grad(lp, ep, dims, sample, P_tilde, nullptr);
    theta(i) = orig;
    const double fd = (lp_hi - lp_lo) / (2.0 * h);
    rep.max_rel_end_to_end =
        std::max(rep.max_rel_end_to_end, detail::rel_err(analytic(i), fd, floor_full));
  }
  unflatten_params(theta, lp, ep);

  // Layer-only: gradients w.r.t. (A_f, lower L_f, f_n) with f_n fixed.
  const Eigen::VectorXd f_n = encode(sample.obs, enc);
  auto layer_loss = [&](const LayerParams& l, const Eigen::VectorXd& f) {
    const ForwardResult fwd = forward(l, dims, f, sample.p_n, sample.v_n);
    return sequence_loss(fwd.p_traj, sample.p_slip, P_tilde);
  };
  const ForwardResult fwd = forward(layer, dims, f_n, sample.p_n, sample.v_n);
  const Eigen::VectorXd gp = sequence_loss_grad(fwd.p_traj, sample.p_slip, P_tilde);
  const LayerGrads lg = backward(layer, dims, f_n, sample.p_n, sample.v_n, fwd, gp);
  double layer_scale = std::max(lg.grad_A_f.cwiseAbs().maxCoeff(),
                                lg.grad_L_f.cwiseAbs().maxCoeff());
  layer_scale = std::max(layer_scale, lg.grad_f_n.cwiseAbs().maxCoeff());
  const double floor_layer = 1e-3 * layer_scale;

  LayerParams lq = layer;
  for (Eigen::Index i = 0; i < lq.A_f.size(); ++i) {
    const double orig = lq.A_f(i);
    lq.A_f(i) = orig + h;
    const double hi = layer_loss(lq, f_n);
    lq.A_f(i) = orig - h;
    const double lo = layer_loss(lq, f_n);
    lq.A_f(i) = orig;
    rep.max_rel_layer_only = std::max(
        rep.max_rel_layer_only,
        detail::rel_err(lg.grad_A_f(i), (hi - lo) / (2.0 * h), floor_layer));
  }
  for (Eigen::Index i = 0; i < lq.L_f.rows(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double orig = lq.L_f(i, j);
      lq.L_f(i, j) = orig + h;
      const double hi = layer_loss(lq, f_n);
      lq.L_f(i, j) = orig - h;
      const double lo = layer_loss(lq, f_n);
      lq.L_f(i, j) = orig;
      rep.max_rel_layer_only = std::max(
          rep.max_rel_layer_only,
          detail::rel_err(lg.grad_L_f(i, j), (hi - lo) / (2.0 * h), floor_layer));
    }
  }
  Eigen::VectorXd fq = f_n;
  for (Eigen::Index i = 0; i < fq.size(); ++i) {
    const double orig = fq(i);
    fq(i) = orig + h;
    const double hi = layer_loss(layer, fq);
    fq(i) = orig - h;
    const double lo = layer_loss(layer, fq);
    fq(i) = orig;
    rep.max_rel_layer_only = std::max(
        rep.max_rel_layer_only,
        detail::rel_err(lg.grad_f_n(i), (hi - lo) / (2.0 * h), floor_layer));
  }
  return rep;
}

}  // namespace letac
