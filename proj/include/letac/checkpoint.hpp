#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "letac/encoder.hpp"
#include "letac/gripper.hpp"
#include "letac/mpc_layer.hpp"

namespace letac {

// Trained model snapshot. Serialized as a line-oriented text record
// ("letac_checkpoint v1"), one key per line, doubles printed with %.17g so
// reload is bit-exact; matrices row-major. Layout documented in README.
struct Checkpoint {
  MpcDims dims;
  LayerParams layer;
  EncoderParams encoder;
  std::uint64_t train_seed = 0;
  std::string config_hash = "0";

  void validate() const {
    dims.validate();
    layer.validate(dims);
    encoder.validate();
    if (encoder.output_dim() != dims.M) {
      throw std::invalid_argument("Checkpoint: encoder output dim != M");
    }
  }
};

namespace detail {

inline void write_values(std::ostream& out, const char* key, const double* v,
                         Eigen::Index n) {
  out << key;
  char buf[40];
  for (Eigen::Index i = 0; i < n; ++i) {
    std::snprintf(buf, sizeof(buf), " %.17g", v[i]);
    out << buf;
  }
  out << '\n';
}

inline void write_matrix_row_major(std::ostream& out, const char* key,
                                   const Eigen::MatrixXd& m) {
  out << key;
  char buf[40];
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), " %.17g", m(i, j));
      out << buf;
    }
  }
  out << '\n';
}

class KeyReader {
 public:
  explicit KeyReader(std::istream& in, std::string path)
      : in_(in), path_(std::move(path)) {}

  std::vector<double> expect(const std::string& key, Eigen::Index n) {
    std::string line;
    if (!std::getline(in_, line)) {
      throw std::runtime_error(path_ + ": unexpected end of checkpoint, wanted '" + key + "'");
    }
    std::istringstream ls(line);
    std::string k;
    ls >> k;
    if (k != key) {
      throw std::runtime_error(path_ + ": expected key '" + key + "', found '" + k + "'");
    }
    std::vector<double> vals;
    vals.reserve(static_cast<std::size_t>(n));
    double v;
    while (ls >> v) vals.push_back(v);
    if (static_cast<Eigen::Index>(vals.size()) != n) {
      throw std::runtime_error(path_ + ": key '" + key + "' expects " + std::to_string(n) +
                               " values, found " + std::to_string(vals.size()));
    }
    return vals;
  }

  double scalar(const std::string& key) { return expect(key, 1)[0]; }

  std::string raw(const std::string& key) {
    std::string line;
    if (!std::getline(in_, line)) {
      throw std::runtime_error(path_ + ": unexpected end of checkpoint, wanted '" + key + "'");
    }
    std::istringstream ls(line);
    std::string k, rest;
    ls >> k >> rest;
    if (k != key) {
      throw std::runtime_error(path_ + ": expected key '" + key + "', found '" + k + "'");
    }
    return rest;
  }

 private:
  std::istream& in_;
  std::string path_;
};

inline Eigen::MatrixXd to_matrix_row_major(const std::vector<double>& vals,
                                           Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) {
      m(i, j) = vals[static_cast<std::size_t>(i * cols + j)];
    }
  }
  return m;
}

inline Eigen::VectorXd to_vector(const std::vector<double>& vals) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(vals.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = vals[static_cast<std::size_t>(i)];
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  ck.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << "letac_checkpoint v1\n";
  out << "N " << ck.dims.N << '\n';
  out << "M " << ck.dims.M << '\n';
  detail::write_values(out, "dt", &ck.dims.dt, 1);
  detail::write_values(out, "eps", &ck.layer.eps, 1);
  detail::write_values(out, "Q_v", &ck.layer.Q_v, 1);
  detail::write_values(out, "Q_a", &ck.layer.Q_a, 1);
  detail::write_values(out, "P", &ck.layer.P, 1);
  detail::write_values(out, "A_f", ck.layer.A_f.data(), ck.layer.A_f.size());
  detail::write_matrix_row_major(out, "L_f", ck.layer.L_f);
  out << "encoder " << ck.encoder.input_dim() << ' ' << ck.encoder.hidden_dim() << ' '
      << ck.encoder.output_dim() << '\n';
  detail::write_matrix_row_major(out, "W1", ck.encoder.W1);
  detail::write_values(out, "b1", ck.encoder.b1.data(), ck.encoder.b1.size());
  detail::write_matrix_row_major(out, "W2", ck.encoder.W2);
  detail::write_values(out, "b2", ck.encoder.b2.data(), ck.encoder.b2.size());
  detail::write_matrix_row_major(out, "W3", ck.encoder.W3);
  detail::write_values(out, "b3", ck.encoder.b3.data(), ck.encoder.b3.size());
  detail::write_values(out, "obs_mean", ck.encoder.obs_mean.data(), ck.encoder.obs_mean.size());
  detail::write_values(out, "obs_scale", ck.encoder.obs_scale.data(), ck.encoder.obs_scale.size());
  out << "init_seed " << ck.encoder.init_seed << '\n';
  out << "train_seed " << ck.train_seed << '\n';
  out << "config_hash " << ck.config_hash << '\n';
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

// validate=false loads the raw record so callers (verification) can report
// invariant breaches themselves instead of failing at parse time.
inline Checkpoint load_checkpoint(const std::string& path, bool validate = true) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  std::string magic;
  if (!std::getline(in, magic) || magic != "letac_checkpoint v1") {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  detail::KeyReader r(in, path);
  Checkpoint ck;
  ck.dims.N = static_cast<int>(r.scalar("N"));
  ck.dims.M = static_cast<int>(r.scalar("M"));
  if (ck.dims.N <= 0 || ck.dims.M <= 0) {
    throw std::runtime_error("load_checkpoint: nonpositive dims in " + path);
  }
  ck.dims.dt = r.scalar("dt");
  ck.layer.eps = r.scalar("eps");
  ck.layer.Q_v = r.scalar("Q_v");
  ck.layer.Q_a = r.scalar("Q_a");
  ck.layer.P = r.scalar("P");
  ck.layer.A_f = detail::to_vector(r.expect("A_f", ck.dims.M));
  ck.layer.L_f = detail::to_matrix_row_major(
      r.expect("L_f", static_cast<Eigen::Index>(ck.dims.M) * ck.dims.M), ck.dims.M, ck.dims.M);
  {
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error(path + ": missing encoder header");
    std::istringstream ls(line);
    std::string k;
    int K = 0, h = 0, M = 0;
    ls >> k >> K >> h >> M;
    if (k != "encoder" || K <= 0 || h <= 0 || M <= 0) {
      throw std::runtime_error(path + ": bad encoder header");
    }
    ck.encoder.W1 = detail::to_matrix_row_major(
        r.expect("W1", static_cast<Eigen::Index>(h) * K), h, K);
    ck.encoder.b1 = detail::to_vector(r.expect("b1", h));
    ck.encoder.W2 = detail::to_matrix_row_major(
        r.expect("W2", static_cast<Eigen::Index>(h) * h), h, h);
    ck.encoder.b2 = detail::to_vector(r.expect("b2", h));
    ck.encoder.W3 = detail::to_matrix_row_major(
        r.expect("W3", static_cast<Eigen::Index>(M) * h), M, h);
    ck.encoder.b3 = detail::to_vector(r.expect("b3", M));
    ck.encoder.obs_mean = detail::to_vector(r.expect("obs_mean", K));
    ck.encoder.obs_scale = detail::to_vector(r.expect("obs_scale", K));
  }
  ck.encoder.init_seed = static_cast<std::uint64_t>(std::stoull(r.raw("init_seed")));
  ck.train_seed = static_cast<std::uint64_t>(std::stoull(r.raw("train_seed")));
  ck.config_hash = r.raw("config_hash");
  if (validate) ck.validate();
  return ck;
}

}  // namespace letac
