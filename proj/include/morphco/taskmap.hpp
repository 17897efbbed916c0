#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <deque>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "morphco/optim.hpp"
#include "morphco/rng.hpp"

#include "json.hpp"

// The task-to-morphology mapping: a small fully connected network from
// normalized task features to the 9 design scalars, squashed into the design
// box, trained online against the currently fine-tuned morphology blended
// with replayed (features, optimal-morphology) pairs from a FIFO buffer.

namespace morphco::taskmap {

struct DimensionMismatch : std::runtime_error {
  explicit DimensionMismatch(const std::string& m) : std::runtime_error(m) {}
};

class RegressionModel {
 public:
  // dims = {input, hidden..., output}; tanh hidden activations, affine
  // output squashed into [lo, hi] per component.
  RegressionModel(std::vector<int> dims, double lo, double hi)
      : dims_(std::move(dims)), lo_(lo), hi_(hi) {
    if (dims_.size() < 2) throw std::invalid_argument("need at least input and output layer");
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
      w_.emplace_back(Eigen::MatrixXd::Zero(dims_[l + 1], dims_[l]));
      b_.emplace_back(Eigen::VectorXd::Zero(dims_[l + 1]));
    }
  }

  RegressionModel(std::vector<int> dims, double lo, double hi, Rng& rng)
      : RegressionModel(std::move(dims), lo, hi) {
    for (std::size_t l = 0; l < w_.size(); ++l) {
      const double a = std::sqrt(6.0 / (w_[l].rows() + w_[l].cols()));
      for (int i = 0; i < w_[l].rows(); ++i)
        for (int j = 0; j < w_[l].cols(); ++j) w_[l](i, j) = rng.uniform(-a, a);
    }
  }

  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  double lo() const { return lo_; }
  double hi() const { return hi_; }

  Eigen::VectorXd predict(const Eigen::VectorXd& t) const {
    if (t.size() != input_dim())
      throw DimensionMismatch("predict: expected " + std::to_string(input_dim()) +
                              " features, got " + std::to_string(t.size()));
    Eigen::VectorXd a = t;
    for (std::size_t l = 0; l < w_.size(); ++l) {
      a = (w_[l] * a + b_[l]).eval();
      if (l + 1 < w_.size()) a = a.array().tanh().matrix();
    }
    return squash(a);
  }

  // L = alpha ||p_cur - f(t_cur)||^2 + (1 - alpha) sum_batch ||p_k - f(t_k)||^2,
  // with the gradient over the flat parameter vector accumulated by
  // backpropagation through the network and the output squash.
  double training_loss(const Eigen::VectorXd& t_cur, const Eigen::VectorXd& p_cur,
                       const std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& batch,
                       double alpha, Eigen::VectorXd* grad_out) const {
    std::vector<Eigen::MatrixXd> gw;
    std::vector<Eigen::VectorXd> gb;
    if (grad_out) {
      for (std::size_t l = 0; l < w_.size(); ++l) {
        gw.emplace_back(Eigen::MatrixXd::Zero(w_[l].rows(), w_[l].cols()));
        gb.emplace_back(Eigen::VectorXd::Zero(b_[l].size()));
      }
    }
    double loss = alpha * sample_loss(t_cur, p_cur, alpha, grad_out ? &gw : nullptr,
                                      grad_out ? &gb : nullptr);
    for (const auto& [tk, pk] : batch)
      loss += (1.0 - alpha) * sample_loss(tk, pk, 1.0 - alpha, grad_out ? &gw : nullptr,
                                          grad_out ? &gb : nullptr);
    if (grad_out) *grad_out = flatten(gw, gb);
    return loss;
  }

  Eigen::VectorXd flat_params() const { return flatten(w_, b_); }

  void set_flat_params(const Eigen::VectorXd& p) {
    std::size_t pos = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) {
      for (int j = 0; j < w_[l].cols(); ++j)
        for (int i = 0; i < w_[l].rows(); ++i) w_[l](i, j) = p[static_cast<int>(pos++)];
      for (int i = 0; i < b_[l].size(); ++i) b_[l](i) = p[static_cast<int>(pos++)];
    }
    if (pos != static_cast<std::size_t>(p.size()))
      throw DimensionMismatch("set_flat_params: wrong parameter count");
  }

  int param_count() const {
    int n = 0;
    for (std::size_t l = 0; l < w_.size(); ++l)
      n += static_cast<int>(w_[l].size() + b_[l].size());
    return n;
  }

  // Binary checkpoint; raw IEEE doubles, so the round trip is bit exact.
  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    const char magic[4] = {'M', 'C', 'P', '1'};
    os.write(magic, 4);
    const std::int32_t nd = static_cast<std::int32_t>(dims_.size());
    os.write(reinterpret_cast<const char*>(&nd), sizeof nd);
    for (int d : dims_) {
      const std::int32_t v = d;
      os.write(reinterpret_cast<const char*>(&v), sizeof v);
    }
    os.write(reinterpret_cast<const char*>(&lo_), sizeof lo_);
    os.write(reinterpret_cast<const char*>(&hi_), sizeof hi_);
    const Eigen::VectorXd p = flat_params();
    os.write(reinterpret_cast<const char*>(p.data()),
             static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.size())));
  }

  static RegressionModel load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || magic[0] != 'M' || magic[1] != 'C' || magic[2] != 'P' || magic[3] != '1')
      throw std::runtime_error("bad checkpoint header in " + path);
    std::int32_t nd = 0;
    is.read(reinterpret_cast<char*>(&nd), sizeof nd);
    if (!is || nd < 2 || nd > 64) throw std::runtime_error("bad checkpoint dims in " + path);
    std::vector<int> dims(static_cast<std::size_t>(nd));
    for (auto& d : dims) {
      std::int32_t v = 0;
      is.read(reinterpret_cast<char*>(&v), sizeof v);
      d = v;
    }
    double lo = 0, hi = 0;
    is.read(reinterpret_cast<char*>(&lo), sizeof lo);
    is.read(reinterpret_cast<char*>(&hi), sizeof hi);
    RegressionModel m(dims, lo, hi);
    Eigen::VectorXd p(m.param_count());
    is.read(reinterpret_cast<char*>(p.data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(p.size())));
    if (!is) throw std::runtime_error("truncated checkpoint " + path);
    m.set_flat_params(p);
    return m;
  }

 private:
  Eigen::VectorXd squash(const Eigen::VectorXd& raw) const {
    return lo_ + (hi_ - lo_) * 0.5 * (raw.array().tanh() + 1.0);
  }

  // Weighted squared error of one sample, gradients accumulated in place.
  double sample_loss(const Eigen::VectorXd& t, const Eigen::VectorXd& target, double weight,
                     std::vector<Eigen::MatrixXd>* gw, std::vector<Eigen::VectorXd>* gb) const {
    if (t.size() != input_dim() || target.size() != output_dim())
      throw DimensionMismatch("training sample dimension mismatch");
    const std::size_t nl = w_.size();
    std::vector<Eigen::VectorXd> acts(nl + 1);
    acts[0] = t;
    Eigen::VectorXd raw;
    for (std::size_t l = 0; l < nl; ++l) {
      raw = w_[l] * acts[l] + b_[l];
      acts[l + 1] = (l + 1 < nl) ? raw.array().tanh().matrix().eval() : raw;
    }
    const Eigen::VectorXd traw = raw.array().tanh();
    const Eigen::VectorXd out = lo_ + (hi_ - lo_) * 0.5 * (traw.array() + 1.0);
    const Eigen::VectorXd err = out - target;
    const double loss = err.squaredNorm();
    if (gw) {
      Eigen::VectorXd delta =
          (2.0 * weight * err.array() * (hi_ - lo_) * 0.5 * (1.0 - traw.array().square()))
              .matrix();
      for (std::size_t l = nl; l-- > 0;) {
        (*gw)[l] += delta * acts[l].transpose();
        (*gb)[l] += delta;
        if (l > 0)
          delta = ((w_[l].transpose() * delta).array() * (1.0 - acts[l].array().square()))
                      .matrix()
                      .eval();
      }
    }
    return loss;
  }

  static Eigen::VectorXd flatten(const std::vector<Eigen::MatrixXd>& w,
                                 const std::vector<Eigen::VectorXd>& b) {
    int n = 0;
    for (std::size_t l = 0; l < w.size(); ++l) n += static_cast<int>(w[l].size() + b[l].size());
    Eigen::VectorXd p(n);
    int pos = 0;
    for (std::size_t l = 0; l < w.size(); ++l) {
      for (int j = 0; j < w[l].cols(); ++j)
        for (int i = 0; i < w[l].rows(); ++i) p[pos++] = w[l](i, j);
      for (int i = 0; i < b[l].size(); ++i) p[pos++] = b[l](i);
    }
    return p;
  }

  std::vector<int> dims_;
  std::vector<Eigen::MatrixXd> w_;
  std::vector<Eigen::VectorXd> b_;
  double lo_, hi_;
};

// Fixed-capacity FIFO of (task features, optimal morphology) pairs.
class ExperienceBuffer {
 public:
  explicit ExperienceBuffer(std::size_t capacity = 100) : cap_(capacity) {}

  std::size_t size() const { return q_.size(); }
  std::size_t capacity() const { return cap_; }
  const std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>>& entries() const { return q_; }

  // Admission is strict: loss must be below the threshold.
  bool admit(const Eigen::VectorXd& t, const Eigen::VectorXd& p, double loss, double l_max) {
    if (!(loss < l_max)) return false;
    q_.emplace_back(t, p);
    if (q_.size() > cap_) q_.pop_front();
    return true;
  }

  // Uniform sample of k entries without replacement.
  std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> sample(int k, Rng& rng) const {
    const int n = static_cast<int>(q_.size());
    k = std::min(k, n);
    std::vector<int> idx(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
    std::vector<std::pair<Eigen::VectorXd, Eigen::VectorXd>> out;
    out.reserve(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      const int j = i + rng.uniform_int(n - i);
      std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      out.push_back(q_[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    }
    return out;
  }

  void save_jsonl(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    for (const auto& [t, p] : q_) {
      nlohmann::json j{{"t", std::vector<double>(t.data(), t.data() + t.size())},
                       {"p", std::vector<double>(p.data(), p.data() + p.size())}};
      os << j.dump() << "\n";
    }
  }

  static ExperienceBuffer load_jsonl(const std::string& path, std::size_t capacity = 100) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    ExperienceBuffer buf(capacity);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const nlohmann::json j = nlohmann::json::parse(line);
      const auto tv = j.at("t").get<std::vector<double>>();
      const auto pv = j.at("p").get<std::vector<double>>();
      Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(tv.data(), static_cast<int>(tv.size()));
      Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(pv.data(), static_cast<int>(pv.size()));
      buf.q_.emplace_back(std::move(t), std::move(p));
      if (buf.q_.size() > buf.cap_) buf.q_.pop_front();
    }
    return buf;
  }

 private:
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> q_;
  std::size_t cap_;
};

struct MapTrainConfig {
  double alpha = 0.3;
  int minibatch = 10;
  double learning_rate = 1e-3;
  double l_max = 0.0;  // admission threshold, set per scenario by the driver
};

// One online step: sample a mini-batch, take one SGD step on the blended loss.
inline void online_update(RegressionModel& model, const ExperienceBuffer& buffer,
                          const Eigen::VectorXd& t_cur, const Eigen::VectorXd& p_cur,
                          const MapTrainConfig& cfg, Rng& rng) {
  const auto batch = buffer.sample(cfg.minibatch, rng);
  Eigen::VectorXd grad;
  model.training_loss(t_cur, p_cur, batch, cfg.alpha, &grad);
  model.set_flat_params(optim::sgd_step(model.flat_params(), grad, cfg.learning_rate));
}

}  // namespace morphco::taskmap
