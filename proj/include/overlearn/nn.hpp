#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "overlearn/common.hpp"
#include "overlearn/error.hpp"
#include "overlearn/rng.hpp"

namespace overlearn {

enum class Activation { identity, tanh_fn };

struct DenseLayer {
  Matrix W;  // in x out
  Vector b;  // out
  Activation act = Activation::tanh_fn;

  int input_dim() const { return static_cast<int>(W.rows()); }
  int output_dim() const { return static_cast<int>(W.cols()); }
};

/// Glorot-uniform weights (U[-sqrt(6/(fan_in+fan_out)), +...]), zero biases.
inline DenseLayer make_dense(int in, int out, Activation act, Rng& rng) {
  if (in < 1 || out < 1) throw ValidationError("make_dense: dims must be >= 1");
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  DenseLayer l;
  l.W = rng.uniform_matrix(in, out, -limit, limit);
  l.b = Vector::Zero(out);
  l.act = act;
  return l;
}

struct Mlp {
  std::vector<DenseLayer> layers;

  int input_dim() const { return layers.empty() ? 0 : layers.front().input_dim(); }
  int output_dim() const { return layers.empty() ? 0 : layers.back().output_dim(); }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
  }
};

struct MlpCache {
  Matrix input;              // batch fed to the first layer
  std::vector<Matrix> post;  // post-activation output per layer
};

struct MlpGrads {
  std::vector<Matrix> dW;
  std::vector<Vector> db;

  void init_like(const Mlp& m) {
    dW.clear();
    db.clear();
    for (const auto& l : m.layers) {
      dW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
      db.push_back(Vector::Zero(l.b.size()));
    }
  }
};

/// Row-batched forward pass; with a cache, keeps what backward needs.
inline Matrix mlp_forward(const Mlp& m, const Matrix& X, MlpCache* cache = nullptr) {
  Matrix h = X;
  if (cache) {
    cache->input = X;
    cache->post.clear();
  }
  for (const auto& l : m.layers) {
    Matrix pre = (h * l.W).rowwise() + l.b.transpose();
    if (l.act == Activation::tanh_fn)
      h = pre.array().tanh();
    else
      h = std::move(pre);
    if (cache) cache->post.push_back(h);
  }
  return h;
}

/// Backward pass from d(loss)/d(output); accumulates parameter gradients
/// into `grads` and returns d(loss)/d(input).
inline Matrix mlp_backward(const Mlp& m, const MlpCache& cache, Matrix d_out,
                           MlpGrads& grads) {
  if (grads.dW.size() != m.layers.size()) grads.init_like(m);
  for (std::size_t i = m.layers.size(); i-- > 0;) {
    const DenseLayer& l = m.layers[i];
    const Matrix& out = cache.post[i];
    Matrix d_pre;
    if (l.act == Activation::tanh_fn)
      d_pre = d_out.array() * (1.0 - out.array().square());
    else
      d_pre = std::move(d_out);
    const Matrix& in = (i == 0) ? cache.input : cache.post[i - 1];
    grads.dW[i] += in.transpose() * d_pre;
    grads.db[i] += d_pre.colwise().sum().transpose();
    d_out = d_pre * l.W.transpose();
  }
  return d_out;
}

/// Adaptive-moment optimizer state for one Mlp.
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  long t = 0;
  std::vector<Matrix> mW, vW;
  std::vector<Vector> mb, vb;

  void init(const Mlp& m) {
    t = 0;
    mW.clear(); vW.clear(); mb.clear(); vb.clear();
    for (const auto& l : m.layers) {
      mW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
      vW.push_back(Matrix::Zero(l.W.rows(), l.W.cols()));
      mb.push_back(Vector::Zero(l.b.size()));
      vb.push_back(Vector::Zero(l.b.size()));
    }
  }

  void step(Mlp& m, const MlpGrads& g, double lr) {
    if (mW.size() != m.layers.size()) init(m);
    ++t;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < m.layers.size(); ++i) {
      mW[i] = beta1 * mW[i] + (1.0 - beta1) * g.dW[i];
      vW[i] = (beta2 * vW[i].array() + (1.0 - beta2) * g.dW[i].array().square()).matrix();
      mb[i] = beta1 * mb[i] + (1.0 - beta1) * g.db[i];
      vb[i] = (beta2 * vb[i].array() + (1.0 - beta2) * g.db[i].array().square()).matrix();
      m.layers[i].W.array() -=
          lr * (mW[i].array() / c1) / ((vW[i].array() / c2).sqrt() + eps);
      m.layers[i].b.array() -=
          lr * (mb[i].array() / c1) / ((vb[i].array() / c2).sqrt() + eps);
    }
  }
};

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    p.row(i) = e / e.sum();
  }
  return p;
}

/// -mean_i log p_i[label_i]
inline double cross_entropy(const Matrix& probs, const std::vector<int>& labels) {
  if (static_cast<std::size_t>(probs.rows()) != labels.size())
    throw ValidationError("cross_entropy: row/label count mismatch");
  double loss = 0.0;
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (labels[static_cast<std::size_t>(i)] < 0 ||
        labels[static_cast<std::size_t>(i)] >= probs.cols())
      throw ValidationError("cross_entropy: label out of range");
    loss -= std::log(std::max(probs(i, labels[static_cast<std::size_t>(i)]), 1e-300));
  }
  return loss / static_cast<double>(probs.rows());
}

/// d(cross_entropy)/d(logits) = (softmax - onehot) / n
inline Matrix ce_logit_grad(const Matrix& probs, const std::vector<int>& labels) {
  Matrix d = probs;
  const double inv_n = 1.0 / static_cast<double>(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    d(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
  return d * inv_n;
}

inline std::vector<int> argmax_rows(const Matrix& scores) {
  std::vector<int> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    out[static_cast<std::size_t>(i)] = argmax_lowest(scores.row(i));
  return out;
}

inline double accuracy_of(const std::vector<int>& pred, const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty())
    throw ValidationError("accuracy_of: size mismatch or empty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == truth[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// --- flat parameter access, used by the finite-difference gradient check ---

inline std::size_t total_params(const std::vector<const Mlp*>& nets) {
  std::size_t n = 0;
  for (const auto* m : nets) n += m->param_count();
  return n;
}

inline Vector flatten_params(const std::vector<const Mlp*>& nets) {
  Vector v(static_cast<Eigen::Index>(total_params(nets)));
  Eigen::Index k = 0;
  for (const auto* m : nets)
    for (const auto& l : m->layers) {
      for (Eigen::Index i = 0; i < l.W.rows(); ++i)
        for (Eigen::Index j = 0; j < l.W.cols(); ++j) v[k++] = l.W(i, j);
      for (Eigen::Index i = 0; i < l.b.size(); ++i) v[k++] = l.b[i];
    }
  return v;
}

inline void unflatten_params(const Vector& v, const std::vector<Mlp*>& nets) {
  Eigen::Index k = 0;
  for (auto* m : nets)
    for (auto& l : m->layers) {
      for (Eigen::Index i = 0; i < l.W.rows(); ++i)
        for (Eigen::Index j = 0; j < l.W.cols(); ++j) l.W(i, j) = v[k++];
      for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = v[k++];
    }
}

inline Vector flatten_grads(const std::vector<const MlpGrads*>& grads) {
  std::size_t n = 0;
  for (const auto* g : grads) {
    for (const auto& w : g->dW) n += static_cast<std::size_t>(w.size());
    for (const auto& b : g->db) n += static_cast<std::size_t>(b.size());
  }
  Vector v(static_cast<Eigen::Index>(n));
  Eigen::Index k = 0;
  for (const auto* g : grads)
    for (std::size_t li = 0; li < g->dW.size(); ++li) {
      const Matrix& w = g->dW[li];
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) v[k++] = w(i, j);
      for (Eigen::Index i = 0; i < g->db[li].size(); ++i) v[k++] = g->db[li][i];
    }
  return v;
}

/// Central finite differences against an analytic gradient. The error is
/// measured per coordinate relative to the largest gradient magnitude, so
/// near-zero coordinates do not blow up the ratio.
inline double finite_difference_check(const std::vector<Mlp*>& nets,
                                      const std::function<double()>& loss,
                                      const Vector& analytic_grad, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2))
    throw ValidationError("finite_difference_check: epsilon must be in (0, 1e-2]");
  std::vector<const Mlp*> cnets(nets.begin(), nets.end());
  const Vector theta = flatten_params(cnets);
  if (theta.size() != analytic_grad.size())
    throw ValidationError("finite_difference_check: gradient size mismatch");
  Vector fd(theta.size());
  Vector probe = theta;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    probe[i] = theta[i] + epsilon;
    unflatten_params(probe, nets);
    const double up = loss();
    probe[i] = theta[i] - epsilon;
    unflatten_params(probe, nets);
    const double down = loss();
    probe[i] = theta[i];
    fd[i] = (up - down) / (2.0 * epsilon);
  }
  unflatten_params(theta, nets);
  const double scale = std::max({analytic_grad.cwiseAbs().maxCoeff(),
                                 fd.cwiseAbs().maxCoeff(), 1e-8});
  return (analytic_grad - fd).cwiseAbs().maxCoeff() / scale;
}

}  // namespace overlearn
