#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "overlearn/common.hpp"
#include "overlearn/dataset.hpp"
#include "overlearn/error.hpp"
#include "overlearn/model.hpp"
#include "overlearn/nn.hpp"

namespace overlearn {

/// Black-box access to one model layer: the adversary can ask for
/// representations but sees no parameters or gradients.
struct RepresentationOracle {
  std::function<Matrix(const Matrix&)> fn;
  int output_dim = 0;
  std::string model_id;
  int layer = 0;
  std::string censor_method = "none";
};

inline RepresentationOracle make_oracle(const ModelBundle& m, int layer,
                                        const std::string& censor_method = "none") {
  if (layer < 0 || layer > m.num_layers())
    throw ValidationError("make_oracle: layer out of range");
  RepresentationOracle o;
  // Copies the bundle so the oracle stays valid independently of the
  // caller's object lifetime.
  o.fn = [model = m, layer](const Matrix& X) { return layer_activations(model, layer, X); };
  o.output_dim = m.layer_dim(layer);
  o.model_id = model_id(m);
  o.layer = layer;
  o.censor_method = censor_method;
  return o;
}

struct AttackModel {
  ModelBundle net;
  Provenance trained_on;
};

struct InferResult {
  AttackModel attack;
  double accuracy = 0.0;
};

inline int max_label(const std::vector<int>& a, const std::vector<int>& b) {
  int m = 0;
  for (int v : a) m = std::max(m, v);
  for (int v : b) m = std::max(m, v);
  return m;
}

/// Fig.-1-left inference: builds (E(x), s) pairs from the adversary's aux
/// set, trains an attack classifier, and scores it on the probe
/// representations.
inline InferResult infer_attribute(const std::vector<LabeledExample>& aux,
                                   const RepresentationOracle& oracle,
                                   const RepresentationMatrix& probe_reps,
                                   const std::vector<int>& probe_attrs,
                                   const TrainConfig& cfg,
                                   const std::vector<int>& attack_widths = {256, 128}) {
  if (probe_reps.prov.model_id != oracle.model_id || probe_reps.prov.layer != oracle.layer)
    throw ValidationError("infer_attribute: probe representations do not come from the "
                          "oracle's model/layer");
  if (probe_reps.values.cols() != oracle.output_dim)
    throw ValidationError("infer_attribute: representation dim mismatch");
  if (static_cast<std::size_t>(probe_reps.values.rows()) != probe_attrs.size())
    throw ValidationError("infer_attribute: probe row/label count mismatch");
  if (aux.empty()) throw ValidationError("infer_attribute: empty aux set");
  if (dataset_id(aux) == probe_reps.prov.dataset_id)
    throw ValidationError("infer_attribute: aux set equals the probe set");

  const Matrix Z = oracle.fn(feature_matrix(aux));
  const std::vector<int> s = attr_labels(aux);
  const int classes = max_label(s, probe_attrs) + 1;

  InferResult r;
  r.attack.net = train_xy(
      build_model(oracle.output_dim, attack_widths, classes, seed_stream(cfg.seed, "attack")),
      Z, s, cfg);
  r.attack.trained_on =
      Provenance{oracle.model_id, oracle.layer, dataset_id(aux), oracle.censor_method};
  r.accuracy = accuracy_of(predict(r.attack.net, probe_reps.values), probe_attrs);
  return r;
}

/// Maps censored representations into the feature space of an uncensored
/// auxiliary model (one hidden layer sized to that space).
struct TransformModel {
  Mlp net;
  std::string source_model_id;
  int layer = 0;
};

struct DecensorResult {
  TransformModel transform;
  AttackModel attack;
  ModelBundle aux_model;
  double accuracy = 0.0;
  double initial_transform_loss = 0.0;
  double final_transform_loss = 0.0;
  // Per-iteration update order; the transform step must precede the
  // attack step on every iteration.
  std::vector<std::pair<std::string, double>> update_log;
};

/// De-censoring (Alg.-1 style): train M_aux on (x, s); per iteration fit
/// T on ||T(z) - z_aux||^2, then fit the attack model on (T(z), s); score
/// the attack on T(probe).
inline DecensorResult decensor_attack(const std::vector<LabeledExample>& aux,
                                      const RepresentationOracle& oracle,
                                      const RepresentationMatrix& probe_reps,
                                      const std::vector<int>& probe_attrs,
                                      const TrainConfig& cfg,
                                      const std::vector<int>& aux_hidden = {128, 32},
                                      const std::vector<int>& attack_widths = {256, 128}) {
  if (probe_reps.prov.model_id != oracle.model_id || probe_reps.prov.layer != oracle.layer)
    throw ValidationError("decensor_attack: probe representations do not come from the "
                          "oracle's model/layer");
  if (aux.empty()) throw ValidationError("decensor_attack: empty aux set");
  if (dataset_id(aux) == probe_reps.prov.dataset_id)
    throw ValidationError("decensor_attack: aux set equals the probe set");

  const Matrix X = feature_matrix(aux);
  const std::vector<int> s = attr_labels(aux);
  const int classes = max_label(s, probe_attrs) + 1;

  // Step 1: auxiliary model trained to predict s directly from x.
  TrainConfig aux_cfg = cfg;
  aux_cfg.epochs = 30;
  aux_cfg.seed = seed_stream(cfg.seed, "aux-train");
  ModelBundle aux_model = train_xy(
      build_model(static_cast<int>(X.cols()), aux_hidden, classes,
                  seed_stream(cfg.seed, "aux-model")),
      X, s, aux_cfg);
  const int aux_dim = aux_model.layer_dim(aux_model.num_layers());

  const Matrix Zc = oracle.fn(X);                                        // censored
  const Matrix Za = layer_activations(aux_model, aux_model.num_layers(), X);  // uncensored

  DecensorResult r;
  Rng init_rng(seed_stream(cfg.seed, "transform-init"));
  r.transform.net.layers.push_back(
      make_dense(static_cast<int>(Zc.cols()), aux_dim, Activation::tanh_fn, init_rng));
  r.transform.net.layers.push_back(make_dense(aux_dim, aux_dim, Activation::identity, init_rng));
  r.transform.source_model_id = oracle.model_id;
  r.transform.layer = oracle.layer;

  r.attack.net = build_model(aux_dim, attack_widths, classes, seed_stream(cfg.seed, "attack"));
  r.attack.trained_on =
      Provenance{oracle.model_id, oracle.layer, dataset_id(aux), oracle.censor_method};

  auto transform_loss = [&]() {
    return (mlp_forward(r.transform.net, Zc) - Za).squaredNorm() /
           static_cast<double>(Zc.rows());
  };
  r.initial_transform_loss = transform_loss();

  const auto n = static_cast<std::size_t>(X.rows());
  Rng shuffle(seed_stream(cfg.seed, "shuffle"));
  AdamState opt_t, opt_a_enc, opt_a_cls;
  opt_t.init(r.transform.net);
  opt_a_enc.init(r.attack.net.encoder);
  opt_a_cls.init(r.attack.net.classifier);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = shuffle.permutation(n);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto bs = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
      Matrix zb(static_cast<Eigen::Index>(bs), Zc.cols());
      Matrix zab(static_cast<Eigen::Index>(bs), Za.cols());
      std::vector<int> sb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        zb.row(static_cast<Eigen::Index>(i)) = Zc.row(static_cast<Eigen::Index>(perm[start + i]));
        zab.row(static_cast<Eigen::Index>(i)) = Za.row(static_cast<Eigen::Index>(perm[start + i]));
        sb[i] = s[perm[start + i]];
      }

      // transform update
      {
        MlpCache ct;
        const Matrix Tz = mlp_forward(r.transform.net, zb, &ct);
        const double loss = (Tz - zab).squaredNorm() / static_cast<double>(bs);
        if (!std::isfinite(loss))
          throw NumericError("non-finite transform loss at epoch " + std::to_string(epoch));
        MlpGrads gt;
        gt.init_like(r.transform.net);
        mlp_backward(r.transform.net, ct, 2.0 / static_cast<double>(bs) * (Tz - zab), gt);
        opt_t.step(r.transform.net, gt, cfg.learning_rate);
        r.update_log.emplace_back("transform", loss);
      }

      // attack update on the freshly transformed batch
      {
        const Matrix Tz = mlp_forward(r.transform.net, zb);
        MlpCache ce, cc;
        const Matrix h = mlp_forward(r.attack.net.encoder, Tz, &ce);
        const Matrix probs = softmax_rows(mlp_forward(r.attack.net.classifier, h, &cc));
        const double loss = cross_entropy(probs, sb);
        if (!std::isfinite(loss))
          throw NumericError("non-finite attack loss at epoch " + std::to_string(epoch));
        MlpGrads ge, gc;
        ge.init_like(r.attack.net.encoder);
        gc.init_like(r.attack.net.classifier);
        const Matrix dh = mlp_backward(r.attack.net.classifier, cc, ce_logit_grad(probs, sb), gc);
        mlp_backward(r.attack.net.encoder, ce, dh, ge);
        opt_a_enc.step(r.attack.net.encoder, ge, cfg.learning_rate);
        opt_a_cls.step(r.attack.net.classifier, gc, cfg.learning_rate);
        r.update_log.emplace_back("attack", loss);
      }
    }
  }

  r.final_transform_loss = transform_loss();
  r.aux_model = std::move(aux_model);
  r.accuracy = accuracy_of(
      predict(r.attack.net, mlp_forward(r.transform.net, probe_reps.values)), probe_attrs);
  return r;
}

struct RepurposeResult {
  ModelBundle model;
  double accuracy = 0.0;
};

inline std::vector<int> encoder_widths(const ModelBundle& m) {
  std::vector<int> w;
  for (const auto& l : m.encoder.layers) w.push_back(l.output_dim());
  return w;
}

/// Fig.-1-right re-purposing: copy encoder blocks up to `layer` from the
/// source, freshly initialize the rest, fine-tune on the attribute-labeled
/// transfer set, and report attribute accuracy on eval_set. With
/// freeze_encoder the copied blocks receive no updates.
inline RepurposeResult repurpose(const ModelBundle& source, int layer,
                                 const std::vector<LabeledExample>& transfer,
                                 const std::vector<LabeledExample>& eval_set,
                                 const TrainConfig& cfg, bool freeze_encoder = false) {
  if (transfer.empty()) throw ValidationError("repurpose: empty transfer set");
  if (layer < 0 || layer > source.num_layers())
    throw ValidationError("repurpose: layer out of range");

  const std::vector<int> s = attr_labels(transfer);
  const int classes = max_label(s, attr_labels(eval_set)) + 1;
  ModelBundle m = build_model(source.feature_dim(), encoder_widths(source), classes,
                              seed_stream(cfg.seed, "repurpose-init"));
  for (int i = 0; i < layer; ++i)
    m.encoder.layers[static_cast<std::size_t>(i)] = source.encoder.layers[static_cast<std::size_t>(i)];
  m.init_snapshot = snapshot_params(m);

  RepurposeResult r;
  r.model = train_xy(std::move(m), feature_matrix(transfer), s, cfg,
                     freeze_encoder ? layer : 0);
  r.accuracy = attr_accuracy(r.model, eval_set);
  return r;
}

/// Comparator for repurpose deltas: the same architecture trained from a
/// fresh initialization on the transfer set alone. Shares the repurpose
/// init stream, so repurpose at layer 0 is identical to it.
inline RepurposeResult scratch_baseline(const std::vector<LabeledExample>& transfer,
                                        const std::vector<int>& hidden_widths,
                                        const std::vector<LabeledExample>& eval_set,
                                        const TrainConfig& cfg) {
  if (transfer.empty()) throw ValidationError("scratch_baseline: empty transfer set");
  const std::vector<int> s = attr_labels(transfer);
  const int classes = max_label(s, attr_labels(eval_set)) + 1;
  const int fdim = static_cast<int>(transfer.front().features.size());
  ModelBundle m = build_model(fdim, hidden_widths, classes, seed_stream(cfg.seed, "repurpose-init"));

  RepurposeResult r;
  r.model = train_xy(std::move(m), feature_matrix(transfer), s, cfg);
  r.accuracy = attr_accuracy(r.model, eval_set);
  return r;
}

// ---------------------------------------------------------------------------
// Pairwise inference: p(s|z1, z2) = sigmoid(h(z1) W h(z2)^T) with a shared
// two-layer embedding h and a bilinear matrix W.

struct PairwiseHead {
  Mlp h;
  Matrix W;

  Vector scores(const Matrix& Z1, const Matrix& Z2) const {
    const Matrix u = mlp_forward(h, Z1);
    const Matrix v = mlp_forward(h, Z2);
    return ((u * W).array() * v.array()).rowwise().sum();
  }

  /// p in (0,1) per pair.
  Vector probabilities(const Matrix& Z1, const Matrix& Z2) const {
    return scores(Z1, Z2).unaryExpr([](double t) { return 1.0 / (1.0 + std::exp(-t)); });
  }
};

struct PairwiseResult {
  PairwiseHead head;
  double accuracy = 0.0;
};

/// Trains the bilinear pairwise model with binary cross-entropy and
/// reports accuracy at the 0.5 threshold (a probability of exactly 0.5
/// predicts the negative class).
inline PairwiseResult pairwise_infer(const Matrix& Z1, const Matrix& Z2,
                                     const std::vector<int>& same_group,
                                     const TrainConfig& cfg,
                                     const std::vector<int>& h_widths = {64, 32}) {
  if (Z1.rows() != Z2.rows())
    throw ValidationError("pairwise_infer: pair matrices must have equal row counts");
  if (Z1.cols() != Z2.cols())
    throw ValidationError("pairwise_infer: pair matrices must have equal dims");
  if (static_cast<std::size_t>(Z1.rows()) != same_group.size())
    throw ValidationError("pairwise_infer: label count mismatch");
  cfg.validate();

  Rng rng(seed_stream(cfg.seed, "pairwise-init"));
  PairwiseResult r;
  int in = static_cast<int>(Z1.cols());
  for (int w : h_widths) {
    r.head.h.layers.push_back(make_dense(in, w, Activation::tanh_fn, rng));
    in = w;
  }
  const double limit = std::sqrt(6.0 / (2.0 * in));
  r.head.W = rng.uniform_matrix(in, in, -limit, limit);

  const auto n = static_cast<std::size_t>(Z1.rows());
  Rng shuffle(seed_stream(cfg.seed, "shuffle"));
  AdamState opt_h;
  opt_h.init(r.head.h);
  Matrix mW = Matrix::Zero(in, in), vW = Matrix::Zero(in, in);
  long t = 0;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = shuffle.permutation(n);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto bs = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
      Matrix z1(static_cast<Eigen::Index>(bs), Z1.cols()), z2(static_cast<Eigen::Index>(bs), Z2.cols());
      Vector targets(static_cast<Eigen::Index>(bs));
      for (std::size_t i = 0; i < bs; ++i) {
        z1.row(static_cast<Eigen::Index>(i)) = Z1.row(static_cast<Eigen::Index>(perm[start + i]));
        z2.row(static_cast<Eigen::Index>(i)) = Z2.row(static_cast<Eigen::Index>(perm[start + i]));
        targets[static_cast<Eigen::Index>(i)] = same_group[perm[start + i]] ? 1.0 : 0.0;
      }

      MlpCache c1, c2;
      const Matrix u = mlp_forward(r.head.h, z1, &c1);
      const Matrix v = mlp_forward(r.head.h, z2, &c2);
      const Vector score = ((u * r.head.W).array() * v.array()).rowwise().sum();
      const Vector p = score.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
      double loss = 0.0;
      for (Eigen::Index i = 0; i < p.size(); ++i)
        loss -= targets[i] > 0.5 ? std::log(std::max(p[i], 1e-300))
                                 : std::log(std::max(1.0 - p[i], 1e-300));
      loss /= static_cast<double>(bs);
      if (!std::isfinite(loss))
        throw NumericError("non-finite pairwise loss at epoch " + std::to_string(epoch));

      const Vector dscore = (p - targets) / static_cast<double>(bs);
      const Matrix dW = (u.array().colwise() * dscore.array()).matrix().transpose() * v;
      const Matrix du = ((v * r.head.W.transpose()).array().colwise() * dscore.array()).matrix();
      const Matrix dv = ((u * r.head.W).array().colwise() * dscore.array()).matrix();
      MlpGrads gh;
      gh.init_like(r.head.h);
      mlp_backward(r.head.h, c1, du, gh);
      mlp_backward(r.head.h, c2, dv, gh);
      opt_h.step(r.head.h, gh, cfg.learning_rate);

      ++t;
      const double c1b = 1.0 - std::pow(0.9, static_cast<double>(t));
      const double c2b = 1.0 - std::pow(0.999, static_cast<double>(t));
      mW = 0.9 * mW + 0.1 * dW;
      vW = (0.999 * vW.array() + 0.001 * dW.array().square()).matrix();
      r.head.W.array() -=
          cfg.learning_rate * (mW.array() / c1b) / ((vW.array() / c2b).sqrt() + 1e-8);
    }
  }

  const Vector p = r.head.probabilities(Z1, Z2);
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const int pred = p[i] > 0.5 ? 1 : 0;
    hit += pred == same_group[static_cast<std::size_t>(i)];
  }
  r.accuracy = static_cast<double>(hit) / static_cast<double>(n);
  return r;
}

/// Balanced same/different-attribute pairs from one representation set,
/// for the pairwise pipeline. Returns (Z1, Z2, labels).
inline std::tuple<Matrix, Matrix, std::vector<int>> make_attribute_pairs(
    const Matrix& reps, const std::vector<int>& attrs, std::size_t n_pairs,
    std::uint64_t seed) {
  if (static_cast<std::size_t>(reps.rows()) != attrs.size() || attrs.empty())
    throw ValidationError("make_attribute_pairs: rows/labels mismatch");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < attrs.size(); ++i) by_class[attrs[i]].push_back(i);
  if (by_class.size() < 2)
    throw ValidationError("make_attribute_pairs: need at least two attribute classes");

  Rng rng(seed);
  Matrix Z1(static_cast<Eigen::Index>(n_pairs), reps.cols());
  Matrix Z2(static_cast<Eigen::Index>(n_pairs), reps.cols());
  std::vector<int> labels(n_pairs);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const bool want_same = (k % 2 == 0);
    std::size_t i = static_cast<std::size_t>(rng.below(attrs.size()));
    std::size_t j = i;
    const auto& mates = by_class[attrs[i]];
    if (want_same && mates.size() > 1) {
      do { j = mates[static_cast<std::size_t>(rng.below(mates.size()))]; } while (j == i);
    } else {
      do { j = static_cast<std::size_t>(rng.below(attrs.size())); } while (attrs[j] == attrs[i]);
    }
    Z1.row(static_cast<Eigen::Index>(k)) = reps.row(static_cast<Eigen::Index>(i));
    Z2.row(static_cast<Eigen::Index>(k)) = reps.row(static_cast<Eigen::Index>(j));
    labels[k] = attrs[i] == attrs[j] ? 1 : 0;
  }
  return {Z1, Z2, labels};
}

}  // namespace overlearn
