#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "overlearn/common.hpp"
#include "overlearn/dataset.hpp"
#include "overlearn/error.hpp"
#include "overlearn/model.hpp"
#include "overlearn/nn.hpp"

namespace overlearn {

enum class CensorMethod { none, adversarial, info_theoretic };

inline std::string censor_method_name(CensorMethod m) {
  switch (m) {
    case CensorMethod::adversarial: return "adversarial";
    case CensorMethod::info_theoretic: return "info_theoretic";
    default: return "none";
  }
}

struct CensorConfig {
  CensorMethod method = CensorMethod::none;
  int target_layer = -1;  // -1 selects the last encoder layer
  double gamma = 1.0;     // adversarial balance
  double beta = 0.01;     // information-bottleneck coefficient
  double lambda = 1e-4;   // attribute-independence coefficient
  std::vector<int> discriminator_widths{256, 128};

  int resolve_layer(int num_layers) const {
    const int t = target_layer < 0 ? num_layers : target_layer;
    if (t < 1 || t > num_layers)
      throw ValidationError("CensorConfig: target_layer out of range");
    return t;
  }

  void validate() const {
    if (gamma < 0.0 || beta < 0.0 || lambda < 0.0)
      throw ValidationError("CensorConfig: strengths must be >= 0");
  }
};

// ---------------------------------------------------------------------------
// Adversarial censoring: a discriminator is trained to read the sensitive
// attribute off the target-layer representation while the encoder and
// classifier are trained to keep the task accurate and starve the
// discriminator.

struct AdversarialLosses {
  double encoder_classifier_loss = 0.0;
  double discriminator_loss = 0.0;
};

/// Both sides of the mini-max objective on one batch, discriminator held
/// fixed in the encoder/classifier expression:
///   discriminator_loss      = -mean log p_D(s|z)
///   encoder_classifier_loss = -mean log p_C(y|z) + gamma * mean log p_D(s|z)
inline AdversarialLosses adversarial_losses(const std::vector<LabeledExample>& batch,
                                            const ModelBundle& model,
                                            const ModelBundle& discriminator,
                                            const CensorConfig& config) {
  if (config.method != CensorMethod::adversarial)
    throw ValidationError("adversarial_losses: config.method must be adversarial");
  config.validate();
  const int t = config.resolve_layer(model.num_layers());
  const Matrix X = feature_matrix(batch);
  const Matrix z = layer_activations(model, t, X);
  if (z.cols() != discriminator.feature_dim())
    throw ValidationError("adversarial_losses: discriminator input dim mismatch");

  const double disc_ce = cross_entropy(forward_probs(discriminator, z), attr_labels(batch));
  const double task_ce = cross_entropy(forward_probs(model, X), task_labels(batch));
  AdversarialLosses out;
  out.discriminator_loss = disc_ce;
  out.encoder_classifier_loss = task_ce - config.gamma * disc_ce;
  return out;
}

struct AdversarialResult {
  ModelBundle model;
  ModelBundle discriminator;
  std::vector<TrainLogEntry> discriminator_log;
};

/// Alternating optimization of Eq.-style mini-max censoring: per batch,
/// one discriminator step on -log p(s|z), then one encoder/classifier
/// step on the combined loss with the discriminator frozen.
inline AdversarialResult train_adversarial_censored(const DatasetBundle& bundle,
                                                    ModelBundle model,
                                                    const CensorConfig& config,
                                                    const TrainConfig& cfg) {
  if (config.method != CensorMethod::adversarial)
    throw ValidationError("train_adversarial_censored: method must be adversarial");
  config.validate();
  cfg.validate();
  const int t = config.resolve_layer(model.num_layers());
  const Matrix X = feature_matrix(bundle.train);
  const std::vector<int> y = task_labels(bundle.train);
  const std::vector<int> s = attr_labels(bundle.train);
  const int attr_classes = bundle.meta.num_attr_classes;

  // The encoder splits at the censored layer so the discriminator
  // gradient can be injected there on the way down.
  Mlp enc_low, enc_high;
  for (int i = 0; i < model.num_layers(); ++i)
    (i < t ? enc_low : enc_high).layers.push_back(model.encoder.layers[static_cast<std::size_t>(i)]);

  ModelBundle disc = build_model(model.layer_dim(t), config.discriminator_widths,
                                 attr_classes, seed_stream(cfg.seed, "discriminator"));

  const auto n = static_cast<std::size_t>(X.rows());
  Rng shuffle(seed_stream(cfg.seed, "shuffle"));
  AdamState opt_low, opt_high, opt_cls, opt_disc_e, opt_disc_c;
  opt_low.init(enc_low);
  opt_high.init(enc_high);
  opt_cls.init(model.classifier);
  opt_disc_e.init(disc.encoder);
  opt_disc_c.init(disc.classifier);

  AdversarialResult result;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = shuffle.permutation(n);
    double enc_loss_sum = 0.0, disc_loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto bs = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
      Matrix Xb(static_cast<Eigen::Index>(bs), X.cols());
      std::vector<int> yb(bs), sb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        Xb.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(perm[start + i]));
        yb[i] = y[perm[start + i]];
        sb[i] = s[perm[start + i]];
      }

      MlpCache c_low, c_high, c_cls;
      const Matrix zt = mlp_forward(enc_low, Xb, &c_low);
      const Matrix zL = mlp_forward(enc_high, zt, &c_high);
      const Matrix task_probs = softmax_rows(mlp_forward(model.classifier, zL, &c_cls));

      // discriminator step (representation fixed)
      {
        MlpCache cd_e, cd_c;
        const Matrix dz = mlp_forward(disc.encoder, zt, &cd_e);
        const Matrix dp = softmax_rows(mlp_forward(disc.classifier, dz, &cd_c));
        const double dloss = cross_entropy(dp, sb);
        if (!std::isfinite(dloss))
          throw NumericError("non-finite discriminator loss at epoch " +
                             std::to_string(epoch) + " batch " + std::to_string(batches));
        disc_loss_sum += dloss;
        MlpGrads ge, gc;
        ge.init_like(disc.encoder);
        gc.init_like(disc.classifier);
        const Matrix dd = mlp_backward(disc.classifier, cd_c, ce_logit_grad(dp, sb), gc);
        mlp_backward(disc.encoder, cd_e, dd, ge);
        opt_disc_e.step(disc.encoder, ge, cfg.learning_rate);
        opt_disc_c.step(disc.classifier, gc, cfg.learning_rate);
      }

      // encoder/classifier step against the updated, now-frozen discriminator
      {
        const double task_ce = cross_entropy(task_probs, yb);
        MlpCache cd_e, cd_c;
        const Matrix dz = mlp_forward(disc.encoder, zt, &cd_e);
        const Matrix dp = softmax_rows(mlp_forward(disc.classifier, dz, &cd_c));
        const double disc_ce = cross_entropy(dp, sb);
        const double enc_loss = task_ce - config.gamma * disc_ce;
        if (!std::isfinite(enc_loss))
          throw NumericError("non-finite censoring loss at epoch " +
                             std::to_string(epoch) + " batch " + std::to_string(batches));
        enc_loss_sum += enc_loss;

        MlpGrads g_low, g_high, g_cls, g_disc_e, g_disc_c;
        g_low.init_like(enc_low);
        g_high.init_like(enc_high);
        g_cls.init_like(model.classifier);
        const Matrix d_zL =
            mlp_backward(model.classifier, c_cls, ce_logit_grad(task_probs, yb), g_cls);
        Matrix d_zt = mlp_backward(enc_high, c_high, d_zL, g_high);
        // d/dz of gamma * mean log p_D(s|z) = -gamma * d(disc CE)/dz
        g_disc_e.init_like(disc.encoder);
        g_disc_c.init_like(disc.classifier);
        const Matrix dd = mlp_backward(disc.classifier, cd_c, ce_logit_grad(dp, sb), g_disc_c);
        d_zt.noalias() -= config.gamma * mlp_backward(disc.encoder, cd_e, dd, g_disc_e);
        mlp_backward(enc_low, c_low, d_zt, g_low);

        opt_low.step(enc_low, g_low, cfg.learning_rate);
        opt_high.step(enc_high, g_high, cfg.learning_rate);
        opt_cls.step(model.classifier, g_cls, cfg.learning_rate);
      }
      ++batches;
    }

    model.encoder.layers.clear();
    for (const auto& l : enc_low.layers) model.encoder.layers.push_back(l);
    for (const auto& l : enc_high.layers) model.encoder.layers.push_back(l);

    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.loss = enc_loss_sum / std::max(batches, 1);
    entry.accuracy = accuracy_of(predict(model, X), y);
    model.training_log.push_back(entry);
    result.discriminator_log.push_back(
        TrainLogEntry{epoch, disc_loss_sum / std::max(batches, 1), 0.0});
  }

  result.model = std::move(model);
  result.discriminator = std::move(disc);
  return result;
}

// ---------------------------------------------------------------------------
// Information-theoretic censoring: the target layer's dense map is
// replaced by a stochastic head (mu, log-sigma with reparameterized
// sampling) and the objective adds a KL term against N(0, I) plus a
// reconstruction term through a decoder conditioned on the attribute.

struct StochasticEncoderHead {
  Mlp trunk;       // encoder blocks below the target layer
  Mlp mean_map;    // single identity-activation dense layer
  Mlp logstd_map;  // same shape as mean_map
  int latent_dim = 0;
};

struct DecoderHead {
  Mlp net;  // (latent + one-hot attr) -> feature_dim
  int attr_classes = 0;
};

struct ItCensoredModel {
  StochasticEncoderHead head;
  Mlp suffix;  // encoder blocks above the target layer
  Mlp classifier;
  DecoderHead decoder;
  int target_layer = 0;
  std::uint64_t seed = 0;
  std::vector<TrainLogEntry> training_log;
  ParameterSnapshot init_eval_snapshot;  // assembled eval view at init

  /// Deterministic evaluation view: z = mu, no sampling. Layer indices
  /// line up with the uncensored architecture.
  ModelBundle to_model_bundle() const {
    ModelBundle m;
    m.seed = seed;
    for (const auto& l : head.trunk.layers) m.encoder.layers.push_back(l);
    m.encoder.layers.push_back(head.mean_map.layers.front());
    for (const auto& l : suffix.layers) m.encoder.layers.push_back(l);
    m.classifier = classifier;
    m.init_snapshot = init_eval_snapshot;
    m.training_log = training_log;
    return m;
  }
};

inline ItCensoredModel build_it_censored(int feature_dim, const std::vector<int>& hidden_widths,
                                         int num_task_classes, int num_attr_classes,
                                         const CensorConfig& config, std::uint64_t seed) {
  if (hidden_widths.empty())
    throw ValidationError("build_it_censored: need at least one encoder layer");
  const int t = config.resolve_layer(static_cast<int>(hidden_widths.size()));
  ItCensoredModel m;
  m.seed = seed;
  m.target_layer = t;
  Rng rng(seed);
  int in = feature_dim;
  for (int i = 0; i + 1 < t; ++i) {
    m.head.trunk.layers.push_back(make_dense(in, hidden_widths[static_cast<std::size_t>(i)],
                                             Activation::tanh_fn, rng));
    in = hidden_widths[static_cast<std::size_t>(i)];
  }
  m.head.latent_dim = hidden_widths[static_cast<std::size_t>(t - 1)];
  m.head.mean_map.layers.push_back(make_dense(in, m.head.latent_dim, Activation::identity, rng));
  m.head.logstd_map.layers.push_back(make_dense(in, m.head.latent_dim, Activation::identity, rng));
  in = m.head.latent_dim;
  for (int i = t; i < static_cast<int>(hidden_widths.size()); ++i) {
    m.suffix.layers.push_back(make_dense(in, hidden_widths[static_cast<std::size_t>(i)],
                                         Activation::tanh_fn, rng));
    in = hidden_widths[static_cast<std::size_t>(i)];
  }
  m.classifier.layers.push_back(make_dense(in, num_task_classes, Activation::identity, rng));

  // Decoder mirrors the trunk widths back out to the input dimension.
  m.decoder.attr_classes = num_attr_classes;
  int din = m.head.latent_dim + num_attr_classes;
  for (std::size_t i = m.head.trunk.layers.size(); i-- > 0;) {
    const int w = m.head.trunk.layers[i].output_dim();
    m.decoder.net.layers.push_back(make_dense(din, w, Activation::tanh_fn, rng));
    din = w;
  }
  m.decoder.net.layers.push_back(make_dense(din, feature_dim, Activation::identity, rng));

  m.init_eval_snapshot = snapshot_params(m.to_model_bundle());
  return m;
}

/// Mean KL[N(mu, diag sigma^2) || N(0, I)] over rows;
/// per row 1/2 sum_j (mu_j^2 + sigma_j^2 - log sigma_j^2 - 1).
inline double kl_standard_normal(const Matrix& mu, const Matrix& logstd) {
  if (mu.rows() != logstd.rows() || mu.cols() != logstd.cols())
    throw ValidationError("kl_standard_normal: shape mismatch");
  const Matrix var = (2.0 * logstd).array().exp();
  const double total =
      0.5 * (mu.array().square() + var.array() - 2.0 * logstd.array() - 1.0).sum();
  return total / static_cast<double>(mu.rows());
}

struct ItLossParts {
  double task_nll = 0.0;
  double kl = 0.0;
  double recon = 0.0;
  double total(double beta, double lambda) const {
    return task_nll + (beta + lambda) * kl + lambda * recon;
  }
};

struct ItGrads {
  MlpGrads trunk, mean, logstd, suffix, classifier, decoder;
  void init_like(const ItCensoredModel& m) {
    trunk.init_like(m.head.trunk);
    mean.init_like(m.head.mean_map);
    logstd.init_like(m.head.logstd_map);
    suffix.init_like(m.suffix);
    classifier.init_like(m.classifier);
    decoder.init_like(m.decoder.net);
  }
};

inline Matrix onehot_rows(const std::vector<int>& labels, int classes) {
  Matrix m = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes)
      throw ValidationError("onehot_rows: label out of range");
    m(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return m;
}

/// Loss = task_nll + (beta+lambda)*KL + lambda*recon with one latent
/// sample z = mu + sigma .* eta per example; recon is the half mean
/// squared reconstruction error of the attribute-conditioned decoder.
/// `eta` is supplied by the caller so finite-difference checks can hold
/// the noise fixed. Pass `grads` to also accumulate analytic gradients.
inline ItLossParts it_censor_loss(const ItCensoredModel& m, const Matrix& X,
                                  const std::vector<int>& y, const std::vector<int>& s,
                                  double beta, double lambda, const Matrix& eta,
                                  ItGrads* grads = nullptr) {
  if (beta < 0.0 || lambda < 0.0)
    throw ValidationError("it_censor_loss: coefficients must be >= 0");
  const auto n = X.rows();
  if (eta.rows() != n || eta.cols() != m.head.latent_dim)
    throw ValidationError("it_censor_loss: eta shape mismatch");

  MlpCache c_trunk, c_mean, c_logstd, c_suffix, c_cls, c_dec;
  const Matrix a = m.head.trunk.layers.empty() ? X : mlp_forward(m.head.trunk, X, &c_trunk);
  const Matrix mu = mlp_forward(m.head.mean_map, a, &c_mean);
  const Matrix lo = mlp_forward(m.head.logstd_map, a, &c_logstd);
  const Matrix sigma = lo.array().exp();
  if (!sigma.allFinite()) throw NumericError("it_censor_loss: non-finite sigma");
  const Matrix z = mu + (sigma.array() * eta.array()).matrix();

  const Matrix h = m.suffix.layers.empty() ? z : mlp_forward(m.suffix, z, &c_suffix);
  const Matrix probs = softmax_rows(mlp_forward(m.classifier, h, &c_cls));

  const Matrix dec_in = (Matrix(n, z.cols() + m.decoder.attr_classes)
                             << z, onehot_rows(s, m.decoder.attr_classes))
                            .finished();
  const Matrix xhat = mlp_forward(m.decoder.net, dec_in, &c_dec);

  ItLossParts parts;
  parts.task_nll = cross_entropy(probs, y);
  parts.kl = kl_standard_normal(mu, lo);
  parts.recon = 0.5 * (xhat - X).squaredNorm() / static_cast<double>(n);

  if (grads) {
    grads->init_like(m);
    const double inv_n = 1.0 / static_cast<double>(n);
    Matrix dz;
    {
      const Matrix dh = mlp_backward(m.classifier, c_cls, ce_logit_grad(probs, y),
                                     grads->classifier);
      dz = m.suffix.layers.empty() ? dh : mlp_backward(m.suffix, c_suffix, dh, grads->suffix);
    }
    if (lambda > 0.0) {
      const Matrix dxhat = lambda * inv_n * (xhat - X);
      const Matrix ddec_in = mlp_backward(m.decoder.net, c_dec, dxhat, grads->decoder);
      dz += ddec_in.leftCols(z.cols());
    }
    const double w = beta + lambda;
    const Matrix dmu = dz + (w * inv_n) * mu;
    const Matrix dlo = (dz.array() * sigma.array() * eta.array()).matrix() +
                       (w * inv_n) * ((sigma.array().square() - 1.0).matrix());
    Matrix da = mlp_backward(m.head.mean_map, c_mean, dmu, grads->mean);
    da += mlp_backward(m.head.logstd_map, c_logstd, dlo, grads->logstd);
    if (!m.head.trunk.layers.empty()) mlp_backward(m.head.trunk, c_trunk, da, grads->trunk);
  }
  return parts;
}

struct ItTrainResult {
  ItCensoredModel model;
  bool task_improved_over_majority = false;  // non-convergence is reported, not hidden
};

/// Joint minimization of the censoring objective over trunk, heads,
/// suffix, classifier and decoder; one latent sample per example per step.
inline ItTrainResult train_it_censored(const DatasetBundle& bundle,
                                       const std::vector<int>& hidden_widths,
                                       const CensorConfig& config, const TrainConfig& cfg) {
  if (config.method != CensorMethod::info_theoretic)
    throw ValidationError("train_it_censored: method must be info_theoretic");
  config.validate();
  cfg.validate();

  const Matrix X = feature_matrix(bundle.train);
  const std::vector<int> y = task_labels(bundle.train);
  const std::vector<int> s = attr_labels(bundle.train);

  ItCensoredModel model = build_it_censored(
      static_cast<int>(X.cols()), hidden_widths, bundle.meta.num_task_classes,
      bundle.meta.num_attr_classes, config, seed_stream(cfg.seed, "it-model"));

  const auto n = static_cast<std::size_t>(X.rows());
  Rng shuffle(seed_stream(cfg.seed, "shuffle"));
  Rng noise(seed_stream(cfg.seed, "latent-noise"));
  AdamState opt_trunk, opt_mean, opt_logstd, opt_suffix, opt_cls, opt_dec;
  opt_trunk.init(model.head.trunk);
  opt_mean.init(model.head.mean_map);
  opt_logstd.init(model.head.logstd_map);
  opt_suffix.init(model.suffix);
  opt_cls.init(model.classifier);
  opt_dec.init(model.decoder.net);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = shuffle.permutation(n);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto bs = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
      Matrix Xb(static_cast<Eigen::Index>(bs), X.cols());
      std::vector<int> yb(bs), sb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        Xb.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(perm[start + i]));
        yb[i] = y[perm[start + i]];
        sb[i] = s[perm[start + i]];
      }
      const Matrix eta = noise.normal_matrix(static_cast<Eigen::Index>(bs), model.head.latent_dim);
      ItGrads grads;
      const ItLossParts parts =
          it_censor_loss(model, Xb, yb, sb, config.beta, config.lambda, eta, &grads);
      const double loss = parts.total(config.beta, config.lambda);
      if (!std::isfinite(loss))
        throw NumericError("non-finite censoring loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(batches));
      loss_sum += loss;
      ++batches;
      opt_trunk.step(model.head.trunk, grads.trunk, cfg.learning_rate);
      opt_mean.step(model.head.mean_map, grads.mean, cfg.learning_rate);
      opt_logstd.step(model.head.logstd_map, grads.logstd, cfg.learning_rate);
      opt_suffix.step(model.suffix, grads.suffix, cfg.learning_rate);
      opt_cls.step(model.classifier, grads.classifier, cfg.learning_rate);
      opt_dec.step(model.decoder.net, grads.decoder, cfg.learning_rate);
    }
    const ModelBundle eval = model.to_model_bundle();
    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / std::max(batches, 1);
    entry.accuracy = accuracy_of(predict(eval, X), y);
    model.training_log.push_back(entry);
  }

  ItTrainResult result;
  const ModelBundle eval = model.to_model_bundle();
  std::map<int, int> counts;
  for (int label : y) counts[label]++;
  int majority = 0;
  for (const auto& [label, c] : counts) majority = std::max(majority, c);
  const double majority_acc = static_cast<double>(majority) / static_cast<double>(y.size());
  result.task_improved_over_majority = accuracy_of(predict(eval, X), y) > majority_acc + 0.01;
  result.model = std::move(model);
  return result;
}

// Checkpoint extension for censored models.

inline Json censor_config_to_json(const CensorConfig& c) {
  Json j;
  j["method"] = censor_method_name(c.method);
  j["target_layer"] = c.target_layer;
  j["gamma"] = c.gamma;
  j["beta"] = c.beta;
  j["lambda"] = c.lambda;
  j["discriminator_widths"] = c.discriminator_widths;
  return j;
}

inline CensorConfig censor_config_from_json(const Json& j) {
  CensorConfig c;
  const std::string m = j.at("method");
  if (m == "adversarial") c.method = CensorMethod::adversarial;
  else if (m == "info_theoretic") c.method = CensorMethod::info_theoretic;
  else if (m == "none") c.method = CensorMethod::none;
  else throw ParseError("unknown censor method '" + m + "'");
  c.target_layer = j.at("target_layer").get<int>();
  c.gamma = j.at("gamma").get<double>();
  c.beta = j.at("beta").get<double>();
  c.lambda = j.at("lambda").get<double>();
  c.discriminator_widths = j.at("discriminator_widths").get<std::vector<int>>();
  return c;
}

/// Saves the deterministic eval view as an ordinary model checkpoint and
/// appends the stochastic/decoder parameters plus the censor config, so
/// plain load_model() still works on it.
inline void save_it_censored(const std::string& path, const ItCensoredModel& m,
                             const CensorConfig& config) {
  Json extras;
  extras["kind"] = "censored_model";
  extras["censor"] = censor_config_to_json(config);
  extras["logstd_map"] = mlp_to_json(m.head.logstd_map);
  extras["decoder"] = mlp_to_json(m.decoder.net);
  extras["decoder_attr_classes"] = m.decoder.attr_classes;
  extras["target_layer"] = m.target_layer;
  save_model(path, m.to_model_bundle(), extras);
}

}  // namespace overlearn
