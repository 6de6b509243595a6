#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "overlearn/common.hpp"
#include "overlearn/dataset.hpp"
#include "overlearn/error.hpp"
#include "overlearn/nn.hpp"
#include "overlearn/rng.hpp"

namespace overlearn {

using Json = nlohmann::ordered_json;

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
  bool record_snapshots = false;  // keep per-epoch parameter copies

  void validate() const {
    if (epochs < 1) throw ValidationError("TrainConfig: epochs must be >= 1");
    if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
    if (!(learning_rate >= 0.0))
      throw ValidationError("TrainConfig: learning_rate must be >= 0");
  }
};

struct TrainLogEntry {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

/// Full parameter copy, encoder blocks first, classifier last.
struct ParameterSnapshot {
  std::vector<Matrix> W;
  std::vector<Vector> b;
};

/// Encoder/classifier pair with addressable layer representations.
/// Representation index l: 0 is the raw input, l in [1, num_layers()] is
/// the post-activation output of encoder block l.
struct ModelBundle {
  Mlp encoder;     // tanh blocks
  Mlp classifier;  // logits head, identity activation
  ParameterSnapshot init_snapshot;
  std::uint64_t seed = 0;
  std::vector<TrainLogEntry> training_log;
  std::vector<ParameterSnapshot> epoch_snapshots;  // with record_snapshots; [0] is init

  int feature_dim() const {
    return encoder.layers.empty() ? classifier.input_dim() : encoder.input_dim();
  }
  int num_classes() const { return classifier.output_dim(); }
  int num_layers() const { return static_cast<int>(encoder.layers.size()); }
  int layer_dim(int layer) const {
    if (layer < 0 || layer > num_layers())
      throw ValidationError("layer index out of range: " + std::to_string(layer));
    return layer == 0 ? feature_dim() : encoder.layers[layer - 1].output_dim();
  }
};

inline ParameterSnapshot snapshot_params(const ModelBundle& m) {
  ParameterSnapshot s;
  for (const auto& l : m.encoder.layers) { s.W.push_back(l.W); s.b.push_back(l.b); }
  for (const auto& l : m.classifier.layers) { s.W.push_back(l.W); s.b.push_back(l.b); }
  return s;
}

inline void restore_params(ModelBundle& m, const ParameterSnapshot& s) {
  std::size_t k = 0;
  for (auto& l : m.encoder.layers) { l.W = s.W[k]; l.b = s.b[k]; ++k; }
  for (auto& l : m.classifier.layers) { l.W = s.W[k]; l.b = s.b[k]; ++k; }
}

inline std::string model_id(const ModelBundle& m) {
  std::uint64_t h = fnv1a64(&m.seed, sizeof(m.seed));
  for (const auto& l : m.encoder.layers) h = hash_matrix(l.W, hash_matrix(l.b, h));
  for (const auto& l : m.classifier.layers) h = hash_matrix(l.W, hash_matrix(l.b, h));
  return hex64(h);
}

inline ModelBundle build_model(int feature_dim, const std::vector<int>& hidden_widths,
                               int num_classes, std::uint64_t seed) {
  if (feature_dim < 1 || num_classes < 1)
    throw ValidationError("build_model: dims must be >= 1");
  for (int w : hidden_widths)
    if (w < 1) throw ValidationError("build_model: hidden widths must be >= 1");
  ModelBundle m;
  m.seed = seed;
  Rng rng(seed);
  int in = feature_dim;
  for (int w : hidden_widths) {
    m.encoder.layers.push_back(make_dense(in, w, Activation::tanh_fn, rng));
    in = w;
  }
  m.classifier.layers.push_back(make_dense(in, num_classes, Activation::identity, rng));
  m.init_snapshot = snapshot_params(m);
  return m;
}

/// Class probabilities for a batch (softmax over the classifier logits).
inline Matrix forward_probs(const ModelBundle& m, const Matrix& X) {
  return softmax_rows(mlp_forward(m.classifier, mlp_forward(m.encoder, X)));
}

inline std::vector<int> predict(const ModelBundle& m, const Matrix& X) {
  return argmax_rows(forward_probs(m, X));
}

inline double task_accuracy(const ModelBundle& m, const std::vector<LabeledExample>& ex) {
  return accuracy_of(predict(m, feature_matrix(ex)), task_labels(ex));
}

inline double attr_accuracy(const ModelBundle& m, const std::vector<LabeledExample>& ex) {
  return accuracy_of(predict(m, feature_matrix(ex)), attr_labels(ex));
}

/// Mini-batch cross-entropy training with adaptive moments. Encoder
/// blocks below `trainable_from` receive no updates.
inline ModelBundle train_xy(ModelBundle model, const Matrix& X, const std::vector<int>& y,
                            const TrainConfig& cfg, int trainable_from = 0) {
  cfg.validate();
  if (X.cols() != model.feature_dim())
    throw ValidationError("train_xy: feature dimension mismatch");
  if (static_cast<std::size_t>(X.rows()) != y.size())
    throw ValidationError("train_xy: row/label count mismatch");

  const auto n = static_cast<std::size_t>(X.rows());
  Rng shuffle(seed_stream(cfg.seed, "shuffle"));
  AdamState opt_enc, opt_cls;
  opt_enc.init(model.encoder);
  opt_cls.init(model.classifier);

  if (cfg.record_snapshots) {
    model.epoch_snapshots.clear();
    model.epoch_snapshots.push_back(snapshot_params(model));
  }

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto perm = shuffle.permutation(n);
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const auto bs = std::min(static_cast<std::size_t>(cfg.batch_size), n - start);
      Matrix Xb(static_cast<Eigen::Index>(bs), X.cols());
      std::vector<int> yb(bs);
      for (std::size_t i = 0; i < bs; ++i) {
        Xb.row(static_cast<Eigen::Index>(i)) = X.row(static_cast<Eigen::Index>(perm[start + i]));
        yb[i] = y[perm[start + i]];
      }
      MlpCache ce, cc;
      const Matrix z = mlp_forward(model.encoder, Xb, &ce);
      const Matrix probs = softmax_rows(mlp_forward(model.classifier, z, &cc));
      const double loss = cross_entropy(probs, yb);
      if (!std::isfinite(loss))
        throw NumericError("non-finite task loss at epoch " + std::to_string(epoch) +
                           " batch " + std::to_string(batches));
      loss_sum += loss;
      ++batches;

      MlpGrads genc, gcls;
      genc.init_like(model.encoder);
      gcls.init_like(model.classifier);
      const Matrix dz = mlp_backward(model.classifier, cc, ce_logit_grad(probs, yb), gcls);
      mlp_backward(model.encoder, ce, dz, genc);
      for (int i = 0; i < trainable_from && i < static_cast<int>(genc.dW.size()); ++i) {
        genc.dW[static_cast<std::size_t>(i)].setZero();
        genc.db[static_cast<std::size_t>(i)].setZero();
      }
      opt_enc.step(model.encoder, genc, cfg.learning_rate);
      opt_cls.step(model.classifier, gcls, cfg.learning_rate);
    }
    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.loss = loss_sum / std::max(batches, 1);
    entry.accuracy = accuracy_of(predict(model, X), y);
    model.training_log.push_back(entry);
    if (cfg.record_snapshots) model.epoch_snapshots.push_back(snapshot_params(model));
  }
  return model;
}

/// Trains the task classifier on bundle.train (predicting y).
inline ModelBundle train_task(ModelBundle model, const DatasetBundle& bundle,
                              const TrainConfig& cfg) {
  return train_xy(std::move(model), feature_matrix(bundle.train),
                  task_labels(bundle.train), cfg);
}

struct Provenance {
  std::string model_id;
  int layer = 0;
  std::string dataset_id;
  std::string censor_method = "none";
};

/// n x d activations for one (model, layer, dataset) triple.
struct RepresentationMatrix {
  Matrix values;
  Provenance prov;
};

inline Matrix layer_activations(const ModelBundle& m, int layer, const Matrix& X) {
  if (layer < 0 || layer > m.num_layers())
    throw ValidationError("layer index out of range: " + std::to_string(layer));
  Matrix h = X;
  for (int i = 0; i < layer; ++i) {
    const DenseLayer& l = m.encoder.layers[static_cast<std::size_t>(i)];
    Matrix pre = (h * l.W).rowwise() + l.b.transpose();
    if (l.act == Activation::tanh_fn)
      h = pre.array().tanh();
    else
      h = std::move(pre);
  }
  return h;
}

/// Pre-nonlinearity output of encoder block `layer` (layer >= 1).
inline Matrix layer_preactivations(const ModelBundle& m, int layer, const Matrix& X) {
  if (layer < 1 || layer > m.num_layers())
    throw ValidationError("preactivation layer index out of range");
  const Matrix h = layer_activations(m, layer - 1, X);
  const DenseLayer& l = m.encoder.layers[static_cast<std::size_t>(layer - 1)];
  return (h * l.W).rowwise() + l.b.transpose();
}

inline RepresentationMatrix extract_representations(const ModelBundle& m, int layer,
                                                    const std::vector<LabeledExample>& ex,
                                                    const std::string& censor_method = "none") {
  RepresentationMatrix r;
  r.values = layer_activations(m, layer, feature_matrix(ex));
  r.prov = Provenance{model_id(m), layer, dataset_id(ex), censor_method};
  return r;
}

/// Max relative error between analytic and central-difference gradients
/// of the task cross-entropy, over every parameter coordinate.
inline double gradient_check(ModelBundle& model, const std::vector<LabeledExample>& batch,
                             double epsilon) {
  const std::size_t params = model.encoder.param_count() + model.classifier.param_count();
  if (params > 1000)
    throw ValidationError("gradient_check: model exceeds 1000 parameters");
  const Matrix X = feature_matrix(batch);
  const std::vector<int> y = task_labels(batch);

  MlpCache ce, cc;
  const Matrix z = mlp_forward(model.encoder, X, &ce);
  const Matrix probs = softmax_rows(mlp_forward(model.classifier, z, &cc));
  MlpGrads genc, gcls;
  genc.init_like(model.encoder);
  gcls.init_like(model.classifier);
  const Matrix dz = mlp_backward(model.classifier, cc, ce_logit_grad(probs, y), gcls);
  mlp_backward(model.encoder, ce, dz, genc);
  const Vector analytic = flatten_grads({&genc, &gcls});

  auto loss = [&]() {
    return cross_entropy(forward_probs(model, X), y);
  };
  return finite_difference_check({&model.encoder, &model.classifier}, loss, analytic,
                                 epsilon);
}

// --- checkpoint serialization ---

inline Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    Json row = Json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Matrix(0, 0);
  const auto cols = static_cast<Eigen::Index>(j.at(0).size());
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (static_cast<Eigen::Index>(j.at(i).size()) != cols)
      throw ParseError("checkpoint: ragged matrix");
    for (Eigen::Index jj = 0; jj < cols; ++jj) m(i, jj) = j.at(i).at(jj).get<double>();
  }
  return m;
}

inline Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

inline Vector vector_from_json(const Json& j) {
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
  return v;
}

inline Json mlp_to_json(const Mlp& m) {
  Json layers = Json::array();
  for (const auto& l : m.layers) {
    Json jl;
    jl["kind"] = "dense";
    jl["in"] = l.input_dim();
    jl["out"] = l.output_dim();
    jl["activation"] = l.act == Activation::tanh_fn ? "tanh" : "identity";
    jl["W"] = matrix_to_json(l.W);
    jl["b"] = vector_to_json(l.b);
    layers.push_back(std::move(jl));
  }
  return layers;
}

inline Mlp mlp_from_json(const Json& j) {
  Mlp m;
  for (const auto& jl : j) {
    if (jl.at("kind") != "dense") throw ParseError("checkpoint: unknown layer kind");
    DenseLayer l;
    const std::string act = jl.at("activation");
    if (act == "tanh") l.act = Activation::tanh_fn;
    else if (act == "identity") l.act = Activation::identity;
    else throw ParseError("checkpoint: unknown activation '" + act + "'");
    l.W = matrix_from_json(jl.at("W"));
    l.b = vector_from_json(jl.at("b"));
    if (l.W.rows() != jl.at("in").get<int>() || l.W.cols() != jl.at("out").get<int>())
      throw ParseError("checkpoint: layer shape mismatch");
    m.layers.push_back(std::move(l));
  }
  return m;
}

inline Json snapshot_to_json(const ParameterSnapshot& s) {
  Json j;
  j["W"] = Json::array();
  j["b"] = Json::array();
  for (const auto& w : s.W) j["W"].push_back(matrix_to_json(w));
  for (const auto& b : s.b) j["b"].push_back(vector_to_json(b));
  return j;
}

inline ParameterSnapshot snapshot_from_json(const Json& j) {
  ParameterSnapshot s;
  for (const auto& w : j.at("W")) s.W.push_back(matrix_from_json(w));
  for (const auto& b : j.at("b")) s.b.push_back(vector_from_json(b));
  return s;
}

inline Json model_to_json(const ModelBundle& m) {
  Json j;
  j["schema_version"] = 1;
  j["kind"] = "model";
  j["seed"] = m.seed;
  j["encoder"] = mlp_to_json(m.encoder);
  j["classifier"] = mlp_to_json(m.classifier);
  j["init_snapshot"] = snapshot_to_json(m.init_snapshot);
  Json log = Json::array();
  for (const auto& e : m.training_log)
    log.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
  j["training_log"] = std::move(log);
  return j;
}

inline ModelBundle model_from_json(const Json& j) {
  ModelBundle m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.encoder = mlp_from_json(j.at("encoder"));
  m.classifier = mlp_from_json(j.at("classifier"));
  m.init_snapshot = snapshot_from_json(j.at("init_snapshot"));
  for (const auto& e : j.at("training_log")) {
    m.training_log.push_back(TrainLogEntry{e.at("epoch").get<int>(),
                                           e.at("loss").get<double>(),
                                           e.at("accuracy").get<double>()});
  }
  return m;
}

inline void save_model(const std::string& path, const ModelBundle& m,
                       const Json& extras = Json()) {
  Json j = model_to_json(m);
  if (!extras.is_null())
    for (const auto& [k, v] : extras.items()) j[k] = v;
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
}

inline Json load_checkpoint_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const std::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
  return j;
}

inline ModelBundle load_model(const std::string& path) {
  return model_from_json(load_checkpoint_json(path));
}

}  // namespace overlearn
