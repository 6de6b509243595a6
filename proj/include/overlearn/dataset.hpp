#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "overlearn/common.hpp"
#include "overlearn/csv.hpp"
#include "overlearn/error.hpp"
#include "overlearn/rng.hpp"

namespace overlearn {

struct LabeledExample {
  Vector features;
  int task_label = 0;
  int sensitive_attr = 0;
  std::optional<int> group_id;
};

/// Joint distribution over (task label, sensitive attribute) pairs that a
/// synthetic dataset should realize. Entries must be non-negative and sum
/// to one.
struct ContingencySpec {
  Matrix joint;  // num_task_classes x num_attr_classes
  int num_task_classes = 0;
  int num_attr_classes = 0;

  static ContingencySpec uniform(int task_classes, int attr_classes) {
    ContingencySpec s;
    s.num_task_classes = task_classes;
    s.num_attr_classes = attr_classes;
    s.joint = Matrix::Constant(task_classes, attr_classes,
                               1.0 / (task_classes * attr_classes));
    return s;
  }

  /// s == y along the diagonal; requires equal class counts.
  static ContingencySpec diagonal(int classes) {
    ContingencySpec s;
    s.num_task_classes = classes;
    s.num_attr_classes = classes;
    s.joint = Matrix::Zero(classes, classes);
    for (int i = 0; i < classes; ++i) s.joint(i, i) = 1.0 / classes;
    return s;
  }

  void validate() const {
    if (num_task_classes < 1 || num_attr_classes < 1)
      throw ValidationError("ContingencySpec: class counts must be >= 1");
    if (joint.rows() != num_task_classes || joint.cols() != num_attr_classes)
      throw ValidationError("ContingencySpec: joint shape does not match class counts");
    if ((joint.array() < 0.0).any())
      throw ValidationError("ContingencySpec: joint has negative entries");
    if (std::abs(joint.sum() - 1.0) > 1e-9)
      throw ValidationError("ContingencySpec: joint does not sum to 1");
  }
};

struct DatasetMetadata {
  int feature_dim = 0;
  int num_task_classes = 0;
  int num_attr_classes = 0;
  std::uint64_t generator_seed = 0;
  Matrix target_joint;  // empty for externally loaded data
};

struct DatasetBundle {
  std::vector<LabeledExample> train;
  std::vector<LabeledExample> test;
  std::vector<LabeledExample> aux;
  std::vector<std::pair<double, std::vector<LabeledExample>>> transfer;
  DatasetMetadata meta;
};

inline std::vector<int> task_labels(const std::vector<LabeledExample>& ex) {
  std::vector<int> out;
  out.reserve(ex.size());
  for (const auto& e : ex) out.push_back(e.task_label);
  return out;
}

inline std::vector<int> attr_labels(const std::vector<LabeledExample>& ex) {
  std::vector<int> out;
  out.reserve(ex.size());
  for (const auto& e : ex) out.push_back(e.sensitive_attr);
  return out;
}

inline Matrix feature_matrix(const std::vector<LabeledExample>& ex) {
  if (ex.empty()) return Matrix(0, 0);
  Matrix X(static_cast<Eigen::Index>(ex.size()), ex.front().features.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    if (ex[i].features.size() != X.cols())
      throw ValidationError("feature_matrix: inconsistent feature dimensions");
    X.row(static_cast<Eigen::Index>(i)) = ex[i].features.transpose();
  }
  return X;
}

/// Provenance id for a set of examples; used to audit that attack
/// training never touches probe data.
inline std::string dataset_id(const std::vector<LabeledExample>& ex) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& e : ex) {
    for (Eigen::Index j = 0; j < e.features.size(); ++j) {
      const double v = e.features[j];
      h = fnv1a64(&v, sizeof(v), h);
    }
    h = fnv1a64(&e.task_label, sizeof(e.task_label), h);
    h = fnv1a64(&e.sensitive_attr, sizeof(e.sensitive_attr), h);
  }
  return hex64(h);
}

/// Samples n examples with (y, s) drawn from spec.joint and features
/// x = tanh(A e_y + B e_s + eps). A and B have i.i.d. N(0, 1) entries
/// scaled by 1/sqrt(feature_dim); eps is N(0, noise_scale^2).
inline std::vector<LabeledExample> generate_examples(const ContingencySpec& spec,
                                                     std::size_t n, int feature_dim,
                                                     double noise_scale,
                                                     std::uint64_t seed) {
  spec.validate();
  const std::size_t min_n = 20ull * static_cast<std::size_t>(spec.num_task_classes) *
                            static_cast<std::size_t>(spec.num_attr_classes);
  if (n < min_n)
    throw ValidationError("generate_examples: n must be >= 20 * classes, got " +
                          std::to_string(n) + " < " + std::to_string(min_n));
  if (feature_dim < spec.num_task_classes + spec.num_attr_classes)
    throw ValidationError("generate_examples: feature_dim too small");
  if (noise_scale < 0.0)
    throw ValidationError("generate_examples: noise_scale must be >= 0");

  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(feature_dim));
  const Matrix A = rng.normal_matrix(feature_dim, spec.num_task_classes, scale);
  const Matrix B = rng.normal_matrix(feature_dim, spec.num_attr_classes, scale);

  // Cumulative distribution over flattened (y, s) cells, row-major.
  std::vector<double> cdf;
  cdf.reserve(static_cast<std::size_t>(spec.joint.size()));
  double acc = 0.0;
  for (int y = 0; y < spec.num_task_classes; ++y)
    for (int s = 0; s < spec.num_attr_classes; ++s) {
      acc += spec.joint(y, s);
      cdf.push_back(acc);
    }
  cdf.back() = 1.0;

  std::vector<LabeledExample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = rng.uniform();
    std::size_t cell = 0;
    while (cell + 1 < cdf.size() && u >= cdf[cell]) ++cell;
    const int y = static_cast<int>(cell) / spec.num_attr_classes;
    const int s = static_cast<int>(cell) % spec.num_attr_classes;
    Vector x = A.col(y) + B.col(s);
    for (int j = 0; j < feature_dim; ++j) x[j] += noise_scale * rng.normal();
    LabeledExample e;
    e.features = x.array().tanh();
    e.task_label = y;
    e.sensitive_attr = s;
    out.push_back(std::move(e));
  }
  return out;
}

struct SplitOptions {
  // Default: the adversary's aux set is sampled from the training data.
  // With aux_from_train = false, aux is carved out of the held-out side
  // instead, so train, test and aux are pairwise disjoint.
  bool aux_from_train = true;
};

inline DatasetMetadata infer_metadata(const std::vector<LabeledExample>& ex) {
  DatasetMetadata m;
  if (ex.empty()) return m;
  m.feature_dim = static_cast<int>(ex.front().features.size());
  for (const auto& e : ex) {
    if (e.task_label < 0 || e.sensitive_attr < 0)
      throw ValidationError("labels must be non-negative");
    m.num_task_classes = std::max(m.num_task_classes, e.task_label + 1);
    m.num_attr_classes = std::max(m.num_attr_classes, e.sensitive_attr + 1);
  }
  return m;
}

/// Deterministic shuffled partition of `source` into train/test plus the
/// adversary's aux set and transfer subsets (each a prefix of an
/// independent permutation of train).
inline DatasetBundle split(const std::vector<LabeledExample>& source, double train_frac,
                           double aux_frac, const std::vector<double>& transfer_fracs,
                           std::uint64_t seed, const SplitOptions& opt = {}) {
  if (!(train_frac > 0.0 && train_frac < 1.0))
    throw ValidationError("split: train_frac must be in (0, 1)");
  if (!(aux_frac > 0.0 && aux_frac <= 1.0))
    throw ValidationError("split: aux_frac must be in (0, 1]");
  for (double f : transfer_fracs)
    if (!(f > 0.0 && f < 1.0))
      throw ValidationError("split: transfer fractions must be in (0, 1)");

  DatasetBundle b;
  b.meta = infer_metadata(source);

  Rng rng(seed);
  const auto perm = rng.permutation(source.size());
  const auto n_train = static_cast<std::size_t>(
      std::llround(train_frac * static_cast<double>(source.size())));
  for (std::size_t i = 0; i < source.size(); ++i) {
    (i < n_train ? b.train : b.test).push_back(source[perm[i]]);
  }

  const auto n_aux = static_cast<std::size_t>(
      std::llround(aux_frac * static_cast<double>(b.train.size())));
  if (opt.aux_from_train) {
    const auto aux_perm = rng.permutation(b.train.size());
    for (std::size_t i = 0; i < n_aux && i < b.train.size(); ++i)
      b.aux.push_back(b.train[aux_perm[i]]);
  } else {
    // Move examples from the held-out side into aux.
    if (n_aux > b.test.size())
      throw ValidationError("split: held-out side too small to source aux from");
    b.aux.assign(b.test.end() - static_cast<std::ptrdiff_t>(n_aux), b.test.end());
    b.test.resize(b.test.size() - n_aux);
  }

  for (double f : transfer_fracs) {
    const auto sz = static_cast<std::size_t>(
        std::llround(f * static_cast<double>(b.train.size())));
    const auto tperm = rng.permutation(b.train.size());
    std::vector<LabeledExample> subset;
    subset.reserve(sz);
    for (std::size_t i = 0; i < sz; ++i) subset.push_back(b.train[tperm[i]]);
    b.transfer.emplace_back(f, std::move(subset));
  }
  return b;
}

/// Synthetic bundle with the 80/20 train/test split and the aux set at
/// 50% of train.
inline DatasetBundle generate_synthetic(const ContingencySpec& spec, std::size_t n,
                                        int feature_dim, double noise_scale,
                                        std::uint64_t seed) {
  auto examples = generate_examples(spec, n, feature_dim, noise_scale, seed);
  DatasetBundle b = split(examples, 0.8, 0.5, {}, seed_stream(seed, "split"));
  b.meta.feature_dim = feature_dim;
  b.meta.num_task_classes = spec.num_task_classes;
  b.meta.num_attr_classes = spec.num_attr_classes;
  b.meta.generator_seed = seed;
  b.meta.target_joint = spec.joint;
  return b;
}

/// Keeps only train examples carrying the given attribute; test and aux
/// are left untouched (the unrepresented-attribute protocol).
inline DatasetBundle restrict_attribute(const DatasetBundle& bundle, int keep_attr) {
  bool present = false;
  for (const auto& e : bundle.train) present = present || e.sensitive_attr == keep_attr;
  if (!present)
    throw ValidationError("restrict_attribute: attribute " + std::to_string(keep_attr) +
                          " not present in train");
  DatasetBundle out = bundle;
  out.train.clear();
  for (const auto& e : bundle.train)
    if (e.sensitive_attr == keep_attr) out.train.push_back(e);
  return out;
}

// CSV contract: header f0,...,f{d-1},y,s[,g]; decimal reals, labels
// non-negative integers.

inline void save_tabular(const std::string& path, const std::vector<LabeledExample>& ex) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write '" + path + "'");
  const Eigen::Index d = ex.empty() ? 0 : ex.front().features.size();
  const bool groups = !ex.empty() && ex.front().group_id.has_value();
  for (Eigen::Index j = 0; j < d; ++j) out << "f" << j << ",";
  out << "y,s";
  if (groups) out << ",g";
  out << "\n";
  for (const auto& e : ex) {
    for (Eigen::Index j = 0; j < d; ++j) out << format_double(e.features[j]) << ",";
    out << e.task_label << "," << e.sensitive_attr;
    if (groups) out << "," << e.group_id.value_or(0);
    out << "\n";
  }
}

/// Loads a CSV matching the contract above. The result is an unsplit
/// bundle: every row lands in train, and the caller partitions it with
/// split() if needed.
inline DatasetBundle load_tabular(const std::string& path) {
  const CsvTable t = read_csv(path);
  int y_col = -1, s_col = -1, g_col = -1;
  std::vector<std::size_t> f_cols;
  for (std::size_t j = 0; j < t.header.size(); ++j) {
    const std::string& h = t.header[j];
    if (h == "y") y_col = static_cast<int>(j);
    else if (h == "s") s_col = static_cast<int>(j);
    else if (h == "g") g_col = static_cast<int>(j);
    else if (!h.empty() && h[0] == 'f') f_cols.push_back(j);
    else throw ParseError(path + ": unrecognized column '" + h + "'");
  }
  if (y_col < 0) throw ParseError(path + ": missing column 'y'");
  if (s_col < 0) throw ParseError(path + ": missing column 's'");
  if (f_cols.empty()) throw ParseError(path + ": no feature columns f0..f{d-1}");

  DatasetBundle b;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& row = t.rows[i];
    const std::string ctx = path + ": row " + std::to_string(i + 2);
    if (row.size() != t.header.size())
      throw ParseError(ctx + ": has " + std::to_string(row.size()) +
                       " cells, expected " + std::to_string(t.header.size()));
    LabeledExample e;
    e.features = Vector(static_cast<Eigen::Index>(f_cols.size()));
    for (std::size_t k = 0; k < f_cols.size(); ++k)
      e.features[static_cast<Eigen::Index>(k)] = parse_double(row[f_cols[k]], ctx);
    if (!e.features.allFinite()) throw ParseError(ctx + ": non-finite feature");
    e.task_label = static_cast<int>(parse_long(row[static_cast<std::size_t>(y_col)], ctx));
    e.sensitive_attr =
        static_cast<int>(parse_long(row[static_cast<std::size_t>(s_col)], ctx));
    if (e.task_label < 0 || e.sensitive_attr < 0)
      throw ParseError(ctx + ": label out of range");
    if (g_col >= 0)
      e.group_id = static_cast<int>(parse_long(row[static_cast<std::size_t>(g_col)], ctx));
    b.train.push_back(std::move(e));
  }
  b.meta = infer_metadata(b.train);
  return b;
}

}  // namespace overlearn
