#pragma once

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "overlearn/common.hpp"
#include "overlearn/error.hpp"
#include "overlearn/model.hpp"

namespace overlearn {

/// Linear centered kernel alignment between two representation matrices
/// with a shared row (example) axis:
///   ||Yc' Xc||_F^2 / (||Xc' Xc||_F ||Yc' Yc||_F)
/// Invariant to orthogonal transforms and nonzero isotropic scaling of
/// either argument; 1.0 for identical representations.
inline double linear_cka(const Matrix& X, const Matrix& Y) {
  if (X.rows() != Y.rows())
    throw ValidationError("linear_cka: row counts differ");
  if (X.rows() < 2) throw ValidationError("linear_cka: need at least 2 rows");
  const Matrix Xc = X.rowwise() - X.colwise().mean();
  const Matrix Yc = Y.rowwise() - Y.colwise().mean();
  const double xx = (Xc.transpose() * Xc).norm();
  const double yy = (Yc.transpose() * Yc).norm();
  if (xx == 0.0 || yy == 0.0)
    throw DegenerateInputError("linear_cka: zero-variance representation");
  const double cross = (Yc.transpose() * Xc).squaredNorm();
  return cross / (xx * yy);
}

/// Layer-pair CKA grid between two models on shared examples. Cells whose
/// representations are degenerate (zero variance) are recorded as missing
/// (NaN), not as zero similarity.
struct CKAMatrix {
  Matrix values;  // rows: layers of B, cols: layers of A
  std::vector<std::string> row_labels, col_labels;
  std::string model_a_id, model_b_id;

  bool missing(Eigen::Index i, Eigen::Index j) const { return std::isnan(values(i, j)); }

  void to_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ParseError("cannot write '" + path + "'");
    out << "layer_b\\layer_a";
    for (const auto& c : col_labels) out << "," << c;
    out << "\n";
    for (Eigen::Index i = 0; i < values.rows(); ++i) {
      out << row_labels[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < values.cols(); ++j) {
        out << ",";
        if (!missing(i, j)) out << format_double(values(i, j));
      }
      out << "\n";
    }
  }
};

/// Entry (i, j) compares model_a's layer j+1 with model_b's layer i+1
/// (representation indices 1..L; the raw-input layer 0 is omitted).
inline CKAMatrix cka_heatmap(const ModelBundle& model_a, const ModelBundle& model_b,
                             const std::vector<LabeledExample>& examples) {
  const Matrix X = feature_matrix(examples);
  if (X.cols() != model_a.feature_dim() || X.cols() != model_b.feature_dim())
    throw ValidationError("cka_heatmap: feature dim mismatch");
  CKAMatrix out;
  out.model_a_id = model_id(model_a);
  out.model_b_id = model_id(model_b);
  const int la = model_a.num_layers(), lb = model_b.num_layers();
  out.values = Matrix::Constant(lb, la, std::nan(""));
  for (int j = 1; j <= la; ++j) out.col_labels.push_back("a" + std::to_string(j));
  for (int i = 1; i <= lb; ++i) out.row_labels.push_back("b" + std::to_string(i));

  std::vector<Matrix> reps_a, reps_b;
  for (int j = 1; j <= la; ++j) reps_a.push_back(layer_activations(model_a, j, X));
  for (int i = 1; i <= lb; ++i) reps_b.push_back(layer_activations(model_b, i, X));
  for (int i = 0; i < lb; ++i)
    for (int j = 0; j < la; ++j) {
      try {
        out.values(i, j) = linear_cka(reps_a[static_cast<std::size_t>(j)],
                                      reps_b[static_cast<std::size_t>(i)]);
      } catch (const DegenerateInputError&) {
        // left as missing
      }
    }
  return out;
}

/// Per-layer, per-epoch linear CKA between a trained model's
/// representations and those of its own initialization; needs a model
/// trained with record_snapshots. Row e is epoch e (row 0 compares the
/// init snapshot with itself), column l-1 is layer l.
struct SimilarityCurves {
  std::vector<int> epochs;
  Matrix values;  // (epochs+1) x layers
};

inline SimilarityCurves similarity_to_init(const ModelBundle& model,
                                           const std::vector<ParameterSnapshot>& snapshots,
                                           const std::vector<LabeledExample>& examples) {
  if (snapshots.empty())
    throw ValidationError("similarity_to_init: no snapshots recorded");
  const Matrix X = feature_matrix(examples);
  const int layers = model.num_layers();

  ModelBundle probe = model;
  restore_params(probe, model.init_snapshot);
  std::vector<Matrix> init_reps;
  for (int l = 1; l <= layers; ++l) init_reps.push_back(layer_activations(probe, l, X));

  SimilarityCurves out;
  out.values = Matrix::Constant(static_cast<Eigen::Index>(snapshots.size()), layers,
                                std::nan(""));
  for (std::size_t e = 0; e < snapshots.size(); ++e) {
    out.epochs.push_back(static_cast<int>(e));
    restore_params(probe, snapshots[e]);
    for (int l = 1; l <= layers; ++l) {
      try {
        out.values(static_cast<Eigen::Index>(e), l - 1) =
            linear_cka(layer_activations(probe, l, X), init_reps[static_cast<std::size_t>(l - 1)]);
      } catch (const DegenerateInputError&) {
        // left as missing
      }
    }
  }
  return out;
}

/// Normalized chi-squared association between two categorical variables.
struct AssociationStat {
  double cramers_v = 0.0;
  Matrix contingency_table;  // counts, rows: classes of a, cols: classes of b
  std::size_t n = 0;
  bool degenerate = false;  // fewer than two classes on either side
};

/// V = sqrt((chi^2 / n) / min(r-1, c-1)); cells with zero expected count
/// contribute nothing. Degenerate tables (a single class on either side)
/// report V = 0 with the degenerate flag set.
inline AssociationStat cramers_v(const std::vector<int>& labels_a,
                                 const std::vector<int>& labels_b) {
  if (labels_a.size() != labels_b.size())
    throw ValidationError("cramers_v: length mismatch");
  if (labels_a.empty()) throw ValidationError("cramers_v: empty input");

  int ra = 0, cb = 0;
  for (int v : labels_a) {
    if (v < 0) throw ValidationError("cramers_v: negative class index");
    ra = std::max(ra, v + 1);
  }
  for (int v : labels_b) {
    if (v < 0) throw ValidationError("cramers_v: negative class index");
    cb = std::max(cb, v + 1);
  }

  AssociationStat stat;
  stat.n = labels_a.size();
  stat.contingency_table = Matrix::Zero(ra, cb);
  for (std::size_t i = 0; i < labels_a.size(); ++i)
    stat.contingency_table(labels_a[i], labels_b[i]) += 1.0;

  const int dof = std::min(ra - 1, cb - 1);
  if (dof == 0) {
    stat.degenerate = true;
    return stat;
  }

  const Vector row_sums = stat.contingency_table.rowwise().sum();
  const Vector col_sums = stat.contingency_table.colwise().sum().transpose();
  const double n = static_cast<double>(stat.n);
  double chi2 = 0.0;
  for (int i = 0; i < ra; ++i)
    for (int j = 0; j < cb; ++j) {
      const double expected = row_sums[i] * col_sums[j] / n;
      if (expected > 0.0) {
        const double d = stat.contingency_table(i, j) - expected;
        chi2 += d * d / expected;
      }
    }
  stat.cramers_v = std::sqrt((chi2 / n) / static_cast<double>(dof));
  return stat;
}

/// Frequency of the most common class; the value is tie-independent.
inline double majority_baseline(const std::vector<int>& labels) {
  if (labels.empty()) throw ValidationError("majority_baseline: empty input");
  std::map<int, std::size_t> counts;
  for (int v : labels) counts[v]++;
  std::size_t best = 0;
  for (const auto& [label, c] : counts) best = std::max(best, c);
  return static_cast<double>(best) / static_cast<double>(labels.size());
}

}  // namespace overlearn
