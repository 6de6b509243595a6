#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace overlearn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Index of the row maximum; exact ties resolve to the lowest index.
inline int argmax_lowest(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
  int best = 0;
  for (int j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

// FNV-1a, used for config digests and checkpoint/dataset provenance ids.
inline std::uint64_t fnv1a64(const void* data, std::size_t len,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

inline std::uint64_t hash_matrix(const Matrix& m, std::uint64_t h = 0xcbf29ce484222325ull) {
  const std::int64_t dims[2] = {m.rows(), m.cols()};
  h = fnv1a64(dims, sizeof(dims), h);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double v = m(i, j);
      h = fnv1a64(&v, sizeof(v), h);
    }
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Derives an independent sub-seed from (seed, tag). Sub-streams keep
/// e.g. parameter init, batch shuffling and noise sampling decoupled, so
/// adding one consumer does not shift the others.
inline std::uint64_t seed_stream(std::uint64_t seed, const std::string& tag) {
  return splitmix64(seed ^ fnv1a64(tag));
}

/// Decimal form with enough digits to parse back to the same double.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return std::string(buf);
}

}  // namespace overlearn
