// common.hpp -- shared vocabulary: vector type, error taxonomy, small linalg.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace protocert {

using Vec = std::vector<double>;

// ---------------------------------------------------------------------------
// Errors. Everything user-facing derives from `error`; the CLI maps
// data-shaped failures to exit code 2 and internal invariant violations to 3.
// ---------------------------------------------------------------------------

struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Input has the wrong dimension for the operation.
struct shape_error : error {
  using error::error;
};

/// A parameter is outside its mathematical domain (sigma <= 0, alpha not in (0,1), ...).
struct domain_error : error {
  using error::error;
};

/// Loaded or supplied data violates a declared invariant.
struct validation_error : error {
  using error::error;
};

/// Malformed persisted file; carries the byte offset of the first bad token.
struct parse_error : error {
  parse_error(const std::string& what, std::size_t byte_offset)
      : error(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        offset(byte_offset) {}
  std::size_t offset;
};

struct not_differentiable_error : error {
  using error::error;
};

struct missing_embedding_error : error {
  using error::error;
};

/// Degenerate geometry: coincident prototypes or a vanishing pre-normalization vector.
struct degenerate_error : error {
  using error::error;
};

/// Paired estimates were built from overlapping noise-index ranges.
struct dependence_error : error {
  using error::error;
};

/// Training produced a non-finite loss or non-finite weights.
struct divergence_error : error {
  divergence_error(const std::string& what, std::size_t at_step)
      : error(what + " (step " + std::to_string(at_step) + ")"), step(at_step) {}
  std::size_t step;
};

/// An internal invariant failed; a bug, not a usage problem.
struct internal_error : error {
  using error::error;
};

// ---------------------------------------------------------------------------
// Small dense linear algebra on std::vector<double>.
// ---------------------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  return std::sqrt(squared_distance(a, b));
}

inline void add_into(Vec& acc, std::span<const double> x) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += x[i];
}

inline void scale(Vec& v, double s) {
  for (double& x : v) x *= s;
}

inline Vec scaled(std::span<const double> v, double s) {
  Vec out(v.begin(), v.end());
  scale(out, s);
  return out;
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_finite(std::span<const double> v, const char* what) {
  if (!all_finite(v)) throw validation_error(std::string(what) + ": non-finite entry");
}

inline void require_dim(std::span<const double> v, std::size_t dim, const char* what) {
  if (v.size() != dim)
    throw shape_error(std::string(what) + ": expected length " + std::to_string(dim) +
                      ", got " + std::to_string(v.size()));
}

/// Standard normal CDF.
inline double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace protocert
