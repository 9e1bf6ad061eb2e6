// prototype.hpp -- embedding-space geometry: class prototypes, nearest-
// prototype classification, the signed embedding risk gamma, the smoothed
// Lipschitz constant, and the certified radius.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

#include "protocert/common.hpp"
#include "protocert/embedding.hpp"

namespace protocert {

inline constexpr double kDuplicatePrototypeTol = 1e-12;

struct PrototypeSet {
  std::vector<Vec> prototypes;        // aligned with class_ids
  std::vector<int> class_ids;         // distinct, sorted ascending
  std::vector<std::size_t> support_counts;

  std::size_t n_classes() const { return prototypes.size(); }
  std::size_t dim() const { return prototypes.empty() ? 0 : prototypes.front().size(); }

  const Vec& prototype_of(int class_id) const {
    const auto it = std::lower_bound(class_ids.begin(), class_ids.end(), class_id);
    if (it == class_ids.end() || *it != class_id)
      throw domain_error("unknown class id " + std::to_string(class_id));
    return prototypes[static_cast<std::size_t>(it - class_ids.begin())];
  }

  void validate() const {
    if (prototypes.empty()) throw validation_error("prototype set is empty");
    for (const Vec& p : prototypes) {
      require_dim(p, dim(), "prototype");
      require_finite(p, "prototype");
      if (norm(p) > 1.0 + kUnitNormTol)
        throw validation_error("prototype norm exceeds 1 (means of unit vectors cannot)");
    }
    for (std::size_t i = 0; i < prototypes.size(); ++i)
      for (std::size_t j = i + 1; j < prototypes.size(); ++j)
        if (distance(prototypes[i], prototypes[j]) <= kDuplicatePrototypeTol)
          throw degenerate_error("prototypes of classes " + std::to_string(class_ids[i]) +
                                 " and " + std::to_string(class_ids[j]) + " coincide");
  }
};

/// Per-class arithmetic means of the support embeddings.
inline PrototypeSet compute_prototypes(std::span<const Vec> embeddings,
                                       std::span<const int> labels) {
  if (embeddings.size() != labels.size())
    throw shape_error("compute_prototypes: embeddings/labels length mismatch");
  if (embeddings.empty()) throw validation_error("compute_prototypes: no support points");

  std::vector<int> ids(labels.begin(), labels.end());
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

  const std::size_t d = embeddings.front().size();
  PrototypeSet set;
  set.class_ids = ids;
  set.prototypes.assign(ids.size(), Vec(d, 0.0));
  set.support_counts.assign(ids.size(), 0);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    require_dim(embeddings[i], d, "support embedding");
    const auto k = static_cast<std::size_t>(
        std::lower_bound(ids.begin(), ids.end(), labels[i]) - ids.begin());
    add_into(set.prototypes[k], embeddings[i]);
    ++set.support_counts[k];
  }
  for (std::size_t k = 0; k < ids.size(); ++k) {
    if (set.support_counts[k] == 0)
      throw validation_error("class " + std::to_string(ids[k]) + " has no support points");
    scale(set.prototypes[k], 1.0 / static_cast<double>(set.support_counts[k]));
  }
  set.validate();
  return set;
}

/// Nearest prototype in l2; exact ties go to the smallest class id.
inline int classify(std::span<const double> point, const PrototypeSet& protos) {
  require_dim(point, protos.dim(), "classify point");
  double best = std::numeric_limits<double>::infinity();
  int best_id = protos.class_ids.front();
  for (std::size_t k = 0; k < protos.n_classes(); ++k) {
    const double d2 = squared_distance(point, protos.prototypes[k]);
    if (d2 < best) {  // class ids are sorted, so strict < keeps the smallest id on ties
      best = d2;
      best_id = protos.class_ids[k];
    }
  }
  return best_id;
}

/// Signed l2 distance from `point` to the perpendicular-bisector hyperplane
/// of (c1, c2): positive when the point is strictly closer to c1. The
/// denominator is linear in ||c2 - c1||, which is the only choice with
/// distance units and the bisector property.
inline double embedding_risk(std::span<const double> point, std::span<const double> c1,
                             std::span<const double> c2) {
  require_dim(c1, point.size(), "embedding_risk c1");
  require_dim(c2, point.size(), "embedding_risk c2");
  const double sep = distance(c1, c2);
  if (sep <= kDuplicatePrototypeTol)
    throw degenerate_error("embedding_risk: coincident prototypes");
  return (squared_distance(c2, point) - squared_distance(c1, point)) / (2.0 * sep);
}

/// Lipschitz constant of the Gaussian-smoothed unit-norm embedding map.
inline double lipschitz_constant(double sigma) {
  if (!(sigma > 0.0)) throw domain_error("lipschitz_constant: sigma must be positive");
  return std::sqrt(2.0 / (std::numbers::pi * sigma * sigma));
}

/// Certified input-space radius max(0, gamma) / L(sigma).
inline double certified_radius(double gamma, double sigma) {
  return std::max(0.0, gamma) / lipschitz_constant(sigma);
}

}  // namespace protocert
