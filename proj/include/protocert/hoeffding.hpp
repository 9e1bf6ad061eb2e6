// hoeffding.hpp -- Hoeffding halfwidths and the confidence interval for the
// distance between a smoothed embedding and a class prototype.
#pragma once

#include <algorithm>
#include <cmath>
#include <span>

#include "protocert/common.hpp"
#include "protocert/smoothing.hpp"

namespace protocert {

/// Width of the interval assumed to contain every paired observation.
/// `sound` uses the attainable range [-1, 4] (width 5); `paper` selects the
/// narrower width-4 convention for comparability with runs that used it.
enum class RangeMode { sound, paper };

inline double paired_range_width(RangeMode mode) {
  return mode == RangeMode::sound ? 5.0 : 4.0;
}

/// Halfwidth t with P(|mean - expectation| >= t) <= level for n_obs iid
/// observations confined to a common interval of width range_width.
inline double hoeffding_halfwidth(std::uint64_t n_obs, double range_width, double level) {
  if (n_obs == 0) throw domain_error("hoeffding_halfwidth: need at least one observation");
  if (!(level > 0.0 && level < 1.0))
    throw domain_error("hoeffding_halfwidth: level must be in (0,1)");
  if (range_width < 0.0) throw domain_error("hoeffding_halfwidth: negative range width");
  return range_width * std::sqrt(std::log(2.0 / level) / (2.0 * static_cast<double>(n_obs)));
}

struct ConfidenceInterval {
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.0;  // non-coverage probability spent
};

/// Interval for ||g(x) - c_k||_2 given the mean of m paired observations.
/// The alpha budget is spent as alpha/3 per Hoeffding application, matching
/// the three-term split of the paired statistic; the squared-space endpoints
/// clamp at 0 before the square root.
inline ConfidenceInterval distance_interval_from_stats(double mean_sq, std::uint64_t m,
                                                       double alpha, RangeMode mode) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw domain_error("distance_interval: alpha must be in (0,1)");
  const double t = hoeffding_halfwidth(m, paired_range_width(mode), alpha / 3.0);
  return {std::sqrt(std::max(0.0, mean_sq - t)), std::sqrt(std::max(0.0, mean_sq + t)),
          alpha};
}

inline ConfidenceInterval distance_interval(std::span<const PairedSquareObservation> obs,
                                            double alpha, RangeMode mode) {
  if (obs.empty()) throw validation_error("distance_interval: no observations");
  const int cls = obs.front().class_id;
  double sum = 0.0;
  for (const auto& o : obs) {
    if (o.class_id != cls)
      throw validation_error("distance_interval: observations mix class ids");
    sum += o.value;
  }
  return distance_interval_from_stats(sum / static_cast<double>(obs.size()), obs.size(),
                                      alpha, mode);
}

}  // namespace protocert
