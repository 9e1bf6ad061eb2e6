// certify.hpp -- the adaptive certification procedure: closest-prototype
// search with growing sample pools, the one-sided lower bound on the
// adversarial embedding risk, and the certified radius.
#pragma once

#include <chrono>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "protocert/common.hpp"
#include "protocert/hoeffding.hpp"
#include "protocert/prototype.hpp"
#include "protocert/smoothing.hpp"

namespace protocert {

struct SmoothingConfig {
  double sigma = 1.0;
  std::uint64_t n0 = 1000;           // per-estimate batch size of the first iteration
  std::uint64_t max_samples = 500000;  // T: cap on total draws per CLOSEST call
  double alpha = 0.001;
  std::uint64_t seed = 0;
  RangeMode range_mode = RangeMode::sound;

  void validate() const {
    if (!(sigma > 0.0)) throw domain_error("config: sigma must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw domain_error("config: alpha must be in (0,1)");
    if (n0 < 2) throw domain_error("config: n0 must be at least 2");
    if (max_samples < 2 * n0) throw domain_error("config: max_samples must be >= 2*n0");
  }
};

struct ClassInterval {
  int class_id = 0;
  double lower = 0.0;
  double upper = 0.0;
};

/// Outcome of one CLOSEST run. The pool carries every noisy embedding the
/// run consumed, reduced to (sum, count); each consumed sample is a 1-sample
/// unbiased estimate of g(x), which is all the risk bound needs.
struct ClosestOutcome {
  std::optional<int> winner;            // nullopt = abstain
  Vec pooled_sum;                       // sum of all consumed embeddings
  std::uint64_t pooled_count = 0;       // == samples_used
  std::uint64_t samples_used = 0;
  std::uint64_t next_index = 0;         // first unused noise index
  std::size_t iterations = 0;
  std::vector<ClassInterval> intervals; // per-class intervals at the last iteration

  SmoothedEstimate pooled_estimate() const {
    SmoothedEstimate est;
    est.mean = pooled_sum;
    if (pooled_count > 0) scale(est.mean, 1.0 / static_cast<double>(pooled_count));
    est.n_samples = pooled_count;
    est.first_index = next_index - pooled_count;
    est.last_index = pooled_count > 0 ? next_index - 1 : est.first_index;
    return est;
  }
};

/// Adaptive closest-prototype search. Iteration t draws two disjoint ranges
/// of t*n0 fresh samples; pairing the ranges elementwise yields t*n0 new
/// unbiased squared-distance observations per class. The per-class distance
/// intervals shrink with the pooled observation count; the search returns A
/// once u_A drops below every other class's lower bound, and abstains when
/// the next iteration would push total draws past max_samples.
template <class Source>
ClosestOutcome closest_prototype(const Source& src, const PrototypeSet& protos,
                                 const SmoothingConfig& cfg,
                                 std::optional<int> exclude = std::nullopt,
                                 std::uint64_t start_index = 0) {
  cfg.validate();
  std::vector<std::size_t> active;
  for (std::size_t k = 0; k < protos.n_classes(); ++k)
    if (!exclude || protos.class_ids[k] != *exclude) active.push_back(k);
  if (active.empty()) throw domain_error("closest_prototype: no candidate classes");

  ClosestOutcome out;
  out.next_index = start_index;
  out.pooled_sum.assign(src.embed_dim(), 0.0);
  if (active.size() == 1) {  // no runner-up to separate from; zero samples
    out.winner = protos.class_ids[active.front()];
    return out;
  }

  PairedBatchStats stats;
  stats.init(src.embed_dim());

  std::uint64_t batch = 0;
  while (true) {
    batch += cfg.n0;
    if (out.samples_used + 2 * batch > cfg.max_samples) break;  // abstain

    accumulate_paired_batch(src, out.next_index, batch, stats);
    out.next_index += 2 * batch;
    out.samples_used += 2 * batch;
    ++out.iterations;

    out.intervals.clear();
    double best_lower = std::numeric_limits<double>::infinity();
    std::size_t best = 0;
    for (std::size_t j = 0; j < active.size(); ++j) {
      const std::size_t k = active[j];
      const auto ci = distance_interval_from_stats(stats.mean_for(protos.prototypes[k]),
                                                   stats.pairs, cfg.alpha, cfg.range_mode);
      out.intervals.push_back({protos.class_ids[k], ci.lower, ci.upper});
      if (ci.lower < best_lower) {  // ascending ids: strict < breaks ties downward
        best_lower = ci.lower;
        best = j;
      }
    }
    double runner_lower = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < active.size(); ++j)
      if (j != best) runner_lower = std::min(runner_lower, out.intervals[j].lower);

    if (out.intervals[best].upper < runner_lower) {
      out.winner = protos.class_ids[active[best]];
      break;
    }
  }
  add_into(out.pooled_sum, stats.sum_a);
  add_into(out.pooled_sum, stats.sum_b);
  out.pooled_count = out.samples_used;
  return out;
}

/// Result of the full risk-bound pipeline for one point.
struct RiskBound {
  std::optional<int> predicted;   // A, the closest prototype
  std::optional<int> runner_up;   // B, the closest among the rest
  double gamma_lower = 0.0;       // one-sided lower confidence bound on gamma
  bool abstained = true;
  std::uint64_t samples_used = 0;
  std::uint64_t pooled_count = 0;
  Vec pooled_mean;                // mean of every consumed embedding
};

/// Algorithm-2 pipeline: find A, re-run excluding A to find B, pool every
/// consumed sample from both runs, and lower-bound gamma. Each pooled sample
/// contributes one gamma observation; gamma is affine in the embedding, so
/// the observation mean equals the risk of the pooled mean, and the
/// observations live in an interval of width 2 because embeddings are unit
/// norm.
template <class Source>
RiskBound embedding_risk_lower_bound(const Source& src, const PrototypeSet& protos,
                                     const SmoothingConfig& cfg) {
  cfg.validate();
  if (protos.n_classes() < 2)
    throw domain_error("certification needs at least two classes");

  RiskBound rb;
  const ClosestOutcome run_a = closest_prototype(src, protos, cfg);
  rb.samples_used = run_a.samples_used;
  if (!run_a.winner) return rb;  // abstain

  const ClosestOutcome run_b =
      closest_prototype(src, protos, cfg, *run_a.winner, run_a.next_index);
  rb.samples_used += run_b.samples_used;
  if (!run_b.winner) return rb;  // abstain

  rb.predicted = run_a.winner;
  rb.runner_up = run_b.winner;
  rb.pooled_count = run_a.pooled_count + run_b.pooled_count;
  rb.pooled_mean = run_a.pooled_sum;
  add_into(rb.pooled_mean, run_b.pooled_sum);
  scale(rb.pooled_mean, 1.0 / static_cast<double>(rb.pooled_count));

  const double gamma_mean = embedding_risk(rb.pooled_mean, protos.prototype_of(*rb.predicted),
                                           protos.prototype_of(*rb.runner_up));
  rb.gamma_lower = gamma_mean - hoeffding_halfwidth(rb.pooled_count, 2.0, cfg.alpha);
  rb.abstained = false;
  return rb;
}

struct CertificationResult {
  std::optional<int> prediction;
  double gamma_lower = 0.0;
  double radius = 0.0;
  std::uint64_t samples_used = 0;
  bool abstained = true;
  double wall_seconds = 0.0;
};

template <class Source>
CertificationResult certify(const Source& src, const PrototypeSet& protos,
                            const SmoothingConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  const RiskBound rb = embedding_risk_lower_bound(src, protos, cfg);

  CertificationResult res;
  res.samples_used = rb.samples_used;
  res.abstained = rb.abstained;
  if (!rb.abstained) {
    res.prediction = rb.predicted;
    res.gamma_lower = rb.gamma_lower;
    res.radius = certified_radius(rb.gamma_lower, cfg.sigma);
  }
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

/// Convenience: certify a raw input against a model, with the noise stream
/// keyed by cfg.seed.
inline CertificationResult certify(const EmbeddingModel& model, std::span<const double> x,
                                   const PrototypeSet& protos, const SmoothingConfig& cfg) {
  NoiseStream stream{cfg.seed, cfg.sigma, model.input_dim()};
  return certify(ModelNoisySource(model, Vec(x.begin(), x.end()), stream), protos, cfg);
}

/// Upper bounds on the chance the search (q1) or the risk bound (q2) errs.
inline std::pair<double, double> failure_probabilities(std::uint64_t n_classes, double alpha) {
  if (n_classes < 1) throw domain_error("failure_probabilities: need at least one class");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw domain_error("failure_probabilities: alpha must be in (0,1)");
  const double k = static_cast<double>(n_classes);
  return {k * alpha, alpha + k * alpha - k * alpha * alpha};
}

}  // namespace protocert
