// attack.hpp -- empirical robustness probes: random spherical perturbations
// of the plain model, FGSM and PGD on the smoothed model, and robust
// accuracy metrics.
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "protocert/certify.hpp"
#include "protocert/common.hpp"
#include "protocert/embedding.hpp"
#include "protocert/episode.hpp"
#include "protocert/prototype.hpp"
#include "protocert/rng.hpp"
#include "protocert/smoothing.hpp"

namespace protocert {

enum class AttackKind { random, fgsm, pgd };

inline AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "random") return AttackKind::random;
  if (s == "fgsm") return AttackKind::fgsm;
  if (s == "pgd") return AttackKind::pgd;
  throw domain_error("unknown attack kind '" + s + "'");
}

struct AttackConfig {
  AttackKind kind = AttackKind::random;
  double epsilon = 0.0;
  std::size_t steps = 20;     // pgd only; per-step budget is epsilon/steps
  std::uint64_t n_grad = 1000;  // samples for the mean-gradient estimate
  std::uint64_t seed = 0;

  void validate() const {
    if (epsilon < 0.0) throw domain_error("attack: epsilon must be >= 0");
    if (steps < 1) throw domain_error("attack: steps must be >= 1");
    if (n_grad < 1) throw domain_error("attack: n_grad must be >= 1");
  }
};

/// x + delta with delta uniform on the sphere of radius epsilon.
inline Vec random_attack(std::span<const double> x, double epsilon, std::uint64_t seed) {
  if (epsilon < 0.0) throw domain_error("random_attack: epsilon must be >= 0");
  Vec out(x.begin(), x.end());
  if (epsilon == 0.0) return out;
  Vec dir(x.size());
  for (std::uint64_t attempt = 0;; ++attempt) {
    fill_gaussian(seed, rng_stream::attack, attempt, dir);
    const double n = norm(dir);
    if (n > 1e-100) {
      scale(dir, epsilon / n);
      break;
    }
  }
  add_into(out, dir);
  return out;
}

namespace detail {

/// Nearest and second-nearest prototype class indices for a point.
inline std::pair<std::size_t, std::size_t> nearest_two(std::span<const double> point,
                                                       const PrototypeSet& protos) {
  if (protos.n_classes() < 2) throw domain_error("nearest_two: need at least two classes");
  std::size_t best = 0, second = 1;
  double d_best = squared_distance(point, protos.prototypes[0]);
  double d_second = squared_distance(point, protos.prototypes[1]);
  if (d_second < d_best) {
    std::swap(best, second);
    std::swap(d_best, d_second);
  }
  for (std::size_t k = 2; k < protos.n_classes(); ++k) {
    const double d = squared_distance(point, protos.prototypes[k]);
    if (d < d_best) {
      second = best;
      d_second = d_best;
      best = k;
      d_best = d;
    } else if (d < d_second) {
      second = k;
      d_second = d;
    }
  }
  return {best, second};
}

/// Nearest and runner-up prototypes of the n_grad-sample smoothed estimate
/// at x, using stream indices [index_base, index_base + n_grad).
inline std::pair<std::size_t, std::size_t> estimate_nearest_two(
    const EmbeddingModel& model, std::span<const double> x, const PrototypeSet& protos,
    double sigma, std::uint64_t n_grad, std::uint64_t seed, std::uint64_t index_base) {
  const NoiseStream stream{seed, sigma, model.input_dim()};
  Vec noisy(x.size()), noise, emb;
  Vec ghat(model.embed_dim(), 0.0);
  for (std::uint64_t i = 0; i < n_grad; ++i) {
    stream.sample_into(index_base + i, noise);
    for (std::size_t c = 0; c < x.size(); ++c) noisy[c] = x[c] + noise[c];
    model.embed_into(noisy, emb);
    add_into(ghat, emb);
  }
  scale(ghat, 1.0 / static_cast<double>(n_grad));
  return nearest_two(ghat, protos);
}

/// Sign of the mean input gradient of the margin
/// ||g_hat - c_A||^2 - ||g_hat - c_B||^2 for fixed (A, B), rescaled to l2
/// norm `budget`; sign(0) = 0, and an all-zero sign yields a zero step.
/// The gradient is (2/n) sum_i J_f(x + eps_i)^T (c_B - c_A) with noise from
/// stream indices [index_base, index_base + n_grad).
inline Vec margin_sign_step(const EmbeddingModel& model, std::span<const double> x,
                            const PrototypeSet& protos, std::size_t a, std::size_t b,
                            double sigma, std::uint64_t n_grad, double budget,
                            std::uint64_t seed, std::uint64_t index_base) {
  const NoiseStream stream{seed, sigma, model.input_dim()};
  Vec upstream(model.embed_dim());
  for (std::size_t c = 0; c < upstream.size(); ++c)
    upstream[c] = 2.0 * (protos.prototypes[b][c] - protos.prototypes[a][c]);

  Vec noisy(x.size()), noise;
  Vec grad(x.size(), 0.0);
  for (std::uint64_t i = 0; i < n_grad; ++i) {
    stream.sample_into(index_base + i, noise);
    for (std::size_t c = 0; c < x.size(); ++c) noisy[c] = x[c] + noise[c];
    add_into(grad, model.vjp(noisy, upstream));
  }

  Vec sign(x.size(), 0.0);
  double sign_norm_sq = 0.0;
  for (std::size_t c = 0; c < grad.size(); ++c) {
    sign[c] = grad[c] > 0.0 ? 1.0 : (grad[c] < 0.0 ? -1.0 : 0.0);
    sign_norm_sq += sign[c] * sign[c];
  }
  if (sign_norm_sq == 0.0) return Vec(x.size(), 0.0);
  scale(sign, budget / std::sqrt(sign_norm_sq));
  return sign;
}

}  // namespace detail

inline Vec fgsm_attack(const EmbeddingModel& model, std::span<const double> x,
                       const PrototypeSet& protos, double sigma, std::uint64_t n_grad,
                       double epsilon, std::uint64_t seed) {
  if (!model.differentiable())
    throw not_differentiable_error("fgsm_attack needs a differentiable model");
  if (epsilon < 0.0) throw domain_error("fgsm_attack: epsilon must be >= 0");
  Vec out(x.begin(), x.end());
  if (epsilon == 0.0) return out;
  const auto [a, b] = detail::estimate_nearest_two(model, x, protos, sigma, n_grad, seed, 0);
  const Vec delta =
      detail::margin_sign_step(model, x, protos, a, b, sigma, n_grad, epsilon, seed, 0);
  add_into(out, delta);
  return out;
}

/// Iterated FGSM with per-step budget epsilon/steps and Euclidean ball
/// projection of the cumulative perturbation after each step. The attacked
/// margin is fixed at the starting point (nearest vs runner-up there), so
/// the iteration pushes in a consistent direction instead of oscillating at
/// the decision boundary. An optional warm start seeds the cumulative
/// perturbation (projected to the ball).
inline Vec pgd_attack(const EmbeddingModel& model, std::span<const double> x,
                      const PrototypeSet& protos, double sigma, std::uint64_t n_grad,
                      double epsilon, std::size_t steps, std::uint64_t seed,
                      std::span<const double> init_perturbation = {}) {
  if (!model.differentiable())
    throw not_differentiable_error("pgd_attack needs a differentiable model");
  if (epsilon < 0.0) throw domain_error("pgd_attack: epsilon must be >= 0");
  if (steps < 1) throw domain_error("pgd_attack: steps must be >= 1");

  Vec out(x.begin(), x.end());
  if (epsilon == 0.0) return out;

  Vec delta(x.size(), 0.0);
  if (!init_perturbation.empty()) {
    require_dim(init_perturbation, x.size(), "pgd init perturbation");
    delta.assign(init_perturbation.begin(), init_perturbation.end());
  }
  auto project = [&] {
    const double n = norm(delta);
    if (n > epsilon) scale(delta, epsilon / n);
  };
  project();

  Vec start(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) start[c] = x[c] + delta[c];
  const auto [a, b] = detail::estimate_nearest_two(model, start, protos, sigma, n_grad, seed, 0);

  Vec current(x.size());
  const double step_budget = epsilon / static_cast<double>(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    for (std::size_t c = 0; c < x.size(); ++c) current[c] = x[c] + delta[c];
    const Vec step =
        detail::margin_sign_step(model, current, protos, a, b, sigma, n_grad, step_budget,
                                 seed, static_cast<std::uint64_t>(s) * n_grad);
    add_into(delta, step);
    project();
  }
  add_into(out, delta);
  return out;
}

inline Vec run_attack(const EmbeddingModel& model, std::span<const double> x,
                      const PrototypeSet& protos, double sigma, const AttackConfig& cfg,
                      std::uint64_t seed) {
  cfg.validate();
  switch (cfg.kind) {
    case AttackKind::random: return random_attack(x, cfg.epsilon, seed);
    case AttackKind::fgsm:
      return fgsm_attack(model, x, protos, sigma, cfg.n_grad, cfg.epsilon, seed);
    case AttackKind::pgd:
      return pgd_attack(model, x, protos, sigma, cfg.n_grad, cfg.epsilon, cfg.steps, seed);
  }
  throw internal_error("run_attack: unreachable");
}

enum class ClassifierKind { plain, smoothed };

/// Smoothed prediction through the adaptive search; nullopt on abstain.
inline std::optional<int> smoothed_prediction(const EmbeddingModel& model,
                                              std::span<const double> x,
                                              const PrototypeSet& protos,
                                              const SmoothingConfig& cfg,
                                              std::uint64_t stream_seed) {
  NoiseStream stream{stream_seed, cfg.sigma, model.input_dim()};
  const auto out =
      closest_prototype(ModelNoisySource(model, Vec(x.begin(), x.end()), stream), protos, cfg);
  return out.winner;
}

/// Fraction of points whose clean and attacked predictions both equal the
/// true label. The smoothed classifier abstaining counts as incorrect.
inline double empirical_robust_accuracy(const EmbeddingModel& model,
                                        std::span<const LabeledPoint> points,
                                        const PrototypeSet& protos, const AttackConfig& attack,
                                        ClassifierKind classifier,
                                        const SmoothingConfig& cfg) {
  if (points.empty()) throw validation_error("empirical_robust_accuracy: empty point set");
  attack.validate();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    const Vec adv =
        run_attack(model, p.x, protos, cfg.sigma, attack, derive_seed(attack.seed, i));
    const bool unperturbed = adv == p.x;
    bool clean_ok = false, adv_ok = false;
    if (classifier == ClassifierKind::plain) {
      clean_ok = classify(model.embed(p.x), protos) == p.label;
      adv_ok = unperturbed ? clean_ok : classify(model.embed(adv), protos) == p.label;
    } else {
      const auto clean = smoothed_prediction(model, p.x, protos, cfg,
                                             derive_seed(cfg.seed, 2 * i));
      clean_ok = clean && *clean == p.label;
      if (unperturbed) {
        adv_ok = clean_ok;
      } else {
        const auto advp = smoothed_prediction(model, adv, protos, cfg,
                                              derive_seed(cfg.seed, 2 * i + 1));
        adv_ok = advp && *advp == p.label;
      }
    }
    if (clean_ok && adv_ok) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(points.size());
}

}  // namespace protocert
