// train.hpp -- episodic training of the mlp embedding on the prototypical
// loss: negative log-softmax over negative squared embedding-prototype
// distances, with optional Gaussian input augmentation. Single-threaded and
// fully deterministic given the seed.
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "protocert/common.hpp"
#include "protocert/embedding.hpp"
#include "protocert/episode.hpp"
#include "protocert/prototype.hpp"
#include "protocert/rng.hpp"

namespace protocert {

struct NoiseAugmentation {
  double sigma = 1.0;
  double probability = 0.3;
};

struct TrainConfig {
  double lr = 1e-3;
  std::size_t steps = 2000;
  NoiseAugmentation aug;
  std::uint64_t seed = 0;
};

/// Gaussian init scaled by 1/sqrt(fan_in); biases zero.
inline MlpModel init_mlp(const MlpSpec& spec, std::uint64_t seed) {
  spec.validate();
  CounterRng rng(seed, rng_stream::train_init);
  MlpModel m;
  m.layer_dims = spec.layer_dims;
  for (std::size_t l = 0; l + 1 < spec.layer_dims.size(); ++l) {
    const std::size_t in = spec.layer_dims[l], out = spec.layer_dims[l + 1];
    Vec w(out * in);
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w) v = s * rng.gaussian();
    m.weights.push_back(std::move(w));
    m.biases.emplace_back(out, 0.0);
  }
  return m;
}

namespace detail {

struct AdamState {
  std::vector<Vec> m_w, v_w, m_b, v_b;
  std::size_t t = 0;

  void init(const MlpModel& model) {
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
      m_w.emplace_back(model.weights[l].size(), 0.0);
      v_w.emplace_back(model.weights[l].size(), 0.0);
      m_b.emplace_back(model.biases[l].size(), 0.0);
      v_b.emplace_back(model.biases[l].size(), 0.0);
    }
  }

  void update(Vec& w, const Vec& g, Vec& m, Vec& v, double lr) const {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }

  void step(MlpModel& model, const std::vector<Vec>& gw, const std::vector<Vec>& gb,
            double lr) {
    ++t;
    for (std::size_t l = 0; l < model.n_layers(); ++l) {
      update(model.weights[l], gw[l], m_w[l], v_w[l], lr);
      update(model.biases[l], gb[l], m_b[l], v_b[l], lr);
    }
  }
};

}  // namespace detail

/// One optimization step on one episode; returns the loss. Exposed so tests
/// can watch convergence.
inline double prototypical_step(MlpModel& model, const Episode& ep, const TrainConfig& cfg,
                                CounterRng& aug_rng, detail::AdamState& adam) {
  const auto maybe_augment = [&](const Vec& x) {
    // The augmentation decision consumes one uniform per sample either way,
    // so the draw sequence does not depend on earlier outcomes.
    Vec out = x;
    const bool hit = aug_rng.uniform() < cfg.aug.probability;
    if (hit && cfg.aug.sigma > 0.0)
      for (double& v : out) v += cfg.aug.sigma * aug_rng.gaussian();
    return out;
  };

  // Forward all support and query points, keeping caches for backprop.
  std::vector<MlpModel::Cache> sup_cache(ep.support.size()), qry_cache(ep.query.size());
  for (std::size_t i = 0; i < ep.support.size(); ++i)
    model.forward(maybe_augment(ep.support[i].x), sup_cache[i]);
  for (std::size_t j = 0; j < ep.query.size(); ++j)
    model.forward(maybe_augment(ep.query[j].x), qry_cache[j]);

  // Class prototypes as means of support embeddings.
  std::vector<int> ids;
  for (const auto& p : ep.support) ids.push_back(p.label);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  std::map<int, std::size_t> class_index;
  for (std::size_t k = 0; k < ids.size(); ++k) class_index[ids[k]] = k;

  const std::size_t d = model.layer_dims.back();
  std::vector<Vec> proto(ids.size(), Vec(d, 0.0));
  std::vector<double> counts(ids.size(), 0.0);
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    const std::size_t k = class_index.at(ep.support[i].label);
    add_into(proto[k], sup_cache[i].output);
    counts[k] += 1.0;
  }
  for (std::size_t k = 0; k < ids.size(); ++k) scale(proto[k], 1.0 / counts[k]);

  // Loss and logit gradients.
  const double m_queries = static_cast<double>(ep.query.size());
  double loss = 0.0;
  std::vector<Vec> dlogit(ep.query.size(), Vec(ids.size()));
  for (std::size_t j = 0; j < ep.query.size(); ++j) {
    Vec logits(ids.size());
    for (std::size_t k = 0; k < ids.size(); ++k)
      logits[k] = -squared_distance(qry_cache[j].output, proto[k]);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const std::size_t y = class_index.at(ep.query[j].label);
    loss += -(logits[y] - mx - std::log(z));
    for (std::size_t k = 0; k < ids.size(); ++k)
      dlogit[j][k] = (std::exp(logits[k] - mx) / z - (k == y ? 1.0 : 0.0)) / m_queries;
  }
  loss /= m_queries;

  // Backpropagate through queries and through the prototype means.
  std::vector<Vec> gw, gb;
  for (std::size_t l = 0; l < model.n_layers(); ++l) {
    gw.emplace_back(model.weights[l].size(), 0.0);
    gb.emplace_back(model.biases[l].size(), 0.0);
  }
  std::vector<Vec> dproto(ids.size(), Vec(d, 0.0));
  Vec dq(d);
  for (std::size_t j = 0; j < ep.query.size(); ++j) {
    std::fill(dq.begin(), dq.end(), 0.0);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      const double g2 = 2.0 * dlogit[j][k];
      for (std::size_t i = 0; i < d; ++i) {
        const double diff = qry_cache[j].output[i] - proto[k][i];
        dq[i] -= g2 * diff;      // d(-||q-c||^2)/dq = -2(q-c)
        dproto[k][i] += g2 * diff;
      }
    }
    model.backward(qry_cache[j], dq, &gw, &gb, nullptr);
  }
  Vec de(d);
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    const std::size_t k = class_index.at(ep.support[i].label);
    for (std::size_t c = 0; c < d; ++c) de[c] = dproto[k][c] / counts[k];
    model.backward(sup_cache[i], de, &gw, &gb, nullptr);
  }

  adam.step(model, gw, gb, cfg.lr);
  return loss;
}

/// Train a fresh mlp on a stream of episodes; `episodes(step)` supplies the
/// task for each step. Reproducible from cfg.seed.
template <class EpisodeSource>
EmbeddingModel train_mlp(const MlpSpec& spec, EpisodeSource&& episodes, const TrainConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw domain_error("train: lr must be positive");
  if (cfg.aug.probability < 0.0 || cfg.aug.probability > 1.0)
    throw domain_error("train: augmentation probability must be in [0,1]");
  MlpModel model = init_mlp(spec, cfg.seed);
  detail::AdamState adam;
  adam.init(model);
  CounterRng aug_rng(cfg.seed, rng_stream::train_aug);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    const Episode ep = episodes(step);
    if (ep.input_dim != spec.layer_dims.front())
      throw shape_error("train: episode input_dim does not match the mlp spec");
    double loss = 0.0;
    try {
      loss = prototypical_step(model, ep, cfg, aug_rng, adam);
    } catch (const degenerate_error& e) {
      // an exploded or collapsed pre-normalization vector mid-run is a
      // divergence, not a modeling error
      throw divergence_error(e.what(), step);
    }
    if (!std::isfinite(loss)) throw divergence_error("training loss is non-finite", step);
    for (const Vec& w : model.weights)
      if (!all_finite(w)) throw divergence_error("weights became non-finite", step);
  }
  return EmbeddingModel(std::move(model));
}

/// Plain nearest-prototype accuracy of a model on an episode's query set.
inline double episode_query_accuracy(const EmbeddingModel& model, const Episode& ep) {
  if (ep.query.empty()) throw validation_error("episode has no query points");
  const PrototypeSet protos = episode_prototypes(model, ep);
  std::size_t correct = 0;
  for (const auto& q : ep.query)
    if (classify(model.embed(q.x), protos) == q.label) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ep.query.size());
}

}  // namespace protocert
