// embedding.hpp -- base embedding functions f: R^D -> R^d with ||f(x)|| = 1.
//
// Five kinds: `constant` (pinned unit vector), `circle` (cos/sin of a linear
// functional), `step` (axis-sign indicator), `mlp` (tanh layers with a hard
// l2-normalized output), and `file_backed` (a table of externally computed
// noisy embeddings keyed by point id and noise index). The analytic kinds
// admit closed-form Gaussian-smoothed means, which is what makes the
// certification machinery testable against exact values.
#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "protocert/common.hpp"

namespace protocert {

inline constexpr double kUnitNormTol = 1e-9;
inline constexpr double kDegeneratePrenormTol = 1e-12;

// ---------------------------------------------------------------------------
// Model kinds
// ---------------------------------------------------------------------------

struct ConstantModel {
  std::size_t input_dim = 0;
  Vec value;  // unit vector in R^d

  void validate() const {
    if (input_dim == 0) throw domain_error("constant model: input_dim must be positive");
    require_finite(value, "constant model value");
    if (std::abs(norm(value) - 1.0) > kUnitNormTol)
      throw validation_error("constant model value is not unit norm");
  }
};

/// f(x) = (cos<w,x>, sin<w,x>); unit norm by the trig identity.
struct CircleModel {
  Vec direction;  // w in R^D

  void validate() const {
    if (direction.empty()) throw domain_error("circle model: empty direction");
    require_finite(direction, "circle model direction");
  }
};

/// f(x) = e1 if x[axis] >= 0 else e2, in R^d with d >= 2.
struct StepModel {
  std::size_t input_dim = 0;
  std::size_t axis = 0;
  std::size_t embed_dim = 2;

  void validate() const {
    if (input_dim == 0) throw domain_error("step model: input_dim must be positive");
    if (axis >= input_dim) throw domain_error("step model: axis out of range");
    if (embed_dim < 2) throw domain_error("step model: embed_dim must be >= 2");
  }
};

struct MlpSpec {
  std::vector<std::size_t> layer_dims;  // D, hidden..., d

  void validate() const {
    if (layer_dims.size() < 3)
      throw domain_error("mlp spec: need at least one hidden layer (>= 3 dims)");
    for (std::size_t d : layer_dims)
      if (d == 0) throw domain_error("mlp spec: zero layer dimension");
  }
};

/// Tanh hidden layers, linear last layer, hard l2 normalization of the output.
struct MlpModel {
  std::vector<std::size_t> layer_dims;
  std::vector<Vec> weights;  // row-major, weights[l] is (dims[l+1] x dims[l])
  std::vector<Vec> biases;

  std::size_t n_layers() const { return weights.size(); }

  void validate() const {
    MlpSpec{layer_dims}.validate();
    if (weights.size() != layer_dims.size() - 1 || biases.size() != weights.size())
      throw validation_error("mlp model: layer count mismatch");
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].size() != layer_dims[l + 1] * layer_dims[l])
        throw validation_error("mlp model: weight matrix " + std::to_string(l) +
                               " has wrong size");
      if (biases[l].size() != layer_dims[l + 1])
        throw validation_error("mlp model: bias " + std::to_string(l) + " has wrong size");
      require_finite(weights[l], "mlp weights");
      require_finite(biases[l], "mlp biases");
    }
  }

  /// Layer-by-layer activations kept for backpropagation.
  struct Cache {
    std::vector<Vec> inputs;  // inputs[l] is the input to layer l; inputs[0] = x
    Vec prenorm;              // last linear output, before normalization
    double prenorm_norm = 0.0;
    Vec output;
  };

  void forward(std::span<const double> x, Cache& cache) const {
    const std::size_t layers = n_layers();
    cache.inputs.resize(layers);
    cache.inputs[0].assign(x.begin(), x.end());
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t in = layer_dims[l], out = layer_dims[l + 1];
      Vec& z = (l + 1 < layers) ? cache.inputs[l + 1] : cache.prenorm;
      z.assign(out, 0.0);
      const Vec& a = cache.inputs[l];
      const double* w = weights[l].data();
      for (std::size_t r = 0; r < out; ++r) {
        double s = biases[l][r];
        const double* row = w + r * in;
        for (std::size_t c = 0; c < in; ++c) s += row[c] * a[c];
        z[r] = s;
      }
      if (l + 1 < layers)
        for (double& v : z) v = std::tanh(v);
    }
    cache.prenorm_norm = norm(cache.prenorm);
    if (!(cache.prenorm_norm > kDegeneratePrenormTol) || !std::isfinite(cache.prenorm_norm))
      throw degenerate_error("mlp forward: pre-normalization vector has norm " +
                             std::to_string(cache.prenorm_norm));
    cache.output = cache.prenorm;
    scale(cache.output, 1.0 / cache.prenorm_norm);
  }

  /// dL/dW, dL/db for an upstream gradient at the normalized output; also
  /// returns the input gradient. `grad_w`/`grad_b` are accumulated into.
  void backward(const Cache& cache, std::span<const double> upstream,
                std::vector<Vec>* grad_w, std::vector<Vec>* grad_b, Vec* input_grad) const {
    const std::size_t layers = n_layers();
    // Through y = z/||z||: g = u/||z|| - z <z,u>/||z||^3.
    const double nz = cache.prenorm_norm;
    const double zu = dot(cache.prenorm, upstream);
    Vec g(cache.prenorm.size());
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] = upstream[i] / nz - cache.prenorm[i] * zu / (nz * nz * nz);

    for (std::size_t l = layers; l-- > 0;) {
      const std::size_t in = layer_dims[l], out = layer_dims[l + 1];
      const Vec& a = cache.inputs[l];
      if (grad_w) {
        double* gw = (*grad_w)[l].data();
        for (std::size_t r = 0; r < out; ++r) {
          const double gr = g[r];
          double* row = gw + r * in;
          for (std::size_t c = 0; c < in; ++c) row[c] += gr * a[c];
        }
      }
      if (grad_b) add_into((*grad_b)[l], g);
      Vec gin(in, 0.0);
      const double* w = weights[l].data();
      for (std::size_t r = 0; r < out; ++r) {
        const double gr = g[r];
        const double* row = w + r * in;
        for (std::size_t c = 0; c < in; ++c) gin[c] += gr * row[c];
      }
      if (l == 0) {
        if (input_grad) *input_grad = std::move(gin);
      } else {
        // input[l] = tanh(z_{l-1}), so d tanh = 1 - a^2.
        for (std::size_t c = 0; c < in; ++c) gin[c] *= 1.0 - a[c] * a[c];
        g = std::move(gin);
      }
    }
  }
};

/// Externally computed noisy embeddings: point id -> embeddings by noise index.
struct EmbeddingTable {
  std::size_t dim = 0;
  std::map<std::string, std::vector<Vec>> points;

  const Vec& lookup(const std::string& point_id, std::uint64_t noise_index) const {
    auto it = points.find(point_id);
    if (it == points.end())
      throw missing_embedding_error("embedding table: unknown point id '" + point_id + "'");
    if (noise_index >= it->second.size())
      throw missing_embedding_error("embedding table: point '" + point_id +
                                    "' has no noise index " + std::to_string(noise_index));
    return it->second[noise_index];
  }
};

struct FileBackedModel {
  EmbeddingTable table;
};

// ---------------------------------------------------------------------------
// Value-semantic wrapper
// ---------------------------------------------------------------------------

enum class ModelKind { constant, circle, step, mlp, file_backed };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::constant: return "constant";
    case ModelKind::circle: return "circle";
    case ModelKind::step: return "step";
    case ModelKind::mlp: return "mlp";
    case ModelKind::file_backed: return "file-backed";
  }
  return "?";
}

class EmbeddingModel {
 public:
  explicit EmbeddingModel(ConstantModel m) : impl_(std::move(m)) { as<ConstantModel>().validate(); }
  explicit EmbeddingModel(CircleModel m) : impl_(std::move(m)) { as<CircleModel>().validate(); }
  explicit EmbeddingModel(StepModel m) : impl_(std::move(m)) { as<StepModel>().validate(); }
  explicit EmbeddingModel(MlpModel m) : impl_(std::move(m)) { as<MlpModel>().validate(); }
  explicit EmbeddingModel(FileBackedModel m) : impl_(std::move(m)) {}

  ModelKind kind() const { return static_cast<ModelKind>(impl_.index()); }

  std::size_t input_dim() const {
    switch (kind()) {
      case ModelKind::constant: return as<ConstantModel>().input_dim;
      case ModelKind::circle: return as<CircleModel>().direction.size();
      case ModelKind::step: return as<StepModel>().input_dim;
      case ModelKind::mlp: return as<MlpModel>().layer_dims.front();
      case ModelKind::file_backed: return 0;  // keyed access, no input space
    }
    return 0;
  }

  std::size_t embed_dim() const {
    switch (kind()) {
      case ModelKind::constant: return as<ConstantModel>().value.size();
      case ModelKind::circle: return 2;
      case ModelKind::step: return as<StepModel>().embed_dim;
      case ModelKind::mlp: return as<MlpModel>().layer_dims.back();
      case ModelKind::file_backed: return as<FileBackedModel>().table.dim;
    }
    return 0;
  }

  bool differentiable() const { return kind() != ModelKind::file_backed; }

  bool has_smoothed_oracle() const {
    return kind() == ModelKind::constant || kind() == ModelKind::circle ||
           kind() == ModelKind::step;
  }

  void embed_into(std::span<const double> x, Vec& out) const {
    check_input(x);
    switch (kind()) {
      case ModelKind::constant: {
        const Vec& v = as<ConstantModel>().value;
        out.assign(v.begin(), v.end());
        return;
      }
      case ModelKind::circle: {
        const double t = dot(as<CircleModel>().direction, x);
        out.assign(2, 0.0);
        out[0] = std::cos(t);
        out[1] = std::sin(t);
        return;
      }
      case ModelKind::step: {
        const auto& m = as<StepModel>();
        out.assign(m.embed_dim, 0.0);
        out[x[m.axis] >= 0.0 ? 0 : 1] = 1.0;
        return;
      }
      case ModelKind::mlp: {
        thread_local MlpModel::Cache cache;
        as<MlpModel>().forward(x, cache);
        out = cache.output;
        return;
      }
      case ModelKind::file_backed:
        throw domain_error(
            "file-backed model has no forward map; embeddings are keyed by "
            "(point id, noise index) -- use lookup()");
    }
  }

  Vec embed(std::span<const double> x) const {
    Vec out;
    embed_into(x, out);
    return out;
  }

  /// J_f(x)^T * upstream, through the output normalization for the mlp kind.
  Vec vjp(std::span<const double> x, std::span<const double> upstream) const {
    if (!differentiable())
      throw not_differentiable_error("file-backed model exposes no vector-Jacobian product");
    check_input(x);
    require_dim(upstream, embed_dim(), "vjp upstream");
    switch (kind()) {
      case ModelKind::constant:
        return Vec(input_dim(), 0.0);
      case ModelKind::circle: {
        const Vec& w = as<CircleModel>().direction;
        const double t = dot(w, x);
        return scaled(w, -std::sin(t) * upstream[0] + std::cos(t) * upstream[1]);
      }
      case ModelKind::step:
        // Piecewise constant: zero derivative almost everywhere.
        return Vec(input_dim(), 0.0);
      case ModelKind::mlp: {
        thread_local MlpModel::Cache cache;
        as<MlpModel>().forward(x, cache);
        Vec g;
        as<MlpModel>().backward(cache, upstream, nullptr, nullptr, &g);
        return g;
      }
      default:
        throw internal_error("vjp: unreachable kind");
    }
  }

  /// Exact Gaussian-smoothed mean g(x) = E f(x + eps), eps ~ N(0, sigma^2 I),
  /// for the kinds that admit a closed form.
  Vec smoothed_oracle(std::span<const double> x, double sigma) const {
    if (sigma <= 0.0) throw domain_error("smoothed_oracle: sigma must be positive");
    check_input(x);
    switch (kind()) {
      case ModelKind::constant:
        return as<ConstantModel>().value;
      case ModelKind::circle: {
        // <w, x+eps> ~ N(<w,x>, sigma^2 ||w||^2); E cos / E sin pick up
        // the characteristic-function factor exp(-sigma^2 ||w||^2 / 2).
        const Vec& w = as<CircleModel>().direction;
        const double t = dot(w, x);
        const double damp = std::exp(-0.5 * sigma * sigma * squared_norm(w));
        return Vec{damp * std::cos(t), damp * std::sin(t)};
      }
      case ModelKind::step: {
        const auto& m = as<StepModel>();
        Vec out(m.embed_dim, 0.0);
        const double p = normal_cdf(x[m.axis] / sigma);
        out[0] = p;
        out[1] = 1.0 - p;
        return out;
      }
      default:
        throw domain_error(std::string("no closed-form smoothed oracle for kind ") +
                           to_string(kind()));
    }
  }

  const EmbeddingTable& table() const {
    if (kind() != ModelKind::file_backed)
      throw domain_error("only file-backed models carry an embedding table");
    return as<FileBackedModel>().table;
  }

  /// File-backed access: the noisy embedding of `point_id` at `noise_index`.
  const Vec& lookup(const std::string& point_id, std::uint64_t noise_index) const {
    return table().lookup(point_id, noise_index);
  }

  template <class T>
  const T& as() const {
    return std::get<T>(impl_);
  }

 private:
  void check_input(std::span<const double> x) const {
    if (kind() == ModelKind::file_backed) return;
    require_dim(x, input_dim(), "model input");
    require_finite(x, "model input");
  }

  std::variant<ConstantModel, CircleModel, StepModel, MlpModel, FileBackedModel> impl_;
};

/// Basis-vector constant model, the simplest zero-variance test subject.
inline EmbeddingModel constant_basis_model(std::size_t input_dim, std::size_t embed_dim,
                                           std::size_t axis = 0) {
  Vec v(embed_dim, 0.0);
  v.at(axis) = 1.0;
  return EmbeddingModel(ConstantModel{input_dim, std::move(v)});
}

}  // namespace protocert
