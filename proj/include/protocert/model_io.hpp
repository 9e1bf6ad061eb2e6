// model_io.hpp -- self-describing text persistence for embedding models.
// Round-trips are bit-exact: parameters are written as decimal floats with
// 17 significant digits.
#pragma once

#include <sstream>
#include <string>

#include "protocert/embedding.hpp"
#include "protocert/io_util.hpp"

namespace protocert {

inline constexpr const char* kModelFileTag = "protocert-model";
inline constexpr const char* kModelFileVersion = "v1";

namespace detail {

inline void write_vec(std::ostringstream& out, const Vec& v) {
  for (double x : v) out << ' ' << format_double17(x);
  out << '\n';
}

}  // namespace detail

inline std::string serialize_model(const EmbeddingModel& model) {
  std::ostringstream out;
  out << kModelFileTag << ' ' << kModelFileVersion << '\n';
  out << "kind " << to_string(model.kind()) << '\n';
  switch (model.kind()) {
    case ModelKind::constant: {
      const auto& m = model.as<ConstantModel>();
      out << "input_dim " << m.input_dim << '\n';
      out << "embed_dim " << m.value.size() << '\n';
      out << "value";
      detail::write_vec(out, m.value);
      break;
    }
    case ModelKind::circle: {
      const auto& m = model.as<CircleModel>();
      out << "input_dim " << m.direction.size() << '\n';
      out << "direction";
      detail::write_vec(out, m.direction);
      break;
    }
    case ModelKind::step: {
      const auto& m = model.as<StepModel>();
      out << "input_dim " << m.input_dim << '\n';
      out << "embed_dim " << m.embed_dim << '\n';
      out << "axis " << m.axis << '\n';
      break;
    }
    case ModelKind::mlp: {
      const auto& m = model.as<MlpModel>();
      out << "layers " << m.layer_dims.size() << '\n';
      out << "layer_dims";
      for (std::size_t d : m.layer_dims) out << ' ' << d;
      out << '\n';
      for (std::size_t l = 0; l < m.n_layers(); ++l) {
        out << "W" << l;
        detail::write_vec(out, m.weights[l]);
        out << "b" << l;
        detail::write_vec(out, m.biases[l]);
      }
      break;
    }
    case ModelKind::file_backed:
      throw domain_error(
          "file-backed models persist through their embedding table, not the model format");
  }
  return out.str();
}

inline void save_model(const EmbeddingModel& model, const std::string& path) {
  write_file(path, serialize_model(model));
}

inline EmbeddingModel parse_model(std::string content) {
  TokenReader r(std::move(content));
  r.expect(kModelFileTag);
  r.expect(kModelFileVersion);
  r.expect("kind");
  const std::size_t kind_at = r.offset();
  const std::string kind = r.next_token("model kind");

  if (kind == "constant") {
    r.expect("input_dim");
    const std::size_t input_dim = r.read_count("input_dim");
    r.expect("embed_dim");
    const std::size_t embed_dim = r.read_count("embed_dim");
    r.expect("value");
    ConstantModel m;
    m.input_dim = input_dim;
    r.read_vec(m.value, embed_dim, "constant value");
    return EmbeddingModel(std::move(m));
  }
  if (kind == "circle") {
    r.expect("input_dim");
    const std::size_t input_dim = r.read_count("input_dim");
    r.expect("direction");
    CircleModel m;
    r.read_vec(m.direction, input_dim, "circle direction");
    return EmbeddingModel(std::move(m));
  }
  if (kind == "step") {
    StepModel m;
    r.expect("input_dim");
    m.input_dim = r.read_count("input_dim");
    r.expect("embed_dim");
    m.embed_dim = r.read_count("embed_dim");
    r.expect("axis");
    m.axis = r.read_count("axis");
    return EmbeddingModel(std::move(m));
  }
  if (kind == "mlp") {
    r.expect("layers");
    const std::size_t layers = r.read_count("layer count");
    if (layers < 3) throw parse_error("mlp needs at least 3 layer dims", r.offset());
    r.expect("layer_dims");
    MlpModel m;
    m.layer_dims.resize(layers);
    for (auto& d : m.layer_dims) d = r.read_count("layer dim");
    m.weights.resize(layers - 1);
    m.biases.resize(layers - 1);
    for (std::size_t l = 0; l + 1 < layers; ++l) {
      r.expect("W" + std::to_string(l));
      r.read_vec(m.weights[l], m.layer_dims[l + 1] * m.layer_dims[l], "weight");
      r.expect("b" + std::to_string(l));
      r.read_vec(m.biases[l], m.layer_dims[l + 1], "bias");
    }
    return EmbeddingModel(std::move(m));
  }
  throw parse_error("unknown model kind '" + kind + "'", kind_at);
}

inline EmbeddingModel load_model(const std::string& path) {
  return parse_model(read_file(path));
}

}  // namespace protocert
