// episode.hpp -- synthetic few-shot episodes, episode persistence, and
// ingestion of externally produced noisy-embedding tables and prototype
// files.
#pragma once

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "protocert/common.hpp"
#include "protocert/embedding.hpp"
#include "protocert/io_util.hpp"
#include "protocert/prototype.hpp"
#include "protocert/rng.hpp"

namespace protocert {

struct LabeledPoint {
  Vec x;
  int label = 0;
};

struct Episode {
  std::size_t input_dim = 0;
  std::size_t n_way = 0;
  std::size_t shots = 0;
  std::vector<LabeledPoint> support;
  std::vector<LabeledPoint> query;
  std::uint64_t seed = 0;  // provenance only; not persisted

  void validate() const {
    if (input_dim == 0) throw validation_error("episode: input_dim must be positive");
    std::map<int, std::size_t> per_class;
    for (const auto& p : support) {
      require_dim(p.x, input_dim, "support point");
      require_finite(p.x, "support point");
      ++per_class[p.label];
    }
    if (per_class.size() != n_way)
      throw validation_error("episode: support has " + std::to_string(per_class.size()) +
                             " classes, declared n_way is " + std::to_string(n_way));
    for (const auto& [label, count] : per_class)
      if (count != shots)
        throw validation_error("episode: class " + std::to_string(label) + " has " +
                               std::to_string(count) + " support points, expected " +
                               std::to_string(shots));
    for (const auto& p : query) {
      require_dim(p.x, input_dim, "query point");
      require_finite(p.x, "query point");
      if (!per_class.count(p.label))
        throw validation_error("episode: query label " + std::to_string(p.label) +
                               " absent from support");
    }
  }
};

struct ClusterSpec {
  std::size_t n_way = 2;
  std::size_t shots = 5;
  std::size_t queries_per_class = 10;
  std::size_t input_dim = 8;
  double center_spread = 4.0;
  double within_std = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_way == 0 || shots == 0 || input_dim == 0)
      throw domain_error("cluster spec: n_way, shots and input_dim must be positive");
    if (!(center_spread > 0.0)) throw domain_error("cluster spec: center_spread must be > 0");
    if (within_std < 0.0) throw domain_error("cluster spec: within_std must be >= 0");
  }
};

/// Gaussian-cluster episode: iid class centers scaled by center_spread,
/// then per-class Gaussian points with within_std. Deterministic per seed.
inline Episode generate_episode(const ClusterSpec& spec) {
  spec.validate();
  CounterRng rng(spec.seed, rng_stream::episode_gen);

  std::vector<Vec> centers(spec.n_way, Vec(spec.input_dim));
  for (auto& c : centers)
    for (double& v : c) v = spec.center_spread * rng.gaussian();

  Episode ep;
  ep.input_dim = spec.input_dim;
  ep.n_way = spec.n_way;
  ep.shots = spec.shots;
  ep.seed = spec.seed;
  auto draw_point = [&](const Vec& center) {
    Vec x(spec.input_dim);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = center[i] + spec.within_std * rng.gaussian();
    return x;
  };
  for (std::size_t k = 0; k < spec.n_way; ++k)
    for (std::size_t s = 0; s < spec.shots; ++s)
      ep.support.push_back({draw_point(centers[k]), static_cast<int>(k)});
  for (std::size_t k = 0; k < spec.n_way; ++k)
    for (std::size_t q = 0; q < spec.queries_per_class; ++q)
      ep.query.push_back({draw_point(centers[k]), static_cast<int>(k)});
  ep.validate();
  return ep;
}

// ---------------------------------------------------------------------------
// Episode persistence
// ---------------------------------------------------------------------------

inline constexpr const char* kEpisodeFileTag = "protocert-episode";
inline constexpr const char* kFileVersion = "v1";

inline std::string serialize_episode(const Episode& ep) {
  ep.validate();
  std::ostringstream out;
  out << kEpisodeFileTag << ' ' << kFileVersion << '\n';
  out << "input_dim " << ep.input_dim << '\n';
  out << "n_way " << ep.n_way << '\n';
  out << "shots " << ep.shots << '\n';
  auto write_points = [&](const char* name, const std::vector<LabeledPoint>& pts) {
    out << name << ' ' << pts.size() << '\n';
    for (const auto& p : pts) {
      out << p.label;
      for (double v : p.x) out << ' ' << format_double17(v);
      out << '\n';
    }
  };
  write_points("support", ep.support);
  write_points("query", ep.query);
  return out.str();
}

inline void save_episode(const Episode& ep, const std::string& path) {
  write_file(path, serialize_episode(ep));
}

inline Episode parse_episode(std::string content) {
  TokenReader r(std::move(content));
  r.expect(kEpisodeFileTag);
  r.expect(kFileVersion);
  Episode ep;
  r.expect("input_dim");
  ep.input_dim = r.read_count("input_dim");
  r.expect("n_way");
  ep.n_way = r.read_count("n_way");
  r.expect("shots");
  ep.shots = r.read_count("shots");
  auto read_points = [&](const char* name, std::vector<LabeledPoint>& pts) {
    r.expect(name);
    const std::size_t count = r.read_count("point count");
    pts.resize(count);
    for (auto& p : pts) {
      p.label = static_cast<int>(r.read_int("label"));
      r.read_vec(p.x, ep.input_dim, "coordinate");
    }
  };
  read_points("support", ep.support);
  read_points("query", ep.query);
  if (!r.at_end()) throw parse_error("trailing content after episode", r.offset());
  ep.validate();
  return ep;
}

inline Episode load_episode(const std::string& path) {
  return parse_episode(read_file(path));
}

// ---------------------------------------------------------------------------
// Embedding tables: one record per line, `point_id noise_index v1 ... vd`.
// ---------------------------------------------------------------------------

inline constexpr double kTableUnitNormTol = 1e-6;

inline std::string serialize_embedding_table(const EmbeddingTable& table) {
  std::ostringstream out;
  for (const auto& [point_id, rows] : table.points)
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out << point_id << ' ' << i;
      for (double v : rows[i]) out << ' ' << format_double17(v);
      out << '\n';
    }
  return out.str();
}

inline void save_embedding_table(const EmbeddingTable& table, const std::string& path) {
  write_file(path, serialize_embedding_table(table));
}

/// Parse and validate a table. The record width is set by the first line;
/// rows must be unit norm within 1e-6, keys must be unique, and each point's
/// noise indices must run 0..n-1 without gaps.
inline EmbeddingTable parse_embedding_table(const std::string& content) {
  EmbeddingTable table;
  std::map<std::string, std::map<std::uint64_t, Vec>> staged;
  std::size_t row = 0;
  std::size_t line_start = 0;
  std::istringstream in(content);
  std::string line;
  while (std::getline(in, line)) {
    const std::size_t at = line_start;
    line_start += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;

    std::istringstream ls(line);
    std::string point_id;
    long long rawidx = 0;
    if (!(ls >> point_id >> rawidx))
      throw parse_error("embedding table row " + std::to_string(row) +
                        ": expected `point_id noise_index v1 ... vd`", at);
    if (rawidx < 0)
      throw validation_error("embedding table row " + std::to_string(row) +
                             ": negative noise index");
    const auto idx = static_cast<std::uint64_t>(rawidx);

    Vec v;
    double comp = 0.0;
    while (ls >> comp) v.push_back(comp);
    if (!ls.eof())
      throw parse_error("embedding table row " + std::to_string(row) +
                        ": non-numeric embedding component", at);
    if (v.empty())
      throw parse_error("embedding table row " + std::to_string(row) +
                        ": no embedding components", at);
    if (table.dim == 0) table.dim = v.size();
    if (v.size() != table.dim)
      throw parse_error("embedding table row " + std::to_string(row) + " has " +
                        std::to_string(v.size()) + " components, expected " +
                        std::to_string(table.dim), at);

    require_finite(v, "embedding table row");
    const double nrm = norm(v);
    if (std::abs(nrm - 1.0) > kTableUnitNormTol)
      throw validation_error("embedding table row " + std::to_string(row) + " (point '" +
                             point_id + "', index " + std::to_string(idx) + ") has norm " +
                             std::to_string(nrm) + ", expected unit");
    const bool inserted = staged[point_id].emplace(idx, std::move(v)).second;
    if (!inserted)
      throw validation_error("embedding table: duplicate key (point '" + point_id +
                             "', index " + std::to_string(idx) + ")");
  }
  for (auto& [point_id, rows] : staged) {
    std::vector<Vec> ordered;
    ordered.reserve(rows.size());
    std::uint64_t expect = 0;
    for (auto& [idx, v] : rows) {
      if (idx != expect)
        throw validation_error("embedding table: point '" + point_id + "' is missing noise index " +
                               std::to_string(expect) + " of " + std::to_string(rows.size()));
      ++expect;
      ordered.push_back(std::move(v));
    }
    table.points.emplace(point_id, std::move(ordered));
  }
  return table;
}

inline EmbeddingModel load_embedding_table_from_string(const std::string& content) {
  return EmbeddingModel(FileBackedModel{parse_embedding_table(content)});
}

inline EmbeddingModel load_embedding_table(const std::string& path) {
  return load_embedding_table_from_string(read_file(path));
}

// ---------------------------------------------------------------------------
// Prototype persistence (fixture for table-driven certification runs)
// ---------------------------------------------------------------------------

inline constexpr const char* kPrototypeFileTag = "protocert-prototypes";

inline std::string serialize_prototypes(const PrototypeSet& protos) {
  protos.validate();
  std::ostringstream out;
  out << kPrototypeFileTag << ' ' << kFileVersion << '\n';
  out << "embed_dim " << protos.dim() << '\n';
  out << "classes " << protos.n_classes() << '\n';
  for (std::size_t k = 0; k < protos.n_classes(); ++k) {
    out << protos.class_ids[k] << ' ' << protos.support_counts[k];
    for (double v : protos.prototypes[k]) out << ' ' << format_double17(v);
    out << '\n';
  }
  return out.str();
}

inline void save_prototypes(const PrototypeSet& protos, const std::string& path) {
  write_file(path, serialize_prototypes(protos));
}

inline PrototypeSet parse_prototypes(std::string content) {
  TokenReader r(std::move(content));
  r.expect(kPrototypeFileTag);
  r.expect(kFileVersion);
  r.expect("embed_dim");
  const std::size_t d = r.read_count("embed_dim");
  r.expect("classes");
  const std::size_t k = r.read_count("class count");
  PrototypeSet protos;
  for (std::size_t i = 0; i < k; ++i) {
    protos.class_ids.push_back(static_cast<int>(r.read_int("class id")));
    protos.support_counts.push_back(r.read_count("support count"));
    Vec v;
    r.read_vec(v, d, "prototype component");
    protos.prototypes.push_back(std::move(v));
  }
  if (!r.at_end()) throw parse_error("trailing content after prototypes", r.offset());
  if (!std::is_sorted(protos.class_ids.begin(), protos.class_ids.end()))
    throw validation_error("prototype file: class ids must be sorted ascending");
  protos.validate();
  return protos;
}

inline PrototypeSet load_prototypes(const std::string& path) {
  return parse_prototypes(read_file(path));
}

/// Prototypes of an episode's support set under a base model.
inline PrototypeSet episode_prototypes(const EmbeddingModel& model, const Episode& ep) {
  std::vector<Vec> embeddings;
  std::vector<int> labels;
  embeddings.reserve(ep.support.size());
  for (const auto& p : ep.support) {
    embeddings.push_back(model.embed(p.x));
    labels.push_back(p.label);
  }
  return compute_prototypes(embeddings, labels);
}

}  // namespace protocert
