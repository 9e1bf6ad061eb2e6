// harness.hpp -- evaluation surfaces over a certified test set: per-point
// results, certified-accuracy curves, abstain rates, timing, sample-size
// histograms, and certified-vs-empirical comparison curves, all as CSV.
//
// Points are certified by a worker pool; every point's noise stream is keyed
// by (config seed, point index), so results and output bytes do not depend
// on the pool size.
#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "protocert/attack.hpp"
#include "protocert/certify.hpp"
#include "protocert/common.hpp"
#include "protocert/episode.hpp"
#include "protocert/io_util.hpp"
#include "protocert/smoothing.hpp"

namespace protocert {

struct PointRecord {
  std::string point_id;
  int true_label = 0;
  CertificationResult cert;
};

inline std::string query_point_id(std::size_t index) { return "q" + std::to_string(index); }

namespace detail {

/// Run job(i) for i in [0, n) on `workers` threads; results land in input
/// order regardless of scheduling.
template <class Job>
auto run_indexed_pool(std::size_t n, unsigned workers, Job&& job) {
  using R = decltype(job(std::size_t{0}));
  std::vector<R> results(n);
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) results[i] = job(i);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
      try {
        results[i] = job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < workers && t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
  return results;
}

}  // namespace detail

/// Certify every query point of an episode against its support prototypes.
inline std::vector<PointRecord> certify_episode(const EmbeddingModel& model, const Episode& ep,
                                                const PrototypeSet& protos,
                                                const SmoothingConfig& cfg,
                                                unsigned workers = 1) {
  auto results = detail::run_indexed_pool(ep.query.size(), workers, [&](std::size_t i) {
    SmoothingConfig point_cfg = cfg;
    point_cfg.seed = derive_seed(cfg.seed, i);
    NoiseStream stream{point_cfg.seed, cfg.sigma, model.input_dim()};
    return certify(ModelNoisySource(model, ep.query[i].x, stream), protos, point_cfg);
  });
  std::vector<PointRecord> records(results.size());
  for (std::size_t i = 0; i < results.size(); ++i)
    records[i] = {query_point_id(i), ep.query[i].label, std::move(results[i])};
  return records;
}

/// Certify from a table of precomputed noisy embeddings; labels and point
/// order come from the episode's query list.
inline std::vector<PointRecord> certify_table(const EmbeddingTable& table, const Episode& ep,
                                              const PrototypeSet& protos,
                                              const SmoothingConfig& cfg,
                                              unsigned workers = 1) {
  auto results = detail::run_indexed_pool(ep.query.size(), workers, [&](std::size_t i) {
    return certify(TableNoisySource(table, query_point_id(i)), protos, cfg);
  });
  std::vector<PointRecord> records(results.size());
  for (std::size_t i = 0; i < results.size(); ++i)
    records[i] = {query_point_id(i), ep.query[i].label, std::move(results[i])};
  return records;
}

/// Write every noisy query embedding an in-process run would consume, for
/// indices [0, samples_per_point), keyed the same way certify_episode keys
/// its streams. A table-driven rerun then reproduces the in-process results.
inline EmbeddingTable export_noisy_embeddings(const EmbeddingModel& model, const Episode& ep,
                                              const SmoothingConfig& cfg,
                                              std::uint64_t samples_per_point) {
  EmbeddingTable table;
  table.dim = model.embed_dim();
  for (std::size_t i = 0; i < ep.query.size(); ++i) {
    NoiseStream stream{derive_seed(cfg.seed, i), cfg.sigma, model.input_dim()};
    ModelNoisySource src(model, ep.query[i].x, stream);
    std::vector<Vec> rows(samples_per_point);
    for (std::uint64_t s = 0; s < samples_per_point; ++s) src.embedding_at(s, rows[s]);
    table.points.emplace(query_point_id(i), std::move(rows));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Metrics over per-point records
// ---------------------------------------------------------------------------

/// CA(S, eps): fraction certified at radius > eps with a correct prediction.
/// Abstentions fail at every eps.
inline std::vector<std::pair<double, double>> certified_accuracy_curve(
    std::span<const PointRecord> records, std::span<const double> epsilon_grid) {
  if (records.empty()) throw validation_error("certified_accuracy_curve: empty test set");
  std::vector<std::pair<double, double>> curve;
  curve.reserve(epsilon_grid.size());
  for (double eps : epsilon_grid) {
    std::size_t hits = 0;
    for (const auto& rec : records)
      if (!rec.cert.abstained && rec.cert.prediction && *rec.cert.prediction == rec.true_label &&
          rec.cert.radius > eps)
        ++hits;
    curve.emplace_back(eps, static_cast<double>(hits) / static_cast<double>(records.size()));
  }
  return curve;
}

inline double abstain_rate(std::span<const PointRecord> records) {
  if (records.empty()) throw validation_error("abstain_rate: empty test set");
  std::size_t n = 0;
  for (const auto& rec : records)
    if (rec.cert.abstained) ++n;
  return static_cast<double>(n) / static_cast<double>(records.size());
}

struct TimingRow {
  std::uint64_t n = 0;
  double mean_seconds = 0.0;
  double std_seconds = 0.0;
  double mean_samples = 0.0;
};

/// Mean and standard deviation of per-point certification wall time at each
/// batch size. Runs single-threaded so the numbers are not scheduling noise.
inline std::vector<TimingRow> timing_report(const EmbeddingModel& model, const Episode& ep,
                                            const PrototypeSet& protos,
                                            const SmoothingConfig& cfg,
                                            std::span<const std::uint64_t> n_values) {
  if (ep.query.empty()) throw validation_error("timing_report: empty test set");
  std::vector<TimingRow> rows;
  for (std::uint64_t n : n_values) {
    SmoothingConfig run_cfg = cfg;
    run_cfg.n0 = n;
    if (run_cfg.max_samples < 2 * n) run_cfg.max_samples = 2 * n;
    const auto records = certify_episode(model, ep, protos, run_cfg, 1);
    double sum = 0.0, sum_sq = 0.0, samples = 0.0;
    for (const auto& rec : records) {
      sum += rec.cert.wall_seconds;
      sum_sq += rec.cert.wall_seconds * rec.cert.wall_seconds;
      samples += static_cast<double>(rec.cert.samples_used);
    }
    const double count = static_cast<double>(records.size());
    const double mean = sum / count;
    const double var = std::max(0.0, sum_sq / count - mean * mean);
    rows.push_back({n, mean, std::sqrt(var), samples / count});
  }
  return rows;
}

struct HistogramBucket {
  std::uint64_t lo = 0;  // [lo, hi)
  std::uint64_t hi = 0;
  std::size_t count = 0;
};

/// Histogram of samples_used with fixed bucket width anchored at the
/// observed minimum; bucket counts always sum to |S|.
inline std::vector<HistogramBucket> sample_size_histogram(std::span<const PointRecord> records,
                                                          std::uint64_t bucket_width) {
  if (records.empty()) throw validation_error("sample_size_histogram: empty test set");
  if (bucket_width == 0) throw domain_error("sample_size_histogram: bucket width must be > 0");
  std::uint64_t lo = records.front().cert.samples_used, hi = lo;
  for (const auto& rec : records) {
    lo = std::min(lo, rec.cert.samples_used);
    hi = std::max(hi, rec.cert.samples_used);
  }
  const std::size_t n_buckets = static_cast<std::size_t>((hi - lo) / bucket_width) + 1;
  std::vector<HistogramBucket> buckets(n_buckets);
  for (std::size_t b = 0; b < n_buckets; ++b) {
    buckets[b].lo = lo + b * bucket_width;
    buckets[b].hi = buckets[b].lo + bucket_width;
  }
  for (const auto& rec : records)
    ++buckets[static_cast<std::size_t>((rec.cert.samples_used - lo) / bucket_width)].count;
  return buckets;
}

struct CompareRow {
  double epsilon = 0.0;
  double certified = 0.0;
  double plain_random = 0.0;
  double smoothed_fgsm = 0.0;
  double smoothed_pgd = 0.0;
};

/// Certified accuracy next to the three empirical robust accuracies, per
/// epsilon. Reuses one certification pass for the certified column.
inline std::vector<CompareRow> compare_curves(const EmbeddingModel& model, const Episode& ep,
                                              const PrototypeSet& protos,
                                              const SmoothingConfig& cfg,
                                              std::span<const PointRecord> records,
                                              std::span<const double> epsilon_grid,
                                              std::size_t pgd_steps, std::uint64_t n_grad,
                                              std::uint64_t attack_seed) {
  const auto ca = certified_accuracy_curve(records, epsilon_grid);
  std::vector<CompareRow> rows;
  rows.reserve(epsilon_grid.size());
  for (std::size_t e = 0; e < epsilon_grid.size(); ++e) {
    CompareRow row;
    row.epsilon = epsilon_grid[e];
    row.certified = ca[e].second;
    AttackConfig attack;
    attack.epsilon = row.epsilon;
    attack.steps = pgd_steps;
    attack.n_grad = n_grad;
    attack.seed = derive_seed(attack_seed, e);

    attack.kind = AttackKind::random;
    row.plain_random = empirical_robust_accuracy(model, ep.query, protos, attack,
                                                 ClassifierKind::plain, cfg);
    attack.kind = AttackKind::fgsm;
    row.smoothed_fgsm = empirical_robust_accuracy(model, ep.query, protos, attack,
                                                  ClassifierKind::smoothed, cfg);
    attack.kind = AttackKind::pgd;
    row.smoothed_pgd = empirical_robust_accuracy(model, ep.query, protos, attack,
                                                 ClassifierKind::smoothed, cfg);
    rows.push_back(row);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// CSV rendering. Wall-clock cells are zeroed unless measured output was
// requested, keeping files byte-identical across runs and worker counts.
// ---------------------------------------------------------------------------

inline constexpr const char* kResultsCsvHeader =
    "point_id,true_label,prediction,abstained,gamma_lower,radius,samples_used,wall_ms";

inline std::string results_csv(std::span<const PointRecord> records, bool measured_time) {
  std::ostringstream out;
  out << kResultsCsvHeader << '\n';
  for (const auto& rec : records) {
    const auto& c = rec.cert;
    out << rec.point_id << ',' << rec.true_label << ','
        << (c.prediction ? *c.prediction : -1) << ',' << (c.abstained ? 1 : 0) << ','
        << format_double_shortest(c.abstained ? 0.0 : c.gamma_lower) << ','
        << format_double_shortest(c.radius) << ',' << c.samples_used << ','
        << format_double_shortest(measured_time ? c.wall_seconds * 1000.0 : 0.0) << '\n';
  }
  return out.str();
}

/// Inverse of results_csv, for curve/hist runs over cached results.
inline std::vector<PointRecord> parse_results_csv(const std::string& content) {
  std::istringstream in(content);
  std::string line;
  if (!std::getline(in, line) || line != kResultsCsvHeader)
    throw parse_error("results csv: bad header", 0);
  std::vector<PointRecord> records;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    std::istringstream ls(line);
    PointRecord rec;
    std::string field;
    auto next_field = [&](const char* what) {
      if (!std::getline(ls, field, ','))
        throw parse_error(std::string("results csv: missing field ") + what, at);
      return field;
    };
    auto to_int = [&](const std::string& s, const char* what) {
      try {
        return std::stoll(s);
      } catch (const std::exception&) {
        throw parse_error(std::string("results csv: bad ") + what + " '" + s + "'", at);
      }
    };
    auto to_double = [&](const std::string& s, const char* what) {
      try {
        return std::stod(s);
      } catch (const std::exception&) {
        throw parse_error(std::string("results csv: bad ") + what + " '" + s + "'", at);
      }
    };
    rec.point_id = next_field("point_id");
    rec.true_label = static_cast<int>(to_int(next_field("true_label"), "true_label"));
    const int pred = static_cast<int>(to_int(next_field("prediction"), "prediction"));
    const int abst = static_cast<int>(to_int(next_field("abstained"), "abstained"));
    rec.cert.abstained = abst != 0;
    if (!rec.cert.abstained) rec.cert.prediction = pred;
    rec.cert.gamma_lower = to_double(next_field("gamma_lower"), "gamma_lower");
    rec.cert.radius = to_double(next_field("radius"), "radius");
    const long long samples = to_int(next_field("samples_used"), "samples_used");
    if (samples < 0) throw parse_error("results csv: negative samples_used", at);
    rec.cert.samples_used = static_cast<std::uint64_t>(samples);
    rec.cert.wall_seconds = to_double(next_field("wall_ms"), "wall_ms") / 1000.0;
    records.push_back(std::move(rec));
  }
  return records;
}

inline std::string curve_csv(std::span<const std::pair<double, double>> curve) {
  std::ostringstream out;
  out << "epsilon,certified_accuracy\n";
  for (const auto& [eps, ca] : curve)
    out << format_double_shortest(eps) << ',' << format_double_shortest(ca) << '\n';
  return out.str();
}

inline std::string timing_csv(std::span<const TimingRow> rows, bool measured_time) {
  std::ostringstream out;
  out << "n,mean_s,std_s,mean_samples_used\n";
  for (const auto& r : rows)
    out << r.n << ',' << format_double_shortest(measured_time ? r.mean_seconds : 0.0) << ','
        << format_double_shortest(measured_time ? r.std_seconds : 0.0) << ','
        << format_double_shortest(r.mean_samples) << '\n';
  return out.str();
}

inline std::string histogram_csv(std::span<const HistogramBucket> buckets) {
  std::ostringstream out;
  out << "bucket_lo,bucket_hi,count\n";
  for (const auto& b : buckets) out << b.lo << ',' << b.hi << ',' << b.count << '\n';
  return out.str();
}

inline std::string compare_csv(std::span<const CompareRow> rows) {
  std::ostringstream out;
  out << "epsilon,certified_accuracy,plain_random_accuracy,smoothed_fgsm_accuracy,"
         "smoothed_pgd_accuracy\n";
  for (const auto& r : rows)
    out << format_double_shortest(r.epsilon) << ',' << format_double_shortest(r.certified)
        << ',' << format_double_shortest(r.plain_random) << ','
        << format_double_shortest(r.smoothed_fgsm) << ','
        << format_double_shortest(r.smoothed_pgd) << '\n';
  return out.str();
}

inline std::string attack_accuracy_csv(
    std::span<const std::pair<double, double>> rows) {
  std::ostringstream out;
  out << "epsilon,robust_accuracy\n";
  for (const auto& [eps, acc] : rows)
    out << format_double_shortest(eps) << ',' << format_double_shortest(acc) << '\n';
  return out.str();
}

}  // namespace protocert
