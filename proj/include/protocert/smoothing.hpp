// smoothing.hpp -- deterministic Gaussian noise streams, Monte-Carlo smoothed
// embedding estimates, and the paired dot-product statistic whose expectation
// is the squared distance between the smoothed embedding and a prototype.
#pragma once

#include <atomic>
#include <cstdint>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "protocert/common.hpp"
#include "protocert/embedding.hpp"
#include "protocert/rng.hpp"

namespace protocert {

/// Index-addressable stream of N(0, sigma^2 I) vectors: sample(i) is a pure
/// function of (seed, i), so any subrange can be drawn without its
/// predecessors and evaluation order never matters.
struct NoiseStream {
  std::uint64_t seed = 0;
  double sigma = 1.0;
  std::size_t dim = 0;

  void sample_into(std::uint64_t index, Vec& out) const {
    out.resize(dim);
    fill_gaussian(seed, rng_stream::smoothing_noise, index, out);
    for (double& v : out) v *= sigma;
  }

  Vec sample(std::uint64_t index) const {
    Vec out;
    sample_into(index, out);
    return out;
  }
};

/// Monte-Carlo mean of noisy embeddings over a contiguous index range.
/// first_index/last_index are the inclusive endpoints of the range consumed.
struct SmoothedEstimate {
  Vec mean;
  std::uint64_t n_samples = 0;
  std::uint64_t first_index = 0;
  std::uint64_t last_index = 0;

  bool overlaps(const SmoothedEstimate& other) const {
    return first_index <= other.last_index && other.first_index <= last_index;
  }
};

// ---------------------------------------------------------------------------
// Noisy-embedding sources. A source answers "embedding at noise index i":
// either f(x + eps_i) through a model and stream, or a table lookup for
// externally computed embeddings. Anything with this shape plugs into the
// sampling core.
// ---------------------------------------------------------------------------

class ModelNoisySource {
 public:
  ModelNoisySource(const EmbeddingModel& model, Vec x, NoiseStream stream)
      : model_(&model), x_(std::move(x)), stream_(std::move(stream)) {
    require_dim(x_, model.input_dim(), "source input");
    require_finite(x_, "source input");
    stream_.dim = model.input_dim();
  }

  void embedding_at(std::uint64_t index, Vec& out) const {
    thread_local Vec noisy;
    stream_.sample_into(index, noisy);
    for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] += x_[i];
    model_->embed_into(noisy, out);
  }

  std::size_t embed_dim() const { return model_->embed_dim(); }
  const NoiseStream& stream() const { return stream_; }

 private:
  const EmbeddingModel* model_;
  Vec x_;
  NoiseStream stream_;
};

class TableNoisySource {
 public:
  TableNoisySource(const EmbeddingTable& table, std::string point_id)
      : table_(&table), point_id_(std::move(point_id)) {}

  void embedding_at(std::uint64_t index, Vec& out) const {
    const Vec& row = table_->lookup(point_id_, index);
    out.assign(row.begin(), row.end());
  }

  std::size_t embed_dim() const { return table_->dim; }
  const std::string& point_id() const { return point_id_; }

 private:
  const EmbeddingTable* table_;
  std::string point_id_;
};

// ---------------------------------------------------------------------------
// Sampling core
// ---------------------------------------------------------------------------

namespace detail {

// Fixed chunk width for parallel evaluation. Partial sums are formed per
// chunk and combined in ascending chunk order, so the reduction is
// bit-identical for any worker count.
inline constexpr std::uint64_t kReduceChunk = 1024;

template <class Source>
void accumulate_range(const Source& src, std::uint64_t begin, std::uint64_t end, Vec& sum) {
  thread_local Vec emb;
  for (std::uint64_t i = begin; i < end; ++i) {
    src.embedding_at(i, emb);
    add_into(sum, emb);
  }
}

}  // namespace detail

/// Mean embedding over noise indices [start, start + n). Evaluation may be
/// spread over `threads` workers; the reduction itself always proceeds in
/// ascending index order, so the result is bit-stable for fixed (seed,
/// start, n) no matter the parallelism.
template <class Source>
SmoothedEstimate mean_embedding(const Source& src, std::uint64_t start, std::uint64_t n,
                                unsigned threads = 1) {
  if (n == 0) throw domain_error("mean_embedding: need at least one sample");
  const std::size_t d = src.embed_dim();

  SmoothedEstimate est;
  est.n_samples = n;
  est.first_index = start;
  est.last_index = start + n - 1;

  // Partial sums are always formed per fixed-width chunk and combined in
  // ascending chunk order; thread count only changes who fills which chunk.
  const std::uint64_t n_chunks = (n + detail::kReduceChunk - 1) / detail::kReduceChunk;
  std::vector<Vec> partial(n_chunks, Vec(d, 0.0));
  auto fill_chunk = [&](std::uint64_t c) {
    const std::uint64_t b = start + c * detail::kReduceChunk;
    const std::uint64_t e = std::min(start + n, b + detail::kReduceChunk);
    detail::accumulate_range(src, b, e, partial[c]);
  };
  if (threads <= 1 || n_chunks == 1) {
    for (std::uint64_t c = 0; c < n_chunks; ++c) fill_chunk(c);
  } else {
    std::atomic<std::uint64_t> next{0};
    auto worker = [&] {
      for (std::uint64_t c = next.fetch_add(1); c < n_chunks; c = next.fetch_add(1))
        fill_chunk(c);
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
  }
  Vec sum(d, 0.0);
  for (const Vec& p : partial) add_into(sum, p);
  est.mean = std::move(sum);
  scale(est.mean, 1.0 / static_cast<double>(n));
  if (norm(est.mean) > 1.0 + kUnitNormTol)
    throw internal_error("mean_embedding: mean of unit vectors has norm > 1");
  return est;
}

/// Convenience overload matching the (model, x, stream, start, n) signature.
inline SmoothedEstimate mean_embedding(const EmbeddingModel& model, std::span<const double> x,
                                       const NoiseStream& stream, std::uint64_t start,
                                       std::uint64_t n, unsigned threads = 1) {
  return mean_embedding(ModelNoisySource(model, Vec(x.begin(), x.end()), stream), start, n,
                        threads);
}

// ---------------------------------------------------------------------------
// Paired squared-distance statistic
// ---------------------------------------------------------------------------

/// One unbiased observation of ||g(x) - c||^2: the inner product of two
/// independent estimate deviations. Always lies in [-1, 4] for unit-norm
/// embeddings and prototypes in the unit ball.
struct PairedSquareObservation {
  double value = 0.0;
  int class_id = 0;
  std::uint64_t a_first = 0, a_last = 0;  // index ranges of the two estimates
  std::uint64_t b_first = 0, b_last = 0;
};

inline constexpr double kPairedRangeLo = -1.0;
inline constexpr double kPairedRangeHi = 4.0;

inline PairedSquareObservation paired_square_estimate(const SmoothedEstimate& a,
                                                      const SmoothedEstimate& b,
                                                      std::span<const double> c,
                                                      int class_id = 0) {
  if (a.overlaps(b))
    throw dependence_error(
        "paired_square_estimate: estimates share noise indices [" +
        std::to_string(std::max(a.first_index, b.first_index)) + ", " +
        std::to_string(std::min(a.last_index, b.last_index)) + "]");
  require_dim(c, a.mean.size(), "paired_square_estimate prototype");
  require_dim(b.mean, a.mean.size(), "paired_square_estimate second estimate");

  double v = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) v += (a.mean[i] - c[i]) * (b.mean[i] - c[i]);

  if (v < kPairedRangeLo - 1e-9 || v > kPairedRangeHi + 1e-9)
    throw internal_error("paired square observation " + std::to_string(v) +
                         " escapes the attainable range [-1, 4]");
  return {v, class_id, a.first_index, a.last_index, b.first_index, b.last_index};
}

/// Sufficient statistics of per-sample paired observations over two disjoint
/// equal-length index ranges: sample i of the first range pairs with sample i
/// of the second. For any prototype c the mean paired observation expands as
///   mean_i <a_i - c, b_i - c> = sum_ab/m - <c, sum_a + sum_b>/m + ||c||^2,
/// so only (sum_ab, sum_a, sum_b, m) need to be kept per point, not per class.
struct PairedBatchStats {
  double sum_ab = 0.0;  // sum over pairs of <a_i, b_i>
  Vec sum_a;            // componentwise sums of the two ranges
  Vec sum_b;
  std::uint64_t pairs = 0;

  void init(std::size_t d) {
    sum_ab = 0.0;
    sum_a.assign(d, 0.0);
    sum_b.assign(d, 0.0);
    pairs = 0;
  }

  /// Mean paired observation for prototype c.
  double mean_for(std::span<const double> c) const {
    const double m = static_cast<double>(pairs);
    double cross = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) cross += c[i] * (sum_a[i] + sum_b[i]);
    return sum_ab / m - cross / m + squared_norm(c);
  }

  void merge(const PairedBatchStats& other) {
    sum_ab += other.sum_ab;
    add_into(sum_a, other.sum_a);
    add_into(sum_b, other.sum_b);
    pairs += other.pairs;
  }
};

/// Accumulate paired statistics for ranges [start, start+n) and
/// [start+n, start+2n), in ascending pair order.
template <class Source>
void accumulate_paired_batch(const Source& src, std::uint64_t start, std::uint64_t n,
                             PairedBatchStats& stats) {
  thread_local Vec ea, eb;
  for (std::uint64_t i = 0; i < n; ++i) {
    src.embedding_at(start + i, ea);
    src.embedding_at(start + n + i, eb);
    stats.sum_ab += dot(ea, eb);
    add_into(stats.sum_a, ea);
    add_into(stats.sum_b, eb);
  }
  stats.pairs += n;
}

}  // namespace protocert
