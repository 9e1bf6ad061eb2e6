#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "protocert/certify.hpp"
#include "protocert/hoeffding.hpp"
#include "protocert/rng.hpp"

using namespace protocert;

namespace {

PrototypeSet two_protos(Vec a, Vec b) {
  PrototypeSet p;
  p.class_ids = {0, 1};
  p.prototypes = {std::move(a), std::move(b)};
  p.support_counts = {1, 1};
  return p;
}

ModelNoisySource constant_source(const EmbeddingModel& model, std::uint64_t seed,
                                 std::size_t input_dim, double sigma = 1.0) {
  return ModelNoisySource(model, Vec(input_dim, 0.0), NoiseStream{seed, sigma, input_dim});
}

}  // namespace

TEST_CASE("hoeffding halfwidth formula") {
  // paper settings: n = 1000 observations, range 4, level alpha/3 at alpha = 0.001
  REQUIRE(hoeffding_halfwidth(1000, 4.0, 0.001 / 3.0) == Catch::Approx(0.26381).margin(1e-5));
  REQUIRE(hoeffding_halfwidth(123, 0.0, 0.5) == 0.0);
  // quadrupling the observation count halves the width exactly
  for (std::uint64_t n : {1ull, 10ull, 997ull})
    REQUIRE(hoeffding_halfwidth(4 * n, 5.0, 0.01) == hoeffding_halfwidth(n, 5.0, 0.01) / 2.0);
  REQUIRE_THROWS_AS(hoeffding_halfwidth(10, 1.0, 0.0), domain_error);
  REQUIRE_THROWS_AS(hoeffding_halfwidth(10, 1.0, 1.0), domain_error);
  REQUIRE_THROWS_AS(hoeffding_halfwidth(0, 1.0, 0.5), domain_error);
}

TEST_CASE("distance interval endpoints") {
  SECTION("zero-variance observations") {
    std::vector<PairedSquareObservation> obs;
    for (int i = 0; i < 40; ++i) obs.push_back({1.0, 7, 0, 0, 1, 1});
    const auto ci = distance_interval(obs, 0.01, RangeMode::sound);
    const double t = hoeffding_halfwidth(40, 5.0, 0.01 / 3.0);
    REQUIRE(ci.lower == Catch::Approx(std::sqrt(std::max(0.0, 1.0 - t))).margin(1e-12));
    REQUIRE(ci.upper == Catch::Approx(std::sqrt(1.0 + t)).margin(1e-12));
    REQUIRE(ci.lower <= ci.upper);
  }
  SECTION("negative lower endpoint clamps to zero") {
    std::vector<PairedSquareObservation> obs(3, PairedSquareObservation{-0.5, 0, 0, 0, 1, 1});
    const auto ci = distance_interval(obs, 0.05, RangeMode::paper);
    REQUIRE(ci.lower == 0.0);
    REQUIRE(ci.upper >= 0.0);
  }
  SECTION("interval collapses onto the true distance") {
    // zero-variance unit observations; width shrinks like 1/sqrt(m)
    std::vector<PairedSquareObservation> obs(100'000,
                                             PairedSquareObservation{1.0, 0, 0, 0, 1, 1});
    const auto ci = distance_interval(obs, 0.001, RangeMode::sound);
    REQUIRE(ci.upper - ci.lower < 0.06);
    REQUIRE(ci.lower <= 1.0);
    REQUIRE(ci.upper >= 1.0);
  }
  SECTION("mixing classes or passing nothing is an error") {
    std::vector<PairedSquareObservation> obs = {{1.0, 0, 0, 0, 1, 1}, {1.0, 1, 2, 2, 3, 3}};
    REQUIRE_THROWS_AS(distance_interval(obs, 0.05, RangeMode::sound), validation_error);
    REQUIRE_THROWS_AS(
        distance_interval(std::vector<PairedSquareObservation>{}, 0.05, RangeMode::sound),
        validation_error);
  }
}

TEST_CASE("closest prototype separates deterministic embeddings in one pass") {
  const auto model = constant_basis_model(3, 2);
  const auto protos = two_protos(Vec{1.0, 0.0}, Vec{0.0, 1.0});
  SmoothingConfig cfg;
  cfg.n0 = 1000;
  cfg.alpha = 0.001;

  const auto out = closest_prototype(constant_source(model, 1, 3), protos, cfg);
  REQUIRE(out.winner);
  REQUIRE(*out.winner == 0);
  REQUIRE(out.iterations == 1);
  REQUIRE(out.samples_used == 2 * cfg.n0);
  REQUIRE(out.pooled_count == 2 * cfg.n0);
  // all consumed embeddings are e1, so the pool mean is exactly e1
  REQUIRE(out.pooled_sum[0] == Catch::Approx(2000.0).margin(1e-9));
  REQUIRE(out.pooled_sum[1] == 0.0);
}

TEST_CASE("forced tie abstains at the sample budget") {
  // step model at the threshold: g(x) = (0.5, 0.5), equidistant prototypes
  const EmbeddingModel model(StepModel{2, 0, 2});
  const auto protos = two_protos(Vec{1.0, 0.0}, Vec{0.0, 1.0});
  SmoothingConfig cfg;
  cfg.n0 = 100;
  cfg.max_samples = 20'000;
  cfg.alpha = 0.001;

  const auto out = closest_prototype(constant_source(model, 3, 2), protos, cfg);
  REQUIRE_FALSE(out.winner);
  REQUIRE(out.samples_used <= cfg.max_samples);
  // abstention happened only because one more iteration would exceed T
  const std::uint64_t next_batch = (out.iterations + 1) * cfg.n0;
  REQUIRE(out.samples_used + 2 * next_batch > cfg.max_samples);
}

TEST_CASE("closest prototype agrees with the oracle on a biased step model") {
  const double sigma = 0.7;
  const EmbeddingModel model(StepModel{2, 0, 2});
  const auto protos = two_protos(Vec{1.0, 0.0}, Vec{0.0, 1.0});
  SmoothingConfig cfg;
  cfg.sigma = sigma;
  cfg.n0 = 200;
  cfg.alpha = 1e-3;

  const Vec x{2.0 * sigma, 0.0};
  const Vec g = model.smoothed_oracle(x, sigma);
  REQUIRE(distance(g, protos.prototypes[0]) < distance(g, protos.prototypes[1]));

  NoiseStream stream{11, sigma, 2};
  const auto out = closest_prototype(ModelNoisySource(model, x, stream), protos, cfg);
  REQUIRE(out.winner);
  REQUIRE(*out.winner == 0);
}

TEST_CASE("a single candidate class returns immediately with zero samples") {
  const auto model = constant_basis_model(3, 2);
  const auto protos = two_protos(Vec{1.0, 0.0}, Vec{0.0, 1.0});
  SmoothingConfig cfg;
  const auto out = closest_prototype(constant_source(model, 1, 3), protos, cfg, 0);
  REQUIRE(out.winner);
  REQUIRE(*out.winner == 1);
  REQUIRE(out.samples_used == 0);
  REQUIRE(out.iterations == 0);
}

TEST_CASE("risk lower bound on the zero-variance constant model") {
  const auto model = constant_basis_model(3, 2);
  const auto protos = two_protos(Vec{1.0, 0.0}, Vec{0.0, 1.0});
  SmoothingConfig cfg;
  cfg.n0 = 1000;
  cfg.alpha = 0.001;

  const auto rb = embedding_risk_lower_bound(constant_source(model, 7, 3), protos, cfg);
  REQUIRE_FALSE(rb.abstained);
  REQUIRE(*rb.predicted == 0);
  REQUIRE(*rb.runner_up == 1);
  // every gamma observation equals 1/sqrt(2); the bound subtracts the
  // halfwidth at the pooled count (2000 samples; the B run is immediate)
  REQUIRE(rb.pooled_count == 2000);
  const double expected =
      1.0 / std::sqrt(2.0) - hoeffding_halfwidth(2000, 2.0, cfg.alpha);
  REQUIRE(rb.gamma_lower == Catch::Approx(expected).margin(1e-9));
  REQUIRE(rb.gamma_lower == Catch::Approx(0.70711 - 0.08718).margin(1e-3));
}

TEST_CASE("risk bound abstains when the search ties") {
  const EmbeddingModel model(StepModel{2, 0, 2});
  const auto protos = two_protos(Vec{1.0, 0.0}, Vec{0.0, 1.0});
  SmoothingConfig cfg;
  cfg.n0 = 100;
  cfg.max_samples = 10'000;
  const auto rb = embedding_risk_lower_bound(constant_source(model, 5, 2), protos, cfg);
  REQUIRE(rb.abstained);
  REQUIRE_FALSE(rb.predicted);
}

TEST_CASE("certify composes the bound with the radius") {
  const auto model = constant_basis_model(3, 2);
  const auto protos = two_protos(Vec{1.0, 0.0}, Vec{0.0, 1.0});
  SmoothingConfig cfg;
  cfg.sigma = 1.0;
  cfg.n0 = 1000;
  cfg.alpha = 0.001;

  SECTION("positive bound yields gamma over L") {
    const auto res = certify(constant_source(model, 7, 3), protos, cfg);
    REQUIRE_FALSE(res.abstained);
    REQUIRE(*res.prediction == 0);
    REQUIRE(res.radius ==
            Catch::Approx(std::max(0.0, res.gamma_lower) / lipschitz_constant(1.0))
                .margin(1e-12));
    REQUIRE(res.samples_used == 2000);
    REQUIRE(res.wall_seconds >= 0.0);

    // the (model, x, protos, cfg) convenience entry point behaves the same
    SmoothingConfig same = cfg;
    same.seed = 7;
    const auto direct = certify(model, Vec(3, 0.0), protos, same);
    REQUIRE(direct.gamma_lower == res.gamma_lower);
    REQUIRE(direct.radius == res.radius);
  }
  SECTION("a decided run always certifies a positive bound") {
    // Separation forces the pooled gamma mean above t/sep, which in turn
    // exceeds the gamma halfwidth for every alpha and sep <= 2, so a
    // non-abstained result implies gamma_lower > 0. The negative-gamma clamp
    // itself is covered by the certified_radius tests.
    for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
      const auto res = certify(constant_source(model, seed, 3), protos, cfg);
      REQUIRE_FALSE(res.abstained);
      REQUIRE(res.gamma_lower > 0.0);
    }
  }
  SECTION("abstention reports zero radius") {
    const EmbeddingModel tie_model(StepModel{3, 0, 2});
    SmoothingConfig small = cfg;
    small.n0 = 100;
    small.max_samples = 5'000;
    const auto res = certify(constant_source(tie_model, 2, 3), protos, small);
    REQUIRE(res.abstained);
    REQUIRE(res.radius == 0.0);
    REQUIRE_FALSE(res.prediction);
  }
  SECTION("fewer than two classes is a domain error") {
    PrototypeSet one;
    one.class_ids = {0};
    one.prototypes = {Vec{1.0, 0.0}};
    one.support_counts = {1};
    REQUIRE_THROWS_AS(certify(constant_source(model, 7, 3), one, cfg), domain_error);
  }
}

TEST_CASE("closest prototype is sound across seeded trials") {
  // five circle-model prototypes around the ring, queried at a point whose
  // smoothed embedding is known exactly
  const EmbeddingModel model(CircleModel{{1.0, 0.0}});
  const double sigma = 0.5;
  const Vec x{0.3, 0.0};
  const Vec g = model.smoothed_oracle(x, sigma);

  PrototypeSet protos;
  for (int k = 0; k < 5; ++k) {
    const double angle = 0.3 + 1.1 * static_cast<double>(k);
    protos.class_ids.push_back(k);
    protos.prototypes.push_back(Vec{0.8 * std::cos(angle), 0.8 * std::sin(angle)});
    protos.support_counts.push_back(1);
  }
  int oracle_best = 0;
  double best_d = 1e300;
  for (int k = 0; k < 5; ++k) {
    const double d = distance(g, protos.prototypes[k]);
    if (d < best_d) {
      best_d = d;
      oracle_best = k;
    }
  }

  SmoothingConfig cfg;
  cfg.sigma = sigma;
  cfg.n0 = 100;
  cfg.alpha = 1e-3;
  cfg.max_samples = 200'000;

  int correct = 0, abstain = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    NoiseStream stream{derive_seed(100, trial), sigma, 2};
    const auto out = closest_prototype(ModelNoisySource(model, x, stream), protos, cfg);
    if (!out.winner)
      ++abstain;
    else if (*out.winner == oracle_best)
      ++correct;
  }
  REQUIRE(correct + abstain == 100);  // never the wrong class
  REQUIRE(correct >= 99);
}

TEST_CASE("risk bound covers the oracle gamma") {
  const EmbeddingModel model(CircleModel{{1.0, 0.0}});
  const double sigma = 0.5;
  const Vec x{0.3, 0.0};
  const Vec g = model.smoothed_oracle(x, sigma);

  const auto protos = two_protos(Vec{0.8 * std::cos(0.25), 0.8 * std::sin(0.25)},
                                 Vec{0.8 * std::cos(1.8), 0.8 * std::sin(1.8)});
  const double gamma_true = embedding_risk(g, protos.prototypes[0], protos.prototypes[1]);
  REQUIRE(gamma_true > 0.0);

  SmoothingConfig cfg;
  cfg.sigma = sigma;
  cfg.n0 = 200;
  cfg.alpha = 1e-3;

  int covered = 0, decided = 0;
  for (std::uint64_t trial = 0; trial < 100; ++trial) {
    NoiseStream stream{derive_seed(777, trial), sigma, 2};
    const auto rb =
        embedding_risk_lower_bound(ModelNoisySource(model, x, stream), protos, cfg);
    if (rb.abstained) continue;
    ++decided;
    if (rb.gamma_lower <= gamma_true) ++covered;
  }
  REQUIRE(decided > 0);
  REQUIRE(covered == decided);  // Hoeffding is conservative; expect zero misses here
}

TEST_CASE("gamma observations are affine in the embedding") {
  // per-sample gammas averaged directly must equal the risk of the pooled
  // mean, and every observation must lie in an interval of width 2
  const EmbeddingModel model(CircleModel{{0.7, -0.2}});
  const double sigma = 0.8;
  const Vec x{0.4, 0.1};
  const Vec c_a{0.8, 0.1}, c_b{-0.5, 0.6};

  NoiseStream stream{321, sigma, 2};
  ModelNoisySource src(model, x, stream);
  const std::uint64_t n = 500;
  Vec pooled(2, 0.0), e;
  double direct_mean = 0.0, lo = 1e300, hi = -1e300;
  for (std::uint64_t i = 0; i < n; ++i) {
    src.embedding_at(i, e);
    add_into(pooled, e);
    const double gi = embedding_risk(e, c_a, c_b);
    direct_mean += gi;
    lo = std::min(lo, gi);
    hi = std::max(hi, gi);
  }
  direct_mean /= static_cast<double>(n);
  scale(pooled, 1.0 / static_cast<double>(n));
  REQUIRE(std::abs(direct_mean - embedding_risk(pooled, c_a, c_b)) < 1e-12);
  REQUIRE(hi - lo <= 2.0 + 1e-12);

  // expanded affine form agrees with the two-distance form per sample
  for (std::uint64_t i = 0; i < 50; ++i) {
    src.embedding_at(i, e);
    const double sep = distance(c_a, c_b);
    const double affine =
        (squared_norm(c_b) - squared_norm(c_a) - 2.0 * (e[0] * (c_b[0] - c_a[0]) +
                                                        e[1] * (c_b[1] - c_a[1]))) /
        (2.0 * sep);
    REQUIRE(std::abs(affine - embedding_risk(e, c_a, c_b)) < 1e-12);
  }
}

TEST_CASE("paper range mode narrows the interval") {
  std::vector<PairedSquareObservation> obs(100, PairedSquareObservation{1.5, 0, 0, 0, 1, 1});
  const auto sound = distance_interval(obs, 0.01, RangeMode::sound);
  const auto paper = distance_interval(obs, 0.01, RangeMode::paper);
  REQUIRE(paper.upper - paper.lower < sound.upper - sound.lower);
  // widths are 4/5 of each other in squared space
  const double t5 = hoeffding_halfwidth(100, 5.0, 0.01 / 3.0);
  const double t4 = hoeffding_halfwidth(100, 4.0, 0.01 / 3.0);
  REQUIRE(t4 == Catch::Approx(0.8 * t5).epsilon(1e-12));
}

TEST_CASE("failure probability formulas") {
  const auto [q1, q2] = failure_probabilities(5, 1e-3);
  REQUIRE(q1 == Catch::Approx(0.005).margin(1e-15));
  REQUIRE(q2 == Catch::Approx(0.005995).margin(1e-15));

  const auto tiny = failure_probabilities(3, 1e-9);
  REQUIRE(tiny.first == Catch::Approx(0.0).margin(1e-8));
  REQUIRE(tiny.second == Catch::Approx(0.0).margin(1e-8));

  // q2 - q1 = alpha (1 - K alpha): positive iff K alpha < 1
  const auto [a1, a2] = failure_probabilities(10, 0.05);
  REQUIRE(a2 - a1 == Catch::Approx(0.05 * (1.0 - 0.5)).margin(1e-12));

  REQUIRE_THROWS_AS(failure_probabilities(0, 0.1), domain_error);
  REQUIRE_THROWS_AS(failure_probabilities(5, 1.0), domain_error);
}

TEST_CASE("config validation") {
  SmoothingConfig cfg;
  cfg.sigma = -1.0;
  REQUIRE_THROWS_AS(cfg.validate(), domain_error);
  cfg = SmoothingConfig{};
  cfg.n0 = 1;
  REQUIRE_THROWS_AS(cfg.validate(), domain_error);
  cfg = SmoothingConfig{};
  cfg.max_samples = cfg.n0;
  REQUIRE_THROWS_AS(cfg.validate(), domain_error);
}
