#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "protocert/harness.hpp"
#include "protocert/rng.hpp"
#include "protocert/train.hpp"

using namespace protocert;

namespace {

struct ToySetup {
  EmbeddingModel model;
  Episode episode;
  PrototypeSet protos;

  static ToySetup make() {
    ClusterSpec spec;
    spec.n_way = 2;
    spec.shots = 3;
    spec.queries_per_class = 8;
    spec.input_dim = 8;
    spec.center_spread = 4.0;
    spec.within_std = 0.5;

    TrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.steps = 800;
    cfg.seed = 5;
    cfg.aug = {1.0, 0.3};
    auto episodes = [&spec](std::size_t step) {
      ClusterSpec s = spec;
      s.seed = derive_seed(41, step);
      return generate_episode(s);
    };
    EmbeddingModel model = train_mlp(MlpSpec{{8, 32, 8}}, episodes, cfg);

    ClusterSpec eval = spec;
    eval.seed = 987;
    Episode ep = generate_episode(eval);
    PrototypeSet protos = episode_prototypes(model, ep);
    return {std::move(model), std::move(ep), std::move(protos)};
  }
};

SmoothingConfig toy_cfg() {
  SmoothingConfig cfg;
  cfg.sigma = 1.0;
  cfg.n0 = 200;
  cfg.max_samples = 40'000;
  cfg.alpha = 1e-3;
  cfg.seed = 71;
  return cfg;
}

}  // namespace

TEST_CASE("certified results are identical across worker counts") {
  const auto setup = ToySetup::make();
  const auto cfg = toy_cfg();
  const auto serial = certify_episode(setup.model, setup.episode, setup.protos, cfg, 1);
  const auto pooled = certify_episode(setup.model, setup.episode, setup.protos, cfg, 8);
  REQUIRE(results_csv(serial, false) == results_csv(pooled, false));
}

TEST_CASE("certified accuracy curve on a trained toy model") {
  const auto setup = ToySetup::make();
  const auto records = certify_episode(setup.model, setup.episode, setup.protos, toy_cfg(), 4);

  const std::vector<double> grid{0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  const auto curve = certified_accuracy_curve(records, grid);

  SECTION("CA(0) is the correct-and-certified fraction") {
    std::size_t expect = 0;
    for (const auto& rec : records)
      if (!rec.cert.abstained && *rec.cert.prediction == rec.true_label && rec.cert.radius > 0.0)
        ++expect;
    REQUIRE(curve.front().second ==
            static_cast<double>(expect) / static_cast<double>(records.size()));
    REQUIRE(curve.front().second >= 0.9);
  }
  SECTION("nonincreasing in epsilon, zero beyond every radius") {
    for (std::size_t i = 1; i < curve.size(); ++i)
      REQUIRE(curve[i].second <= curve[i - 1].second + 1e-15);
    double max_radius = 0.0;
    for (const auto& rec : records) max_radius = std::max(max_radius, rec.cert.radius);
    const std::vector<double> beyond{max_radius + 0.01};
    REQUIRE(certified_accuracy_curve(records, beyond).front().second == 0.0);
    // the smoothed map is 2/L-bounded, so 3 sigma is always past every radius
    REQUIRE(curve.back().second == 0.0);
  }
  SECTION("fractions live in [0,1]") {
    for (const auto& [eps, ca] : curve) {
      REQUIRE(ca >= 0.0);
      REQUIRE(ca <= 1.0);
    }
  }
  SECTION("an empty budget grid yields an empty report") {
    REQUIRE(certified_accuracy_curve(records, std::vector<double>{}).empty());
  }
}

TEST_CASE("abstain rate endpoints") {
  SECTION("zero-variance separation never abstains") {
    const auto model = constant_basis_model(4, 2);
    ClusterSpec spec;
    spec.n_way = 2;
    spec.shots = 1;
    spec.queries_per_class = 5;
    spec.input_dim = 4;
    spec.seed = 3;
    const Episode ep = generate_episode(spec);
    PrototypeSet protos;
    protos.class_ids = {0, 1};
    protos.prototypes = {Vec{1.0, 0.0}, Vec{0.0, 1.0}};
    protos.support_counts = {1, 1};
    SmoothingConfig cfg;
    cfg.n0 = 100;
    cfg.max_samples = 10'000;
    const auto records = certify_episode(model, ep, protos, cfg, 2);
    REQUIRE(abstain_rate(records) == 0.0);
  }
  SECTION("a forced tie always abstains") {
    const EmbeddingModel model(StepModel{4, 0, 2});
    Episode ep;
    ep.input_dim = 4;
    ep.n_way = 2;
    ep.shots = 1;
    ep.support = {{Vec{1.0, 0.0, 0.0, 0.0}, 0}, {Vec{-1.0, 0.0, 0.0, 0.0}, 1}};
    for (int i = 0; i < 6; ++i) ep.query.push_back({Vec{0.0, 0.0, 0.0, 0.0}, i % 2});
    PrototypeSet protos;
    protos.class_ids = {0, 1};
    protos.prototypes = {Vec{1.0, 0.0}, Vec{0.0, 1.0}};
    protos.support_counts = {1, 1};
    SmoothingConfig cfg;
    cfg.n0 = 100;
    cfg.max_samples = 5'000;
    const auto records = certify_episode(model, ep, protos, cfg, 2);
    REQUIRE(abstain_rate(records) == 1.0);
  }
}

TEST_CASE("sample size histogram conserves mass") {
  const auto setup = ToySetup::make();
  const auto records = certify_episode(setup.model, setup.episode, setup.protos, toy_cfg(), 4);

  const auto buckets = sample_size_histogram(records, 500);
  std::size_t total = 0;
  for (const auto& b : buckets) total += b.count;
  REQUIRE(total == records.size());

  SECTION("identical values land in a single bucket") {
    std::vector<PointRecord> same = records;
    for (auto& rec : same) rec.cert.samples_used = 400;
    const auto one = sample_size_histogram(same, 100);
    REQUIRE(one.size() == 1);
    REQUIRE(one.front().count == same.size());
    REQUIRE(one.front().lo == 400);
  }
  SECTION("bucket width must be positive") {
    REQUIRE_THROWS_AS(sample_size_histogram(records, 0), domain_error);
  }
}

TEST_CASE("results csv round-trips") {
  const auto setup = ToySetup::make();
  const auto records = certify_episode(setup.model, setup.episode, setup.protos, toy_cfg(), 2);
  const std::string csv = results_csv(records, false);
  REQUIRE(csv.rfind(kResultsCsvHeader, 0) == 0);

  const auto parsed = parse_results_csv(csv);
  REQUIRE(parsed.size() == records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    REQUIRE(parsed[i].point_id == records[i].point_id);
    REQUIRE(parsed[i].true_label == records[i].true_label);
    REQUIRE(parsed[i].cert.abstained == records[i].cert.abstained);
    REQUIRE(parsed[i].cert.radius == records[i].cert.radius);  // shortest form is lossless
    REQUIRE(parsed[i].cert.gamma_lower == records[i].cert.gamma_lower);
    REQUIRE(parsed[i].cert.samples_used == records[i].cert.samples_used);
  }
  REQUIRE_THROWS_AS(parse_results_csv("bogus\n"), parse_error);
  REQUIRE_THROWS_AS(
      parse_results_csv(std::string(kResultsCsvHeader) + "\nq0,0,zero,0,0,0,100,0\n"),
      parse_error);
}

TEST_CASE("comparison curves") {
  const auto setup = ToySetup::make();
  SmoothingConfig cfg = toy_cfg();
  cfg.n0 = 100;
  cfg.max_samples = 10'000;
  const auto records = certify_episode(setup.model, setup.episode, setup.protos, cfg, 4);

  const std::vector<double> grid{0.0, 0.5};
  const auto rows = compare_curves(setup.model, setup.episode, setup.protos, cfg, records,
                                   grid, 3, 50, 17);
  REQUIRE(rows.size() == 2);

  SECTION("zero-budget attacks reproduce clean accuracy per classifier") {
    std::size_t plain_clean = 0;
    for (const auto& q : setup.episode.query)
      if (classify(setup.model.embed(q.x), setup.protos) == q.label) ++plain_clean;
    REQUIRE(rows[0].plain_random ==
            static_cast<double>(plain_clean) / setup.episode.query.size());
    REQUIRE(rows[0].smoothed_fgsm == rows[0].smoothed_pgd);
  }
  SECTION("empirical robust accuracy dominates certified accuracy") {
    for (const auto& row : rows) {
      REQUIRE(row.smoothed_fgsm >= row.certified);
      REQUIRE(row.smoothed_pgd >= row.certified);
    }
  }
}

TEST_CASE("timing report work scales with the batch size") {
  const auto setup = ToySetup::make();
  SmoothingConfig cfg = toy_cfg();
  const std::vector<std::uint64_t> grid{200, 2000};
  const auto rows = timing_report(setup.model, setup.episode, setup.protos, cfg, grid);
  REQUIRE(rows.size() == 2);
  REQUIRE(rows[0].n == 200);
  for (const auto& r : rows) {
    REQUIRE(r.mean_seconds > 0.0);
    REQUIRE(r.std_seconds >= 0.0);
    REQUIRE(r.mean_samples > 0.0);
  }
  REQUIRE(rows[1].mean_samples > rows[0].mean_samples);
  REQUIRE(rows[1].mean_seconds > rows[0].mean_seconds);
}
