// protocert -- CLI for certifying nearest-prototype classifiers by
// randomized smoothing of unit-norm embedding functions.
//
// Subcommands: gen-episode, train, certify, curve, attack, timing, hist,
// report. Every output file is byte-deterministic for a fixed seed and
// worker count; wall-clock fields are written as zeros unless
// --measure-time is passed.
//
// Exit codes: 0 success, 1 usage error, 2 data validation error,
// 3 internal invariant violation.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "protocert/protocert.hpp"

namespace {

using namespace protocert;

struct SharedOpts {
  double sigma = 1.0;
  double alpha = 0.001;
  std::uint64_t n0 = 1000;
  std::uint64_t max_samples = 500000;
  std::uint64_t seed = 0;
  std::string range_mode = "sound";
  unsigned workers = 1;
  std::string out;

  void attach(CLI::App* cmd, bool need_out = true) {
    cmd->add_option("--sigma", sigma, "Smoothing noise std deviation")
        ->capture_default_str();
    cmd->add_option("--alpha", alpha, "Confidence level per interval")
        ->capture_default_str();
    cmd->add_option("--n0", n0, "Per-estimate batch size of the first iteration")
        ->capture_default_str();
    cmd->add_option("--max-samples", max_samples, "Total draw budget per CLOSEST call")
        ->capture_default_str();
    cmd->add_option("--seed", seed, "Base RNG seed")->capture_default_str();
    cmd->add_option("--range-mode", range_mode,
                    "Hoeffding range for paired observations: sound (width 5) or paper "
                    "(width 4)")
        ->check(CLI::IsMember({"sound", "paper"}))
        ->capture_default_str();
    cmd->add_option("--workers", workers, "Certification worker threads")
        ->capture_default_str();
    auto* out_opt = cmd->add_option("--out", out, "Output file path");
    if (need_out) out_opt->required();
  }

  SmoothingConfig config() const {
    SmoothingConfig cfg;
    cfg.sigma = sigma;
    cfg.alpha = alpha;
    cfg.n0 = n0;
    cfg.max_samples = max_samples;
    cfg.seed = seed;
    cfg.range_mode = range_mode == "paper" ? RangeMode::paper : RangeMode::sound;
    cfg.validate();
    return cfg;
  }
};

std::vector<double> parse_grid(const std::string& csv) {
  std::vector<double> grid;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    grid.push_back(std::stod(item));
  }
  if (grid.empty()) throw CLI::ValidationError("--eps-grid", "empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 0.0) throw CLI::ValidationError("--eps-grid", "budgets must be >= 0");
    if (i > 0 && grid[i] < grid[i - 1])
      throw CLI::ValidationError("--eps-grid", "budgets must be sorted ascending");
  }
  return grid;
}

std::vector<std::uint64_t> parse_counts(const std::string& csv, const char* flag) {
  std::vector<std::uint64_t> values;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const long long v = std::stoll(item);
    if (v <= 0) throw CLI::ValidationError(flag, "counts must be positive");
    values.push_back(static_cast<std::uint64_t>(v));
  }
  if (values.empty()) throw CLI::ValidationError(flag, "empty list");
  return values;
}

std::vector<PointRecord> certify_or_load(const std::string& from_results,
                                         const std::string& model_path,
                                         const std::string& episode_path,
                                         const SharedOpts& shared,
                                         const std::string& results_out) {
  if (!from_results.empty()) return parse_results_csv(read_file(from_results));
  if (model_path.empty() || episode_path.empty())
    throw CLI::RequiredError("--model/--episode (or --from-results)");
  const EmbeddingModel model = load_model(model_path);
  const Episode ep = load_episode(episode_path);
  const PrototypeSet protos = episode_prototypes(model, ep);
  auto records = certify_episode(model, ep, protos, shared.config(), shared.workers);
  if (!results_out.empty()) write_file(results_out, results_csv(records, false));
  return records;
}

// ---------------------------------------------------------------------------

int cmd_gen_episode(const ClusterSpec& spec, const std::string& out) {
  save_episode(generate_episode(spec), out);
  return 0;
}

struct TrainOpts {
  ClusterSpec clusters;
  std::vector<std::size_t> hidden{64};
  std::size_t embed_dim = 16;
  TrainConfig train;
  std::string out;
};

int cmd_train(const TrainOpts& opts) {
  MlpSpec spec;
  spec.layer_dims.push_back(opts.clusters.input_dim);
  for (std::size_t h : opts.hidden) spec.layer_dims.push_back(h);
  spec.layer_dims.push_back(opts.embed_dim);

  const ClusterSpec base = opts.clusters;
  const std::uint64_t stream_seed = opts.train.seed;
  auto episodes = [&base, stream_seed](std::size_t step) {
    ClusterSpec s = base;
    s.seed = derive_seed(stream_seed, step);
    return generate_episode(s);
  };
  const EmbeddingModel model = train_mlp(spec, episodes, opts.train);
  save_model(model, opts.out);

  ClusterSpec held_out = base;
  held_out.seed = derive_seed(stream_seed, 0x6576616cull);  // disjoint from training stream
  std::cerr << "trained " << spec.layer_dims.size() - 1 << "-layer mlp; held-out episode "
            << "query accuracy " << episode_query_accuracy(model, generate_episode(held_out))
            << "\n";
  return 0;
}

struct CertifyOpts {
  std::string model_path, episode_path, table_path, protos_path;
  std::string export_table, export_protos;
  std::uint64_t export_samples = 0;
  bool measure_time = false;
  SharedOpts shared;
};

int cmd_certify(const CertifyOpts& opts) {
  const Episode ep = load_episode(opts.episode_path);
  const SmoothingConfig cfg = opts.shared.config();

  std::vector<PointRecord> records;
  if (!opts.table_path.empty()) {
    if (opts.protos_path.empty())
      throw CLI::RequiredError("--protos (required with --table)");
    const EmbeddingModel table_model = load_embedding_table(opts.table_path);
    const PrototypeSet protos = load_prototypes(opts.protos_path);
    records = certify_table(table_model.table(), ep, protos, cfg, opts.shared.workers);
  } else {
    if (opts.model_path.empty())
      throw CLI::RequiredError("--model (or --table with --protos)");
    const EmbeddingModel model = load_model(opts.model_path);
    const PrototypeSet protos = episode_prototypes(model, ep);
    if (!opts.export_protos.empty()) save_prototypes(protos, opts.export_protos);
    if (!opts.export_table.empty()) {
      const std::uint64_t samples =
          opts.export_samples > 0 ? opts.export_samples : cfg.max_samples;
      save_embedding_table(export_noisy_embeddings(model, ep, cfg, samples),
                           opts.export_table);
    }
    records = certify_episode(model, ep, protos, cfg, opts.shared.workers);
  }

  write_file(opts.shared.out, results_csv(records, opts.measure_time));
  std::cerr << "certified " << records.size() << " points; abstain rate "
            << abstain_rate(records) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "protocert: l2-robustness certification of nearest-prototype classifiers "
      "via randomized smoothing of unit-norm embeddings"};
  app.require_subcommand(1);

  // gen-episode
  ClusterSpec gen_spec;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-episode", "Generate a synthetic Gaussian-cluster episode");
  gen->add_option("--n-way", gen_spec.n_way, "Number of classes")->capture_default_str();
  gen->add_option("--shots", gen_spec.shots, "Support points per class")->capture_default_str();
  gen->add_option("--queries", gen_spec.queries_per_class, "Query points per class")
      ->capture_default_str();
  gen->add_option("--input-dim", gen_spec.input_dim, "Input dimension")->capture_default_str();
  gen->add_option("--center-spread", gen_spec.center_spread, "Std of class centers")
      ->capture_default_str();
  gen->add_option("--within-std", gen_spec.within_std, "Std around each center")
      ->capture_default_str();
  gen->add_option("--seed", gen_spec.seed, "Episode seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Episode file path")->required();

  // train
  TrainOpts train_opts;
  double aug_sigma = 1.0, aug_prob = 0.3;
  auto* train = app.add_subcommand("train", "Train an mlp embedding on synthetic episodes");
  train->add_option("--n-way", train_opts.clusters.n_way)->capture_default_str();
  train->add_option("--shots", train_opts.clusters.shots)->capture_default_str();
  train->add_option("--queries", train_opts.clusters.queries_per_class)->capture_default_str();
  train->add_option("--input-dim", train_opts.clusters.input_dim)->capture_default_str();
  train->add_option("--center-spread", train_opts.clusters.center_spread)
      ->capture_default_str();
  train->add_option("--within-std", train_opts.clusters.within_std)->capture_default_str();
  train->add_option("--hidden", train_opts.hidden, "Hidden layer widths")
      ->delimiter(',')
      ->capture_default_str();
  train->add_option("--embed-dim", train_opts.embed_dim, "Embedding dimension")
      ->capture_default_str();
  train->add_option("--lr", train_opts.train.lr, "Adam learning rate")->capture_default_str();
  train->add_option("--steps", train_opts.train.steps, "Training steps (one episode each)")
      ->capture_default_str();
  train->add_option("--aug-sigma", aug_sigma, "Gaussian augmentation std")
      ->capture_default_str();
  train->add_option("--aug-prob", aug_prob, "Augmentation probability per sample")
      ->capture_default_str();
  train->add_option("--seed", train_opts.train.seed, "Training seed")->capture_default_str();
  train->add_option("--out", train_opts.out, "Model file path")->required();

  // certify
  CertifyOpts cert_opts;
  auto* certify_cmd = app.add_subcommand("certify", "Certify an episode's query points");
  certify_cmd->add_option("--model", cert_opts.model_path, "Model file");
  certify_cmd->add_option("--episode", cert_opts.episode_path, "Episode file")->required();
  certify_cmd->add_option("--table", cert_opts.table_path,
                          "Precomputed noisy-embedding table (file-backed run)");
  certify_cmd->add_option("--protos", cert_opts.protos_path,
                          "Prototype file (required with --table)");
  certify_cmd->add_option("--export-table", cert_opts.export_table,
                          "Write the noisy embeddings this run would consume");
  certify_cmd->add_option("--export-samples", cert_opts.export_samples,
                          "Rows per point for --export-table (default: max-samples)");
  certify_cmd->add_option("--export-protos", cert_opts.export_protos,
                          "Write the support prototypes");
  certify_cmd->add_flag("--measure-time", cert_opts.measure_time,
                        "Fill wall_ms with real measurements (breaks reproducibility)");
  cert_opts.shared.attach(certify_cmd);

  // curve
  SharedOpts curve_shared;
  std::string curve_model, curve_episode, curve_grid_csv, curve_from, curve_results_out;
  auto* curve_cmd =
      app.add_subcommand("curve", "Certified accuracy over an l2 budget grid");
  curve_cmd->add_option("--model", curve_model, "Model file");
  curve_cmd->add_option("--episode", curve_episode, "Episode file");
  curve_cmd->add_option("--eps-grid", curve_grid_csv, "Comma-separated budgets")->required();
  curve_cmd->add_option("--from-results", curve_from, "Reuse a cached results csv");
  curve_cmd->add_option("--results-out", curve_results_out, "Cache per-point results here");
  curve_shared.attach(curve_cmd);

  // attack
  SharedOpts attack_shared;
  std::string attack_model, attack_episode, attack_kind = "pgd", attack_grid_csv;
  std::string attack_classifier = "smoothed";
  std::size_t attack_steps = 20;
  std::uint64_t attack_n_grad = 1000, attack_seed = 0;
  auto* attack_cmd =
      app.add_subcommand("attack", "Empirical robust accuracy under an attack");
  attack_cmd->add_option("--model", attack_model, "Model file")->required();
  attack_cmd->add_option("--episode", attack_episode, "Episode file")->required();
  attack_cmd->add_option("--attack", attack_kind, "random | fgsm | pgd")
      ->check(CLI::IsMember({"random", "fgsm", "pgd"}))
      ->capture_default_str();
  attack_cmd->add_option("--eps-grid", attack_grid_csv, "Comma-separated budgets")->required();
  attack_cmd->add_option("--steps", attack_steps, "PGD iterations")->capture_default_str();
  attack_cmd->add_option("--n-grad", attack_n_grad, "Samples per gradient estimate")
      ->capture_default_str();
  attack_cmd->add_option("--classifier", attack_classifier, "plain | smoothed")
      ->check(CLI::IsMember({"plain", "smoothed"}))
      ->capture_default_str();
  attack_cmd->add_option("--attack-seed", attack_seed, "Attack RNG seed")
      ->capture_default_str();
  attack_shared.attach(attack_cmd);

  // timing
  SharedOpts timing_shared;
  std::string timing_model, timing_episode, timing_n_csv = "1000,10000";
  bool timing_measure = false;
  auto* timing_cmd =
      app.add_subcommand("timing", "Per-point certification time at several batch sizes");
  timing_cmd->add_option("--model", timing_model, "Model file")->required();
  timing_cmd->add_option("--episode", timing_episode, "Episode file")->required();
  timing_cmd->add_option("--n-values", timing_n_csv, "Comma-separated batch sizes")
      ->capture_default_str();
  timing_cmd->add_flag("--measure-time", timing_measure,
                       "Fill time columns with real measurements (breaks reproducibility)");
  timing_shared.attach(timing_cmd);

  // hist
  SharedOpts hist_shared;
  std::string hist_model, hist_episode, hist_from;
  std::uint64_t hist_width = 2000;
  auto* hist_cmd = app.add_subcommand("hist", "Histogram of samples consumed per point");
  hist_cmd->add_option("--model", hist_model, "Model file");
  hist_cmd->add_option("--episode", hist_episode, "Episode file");
  hist_cmd->add_option("--bucket-width", hist_width, "Bucket width in samples")
      ->capture_default_str();
  hist_cmd->add_option("--from-results", hist_from, "Reuse a cached results csv");
  hist_shared.attach(hist_cmd);

  // report
  SharedOpts report_shared;
  std::string report_model, report_episode, report_grid_csv, report_from;
  std::size_t report_steps = 20;
  std::uint64_t report_n_grad = 1000, report_attack_seed = 0;
  auto* report_cmd = app.add_subcommand(
      "report", "Certified accuracy vs empirical robust accuracy, per budget");
  report_cmd->add_option("--model", report_model, "Model file")->required();
  report_cmd->add_option("--episode", report_episode, "Episode file")->required();
  report_cmd->add_option("--eps-grid", report_grid_csv, "Comma-separated budgets")->required();
  report_cmd->add_option("--steps", report_steps, "PGD iterations")->capture_default_str();
  report_cmd->add_option("--n-grad", report_n_grad, "Samples per gradient estimate")
      ->capture_default_str();
  report_cmd->add_option("--attack-seed", report_attack_seed, "Attack RNG seed")
      ->capture_default_str();
  report_cmd->add_option("--from-results", report_from, "Reuse a cached results csv");
  report_shared.attach(report_cmd);

  try {
    app.parse(argc, argv);

    if (gen->parsed()) return cmd_gen_episode(gen_spec, gen_out);

    if (train->parsed()) {
      train_opts.train.aug = {aug_sigma, aug_prob};
      return cmd_train(train_opts);
    }

    if (certify_cmd->parsed()) return cmd_certify(cert_opts);

    if (curve_cmd->parsed()) {
      const auto grid = parse_grid(curve_grid_csv);
      const auto records = certify_or_load(curve_from, curve_model, curve_episode,
                                           curve_shared, curve_results_out);
      write_file(curve_shared.out, curve_csv(certified_accuracy_curve(records, grid)));
      return 0;
    }

    if (attack_cmd->parsed()) {
      const auto grid = parse_grid(attack_grid_csv);
      const EmbeddingModel model = load_model(attack_model);
      const Episode ep = load_episode(attack_episode);
      const PrototypeSet protos = episode_prototypes(model, ep);
      const SmoothingConfig cfg = attack_shared.config();
      const ClassifierKind classifier =
          attack_classifier == "plain" ? ClassifierKind::plain : ClassifierKind::smoothed;
      std::vector<std::pair<double, double>> rows;
      for (std::size_t e = 0; e < grid.size(); ++e) {
        AttackConfig acfg;
        acfg.kind = attack_kind_from_string(attack_kind);
        acfg.epsilon = grid[e];
        acfg.steps = attack_steps;
        acfg.n_grad = attack_n_grad;
        acfg.seed = derive_seed(attack_seed, e);
        rows.emplace_back(grid[e], empirical_robust_accuracy(model, ep.query, protos, acfg,
                                                             classifier, cfg));
      }
      write_file(attack_shared.out, attack_accuracy_csv(rows));
      return 0;
    }

    if (timing_cmd->parsed()) {
      const EmbeddingModel model = load_model(timing_model);
      const Episode ep = load_episode(timing_episode);
      const PrototypeSet protos = episode_prototypes(model, ep);
      const auto rows = timing_report(model, ep, protos, timing_shared.config(),
                                      parse_counts(timing_n_csv, "--n-values"));
      write_file(timing_shared.out, timing_csv(rows, timing_measure));
      return 0;
    }

    if (hist_cmd->parsed()) {
      const auto records =
          certify_or_load(hist_from, hist_model, hist_episode, hist_shared, "");
      write_file(hist_shared.out, histogram_csv(sample_size_histogram(records, hist_width)));
      return 0;
    }

    if (report_cmd->parsed()) {
      const auto grid = parse_grid(report_grid_csv);
      const EmbeddingModel model = load_model(report_model);
      const Episode ep = load_episode(report_episode);
      const PrototypeSet protos = episode_prototypes(model, ep);
      const SmoothingConfig cfg = report_shared.config();
      std::vector<PointRecord> records;
      if (!report_from.empty())
        records = parse_results_csv(read_file(report_from));
      else
        records = certify_episode(model, ep, protos, cfg, report_shared.workers);
      const auto rows = compare_curves(model, ep, protos, cfg, records, grid, report_steps,
                                       report_n_grad, report_attack_seed);
      write_file(report_shared.out, compare_csv(rows));
      return 0;
    }

    return 0;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const protocert::domain_error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const protocert::internal_error& e) {
    std::cerr << "internal invariant violation: " << e.what() << "\n";
    return 3;
  } catch (const protocert::error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  }
}
