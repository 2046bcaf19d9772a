// detkit command-line harness: run assigners over synthetic or ingested
// scenes, compute per-size-bucket sample statistics, simulate memory
// dynamics, and run the feature-enhancement pipeline on saved matrices.

#include <cstdint>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "detkit/assign.hpp"
#include "detkit/config.hpp"
#include "detkit/enhance.hpp"
#include "detkit/ingest.hpp"
#include "detkit/io.hpp"
#include "detkit/memory.hpp"
#include "detkit/stats.hpp"
#include "detkit/synth.hpp"

namespace {

struct CommonOpts {
  std::string config_path;
  std::string out_path;
  std::string format = "json";
  std::int64_t seed = -1;  // -1 means "use the config file value"
  int threads = 0;
};

detkit::HarnessConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return {};
  return detkit::load_harness_config(path);
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string::npos ? s.size() : comma;
    if (end > start) out.push_back(s.substr(start, end - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void require_known_assigner(const std::string& name) {
  const auto& names = detkit::assigner_names();
  if (std::find(names.begin(), names.end(), name) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw CLI::ValidationError("--assigner",
                               "unknown assigner '" + name + "' (valid: " + valid + ")");
  }
}

int run_assign(const CommonOpts& opts, const std::string& assigner,
               const std::string& gt_path, const std::string& pred_path, int n_scenes) {
  require_known_assigner(assigner);
  detkit::HarnessConfig cfg = load_config_or_default(opts.config_path);
  if (opts.seed >= 0) cfg.synth.seed = static_cast<std::uint64_t>(opts.seed);

  std::vector<detkit::Scene> scenes;
  if (!gt_path.empty() || !pred_path.empty()) {
    if (gt_path.empty() || pred_path.empty())
      throw CLI::ValidationError("--gt/--preds", "both files are required together");
    const auto gt = detkit::load_ground_truth(gt_path);
    const auto preds = detkit::load_predictions(pred_path, gt.num_categories(),
                                                cfg.assign.scores_are_probabilities);
    scenes = detkit::build_scenes(gt, preds);
  } else {
    scenes.reserve(static_cast<std::size_t>(n_scenes));
    for (int i = 0; i < n_scenes; ++i)
      scenes.push_back(detkit::generate_scene(cfg.synth, i));
  }

  std::vector<detkit::Assignment> assignments(scenes.size());
  const unsigned n_workers = std::max(
      1u, std::min<unsigned>(opts.threads > 0 ? static_cast<unsigned>(opts.threads)
                                              : std::thread::hardware_concurrency(),
                             static_cast<unsigned>(scenes.size())));
  auto worker = [&](unsigned w) {
    for (std::size_t s = w; s < scenes.size(); s += n_workers)
      assignments[s] =
          detkit::run_assigner(assigner, scenes[s], cfg.assign, cfg.baselines);
  };
  if (n_workers <= 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < n_workers; ++w) pool.emplace_back(worker, w);
    for (auto& t : pool) t.join();
  }

  detkit::write_assignments(assigner, scenes, assignments, opts.out_path,
                            detkit::report_format_from(opts.format));
  return 0;
}

int run_stats(const CommonOpts& opts, const std::string& assigner_list, int n_scenes) {
  const std::vector<std::string> assigners = split_csv(assigner_list);
  if (assigners.empty())
    throw CLI::ValidationError("--assigners", "empty assigner list");
  for (const auto& a : assigners) require_known_assigner(a);
  detkit::HarnessConfig cfg = load_config_or_default(opts.config_path);
  if (opts.seed >= 0) cfg.synth.seed = static_cast<std::uint64_t>(opts.seed);

  const detkit::BucketReport report = detkit::run_bucket_stats(
      cfg.synth, cfg.assign, cfg.baselines, assigners, n_scenes, opts.threads);
  detkit::write_report(report, opts.out_path, detkit::report_format_from(opts.format));
  return 0;
}

int run_memory_sim(const CommonOpts& opts, int iterations,
                   const std::string& memory_out) {
  detkit::HarnessConfig cfg = load_config_or_default(opts.config_path);
  const detkit::MemorySimConfig& sim = cfg.memory_sim;
  sim.validate();
  const std::uint64_t seed = opts.seed >= 0 ? static_cast<std::uint64_t>(opts.seed) : 0;

  const int dim = sim.dim;
  const double init_scale =
      sim.init_scale > 0.0 ? sim.init_scale : 1.0 / std::sqrt(double(dim));
  detkit::CategoryMemory mem =
      detkit::init_memory(sim.n_classes, dim, seed, init_scale, sim.momentum);

  // Fixed cluster means, one per memory row (background included).
  const int n_rows = sim.n_classes + 1;
  detkit::Matrix means(static_cast<std::size_t>(n_rows), static_cast<std::size_t>(dim));
  detkit::Rng mean_rng(seed, 101);
  for (double& v : means.data)
    v = mean_rng.normal(0.0, sim.cluster_scale / std::sqrt(double(dim)));

  auto distance_to_mean = [&](int row) {
    double s = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double d = mem.rows(static_cast<std::size_t>(row), static_cast<std::size_t>(j)) -
                       means(static_cast<std::size_t>(row), static_cast<std::size_t>(j));
      s += d * d;
    }
    return std::sqrt(s);
  };

  std::vector<detkit::TrajectoryRow> rows;
  rows.reserve(static_cast<std::size_t>(n_rows) * static_cast<std::size_t>(iterations + 1));
  for (int c = 0; c < n_rows; ++c) rows.push_back({0, c, distance_to_mean(c)});

  detkit::Rng noise_rng(seed, 202);
  for (int t = 1; t <= iterations; ++t) {
    detkit::FeatureBatch batch;
    batch.features = detkit::Matrix(
        static_cast<std::size_t>(n_rows) * static_cast<std::size_t>(sim.features_per_class),
        static_cast<std::size_t>(dim));
    std::size_t r = 0;
    for (int c = 0; c < n_rows; ++c) {
      for (int f = 0; f < sim.features_per_class; ++f, ++r) {
        auto dst = batch.features.row(r);
        for (int j = 0; j < dim; ++j)
          dst[static_cast<std::size_t>(j)] =
              means(static_cast<std::size_t>(c), static_cast<std::size_t>(j)) +
              noise_rng.normal(0.0, sim.cluster_sigma);
        batch.labels.push_back(c);
      }
    }
    mem = detkit::update_from_batch(mem, batch);
    for (int c = 0; c < n_rows; ++c) rows.push_back({t, c, distance_to_mean(c)});
  }

  detkit::write_trajectory(rows, opts.out_path, detkit::report_format_from(opts.format));
  if (!memory_out.empty()) detkit::save_memory(mem, memory_out);
  return 0;
}

int run_enhance(const std::string& params_path, const std::string& features_path,
                const std::string& memory_path, const std::string& out_path) {
  const detkit::EnhanceParams params = detkit::load_enhance_params(params_path);
  const auto features = detkit::load_matrices(features_path);
  const detkit::Matrix& r_hat =
      detkit::require_matrix(features, "r_hat", features_path);
  const detkit::CategoryMemory mem = detkit::load_memory(memory_path);

  const detkit::EnhanceOutputs out = detkit::enhance_pipeline(r_hat, mem, params);
  detkit::save_matrices(
      {{"r", out.r}, {"p", out.p}, {"f_c", out.f_c}, {"r_enh", out.r_enh}}, out_path);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"detection sample-selection and feature-enhancement harness"};
  app.require_subcommand(1);

  CommonOpts assign_opts, stats_opts, sim_opts;
  std::string assigner = "mcss";
  std::string assigner_list = "mcss,iou_max,center,atss";
  std::string gt_path, pred_path, memory_out;
  std::string params_path, features_path, memory_path, enhance_out;
  int assign_scenes = 1;
  int stats_scenes = 1000;
  int iterations = 200;

  auto add_common = [](CLI::App* cmd, CommonOpts& o, bool with_threads = true) {
    cmd->add_option("--config", o.config_path, "key=value config file");
    cmd->add_option("--seed", o.seed, "seed override (wins over the config file)");
    cmd->add_option("--out", o.out_path, "output file path")->required();
    cmd->add_option("--format", o.format, "output format {json,csv}")
        ->check(CLI::IsMember({"json", "csv"}));
    if (with_threads)
      cmd->add_option("--threads", o.threads,
                      "worker count (0 = hardware concurrency, 1 = sequential)");
  };

  CLI::App* assign_cmd =
      app.add_subcommand("assign", "run one assigner and write its verdicts");
  add_common(assign_cmd, assign_opts);
  assign_cmd->add_option("--assigner", assigner, "one of: mcss, iou_max, center, atss");
  assign_cmd->add_option("--scenes", assign_scenes, "number of synthetic scenes");
  assign_cmd->add_option("--gt", gt_path, "annotation JSON (use with --preds)");
  assign_cmd->add_option("--preds", pred_path, "prediction JSON (use with --gt)");

  CLI::App* stats_cmd = app.add_subcommand(
      "stats", "per-size-bucket positive-sample statistics across assigners");
  add_common(stats_cmd, stats_opts);
  stats_cmd->add_option("--assigners", assigner_list, "comma-separated assigner names");
  stats_cmd->add_option("--scenes", stats_scenes, "number of synthetic scenes");

  CLI::App* sim_cmd = app.add_subcommand(
      "memory-sim", "simulate memory updates against synthetic feature clusters");
  add_common(sim_cmd, sim_opts, /*with_threads=*/false);
  sim_cmd->add_option("--iterations", iterations, "number of update iterations")
      ->check(CLI::PositiveNumber);
  sim_cmd->add_option("--memory-out", memory_out, "also save the final memory snapshot");

  CLI::App* enhance_cmd = app.add_subcommand(
      "enhance", "run the feature-enhancement pipeline on saved matrices");
  enhance_cmd->add_option("--params", params_path, "parameter container file")->required();
  enhance_cmd->add_option("--features", features_path, "feature container with 'r_hat'")
      ->required();
  enhance_cmd->add_option("--memory", memory_path, "memory snapshot file")->required();
  enhance_cmd->add_option("--out", enhance_out, "output container file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (assign_cmd->parsed())
      return run_assign(assign_opts, assigner, gt_path, pred_path, assign_scenes);
    if (stats_cmd->parsed()) return run_stats(stats_opts, assigner_list, stats_scenes);
    if (sim_cmd->parsed()) return run_memory_sim(sim_opts, iterations, memory_out);
    if (enhance_cmd->parsed())
      return run_enhance(params_path, features_path, memory_path, enhance_out);
  } catch (const CLI::ValidationError& e) {
    std::cerr << "detkit: error [usage]: " << e.what() << "\n";
    return 2;
  } catch (const detkit::ParseError& e) {
    std::cerr << "detkit: error [data]: " << e.what() << "\n";
    return 3;
  } catch (const detkit::IoError& e) {
    std::cerr << "detkit: error [io]: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "detkit: error [usage]: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "detkit: error [internal]: " << e.what() << "\n";
    return 70;
  }
  return 0;
}
