// Command-line entry point: dataset generation, continual training runs,
// dataset replay validation, and report/plot-data emission.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tsn/bench.hpp"
#include "tsn/config.hpp"
#include "tsn/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Relative outputs land under the output root when the env var is set.
fs::path resolve_out(const std::string& out) {
  fs::path p(out);
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("TSN_OUT_ROOT")) return fs::path(root) / p;
  return p;
}

int cmd_generate(const std::string& manifest_path, const std::string& out_dir, uint64_t seed) {
  const tsn::BenchmarkManifest manifest = tsn::load_manifest(manifest_path);
  const fs::path out = resolve_out(out_dir);
  fs::create_directories(out);
  for (size_t i = 0; i < manifest.tasks.size(); ++i) {
    const auto& task = manifest.tasks[i];
    auto env = tsn::make_env_from_manifest(manifest, task);
    tsn::TrajectoryDataset ds = tsn::generate_expert_dataset(
        *env, manifest.n_trajectories, tsn::derive_seed(seed, "dataset-" + task.name));
    auto replay_env = tsn::make_env(ds.spec);
    const tsn::ReplayReport report = tsn::validate_by_replay(ds, *replay_env);
    if (!report.all_ok()) {
      std::cerr << "generate: replay validation failed for " << task.name
                << " (max gap " << report.max_gap() << ")\n";
      return 2;
    }
    tsn::save_dataset(ds, out / task.name);
    std::cout << "wrote " << (out / task.name).string() << "  (" << ds.trajectories.size()
              << " trajectories, R* = " << ds.spec.target_return << ")\n";
  }
  return 0;
}

int cmd_validate(const std::string& data_dir, double tolerance) {
  const tsn::TrajectoryDataset ds = tsn::load_dataset(data_dir);
  auto env = tsn::make_env(ds.spec);
  const tsn::ReplayReport report = tsn::validate_by_replay(ds, *env, tolerance);
  std::cout << "task " << ds.spec.task_id << ": " << report.entries.size() << " trajectories, "
            << report.flagged_count() << " flagged, max gap " << report.max_gap() << "\n";
  for (const auto& e : report.entries)
    if (e.flagged)
      std::cout << "  trajectory " << e.trajectory_index << ": dataset " << e.dataset_return
                << " replayed " << e.replayed_return << " gap " << e.gap << "\n";
  return report.all_ok() ? 0 : 2;
}

tsn::MethodConfig parse_method_config(const tsn::SectionedConfig& cfg) {
  tsn::MethodConfig mc;
  if (const tsn::ConfigSection* m = cfg.find("method")) {
    const auto& kv = m->values;
    mc.variant = tsn::variant_from(tsn::cfg_get(kv, "variant", "affinity_a"));
    mc.tau = tsn::cfg_get_double(kv, "tau", mc.tau);
    mc.alpha = tsn::cfg_get_double(kv, "alpha", mc.alpha);
    mc.rho_kind = tsn::cfg_get(kv, "rho_kind", mc.rho_kind);
    mc.rho = tsn::cfg_get_double(kv, "rho", mc.rho);
    mc.max_copies = tsn::cfg_get_int(kv, "max_copies", mc.max_copies);
    mc.mask_reuse = tsn::cfg_get_int(kv, "mask_reuse", mc.mask_reuse);
    mc.warm_start = tsn::cfg_get_bool(kv, "warm_start", mc.warm_start);
    mc.warm_start_cfg.lambda = tsn::cfg_get_double(kv, "warm_start_lambda", mc.warm_start_cfg.lambda);
    mc.warm_start_cfg.noise_scale =
        tsn::cfg_get_double(kv, "warm_start_noise", mc.warm_start_cfg.noise_scale);
    mc.replay_mix = tsn::cfg_get_double(kv, "replay_mix", mc.replay_mix);
    mc.replay_capacity = tsn::cfg_get_i64(kv, "replay_capacity", mc.replay_capacity);
    mc.memory_size = tsn::cfg_get_int(kv, "memory_size", mc.memory_size);
    mc.epochs = tsn::cfg_get_int(kv, "epochs", mc.epochs);
    mc.learning_rate = tsn::cfg_get_double(kv, "learning_rate", mc.learning_rate);
    mc.batch_size = tsn::cfg_get_int(kv, "batch_size", mc.batch_size);
    mc.batches_per_epoch = tsn::cfg_get_int(kv, "batches_per_epoch", mc.batches_per_epoch);
    mc.routing_batches = tsn::cfg_get_int(kv, "routing_batches", mc.routing_batches);
    mc.eval_episodes = tsn::cfg_get_int(kv, "eval_episodes", mc.eval_episodes);
    mc.freeze_non_tsn_after_first =
        tsn::cfg_get_bool(kv, "freeze_non_tsn_after_first", mc.freeze_non_tsn_after_first);
    mc.seed = static_cast<uint64_t>(tsn::cfg_get_i64(kv, "seed", 0));
  }
  if (const tsn::ConfigSection* m = cfg.find("model")) {
    const auto& kv = m->values;
    mc.embed_dim = tsn::cfg_get_int(kv, "embed_dim", mc.embed_dim);
    mc.n_layers = tsn::cfg_get_int(kv, "n_layers", mc.n_layers);
    mc.n_heads = tsn::cfg_get_int(kv, "n_heads", mc.n_heads);
    mc.context_length = tsn::cfg_get_int(kv, "context_length", mc.context_length);
    mc.dropout = tsn::cfg_get_double(kv, "dropout", mc.dropout);
  }
  return mc;
}

struct RunOverrides {
  std::string variant, out;
  double tau = -1e300, alpha = -1e300;
  int max_copies = -1;
  int64_t seed = -1;
};

int cmd_run(const std::string& config_path, const RunOverrides& ov) {
  const tsn::SectionedConfig cfg = tsn::parse_sections(config_path);
  const tsn::ConfigSection* run = cfg.find("run");
  if (!run) throw tsn::InvalidInput("run config needs a [run] section");
  const std::string manifest_path = tsn::io::kv_get(run->values, "manifest", config_path);
  const std::string data_dir = tsn::io::kv_get(run->values, "data", config_path);
  std::string out_dir = tsn::cfg_get(run->values, "out", "run-out");

  tsn::MethodConfig mc = parse_method_config(cfg);
  if (!ov.variant.empty()) mc.variant = tsn::variant_from(ov.variant);
  if (ov.tau != -1e300) mc.tau = ov.tau;
  if (ov.alpha != -1e300) mc.alpha = ov.alpha;
  if (ov.max_copies >= 0) mc.max_copies = ov.max_copies;
  if (ov.seed >= 0) mc.seed = static_cast<uint64_t>(ov.seed);
  if (!ov.out.empty()) out_dir = ov.out;

  const tsn::BenchmarkManifest manifest = tsn::load_manifest(manifest_path);
  std::vector<tsn::TaskBundle> tasks;
  for (const auto& entry : manifest.tasks) {
    tsn::TaskBundle bundle;
    bundle.dataset = tsn::load_dataset(fs::path(data_dir) / entry.name);
    bundle.env = tsn::make_env(bundle.dataset.spec);
    tasks.push_back(std::move(bundle));
  }

  std::unique_ptr<tsn::CopyRegistry> registry;
  const tsn::RunResult result = tsn::run_sequence(tasks, manifest.metric, mc, &registry);

  const fs::path out = resolve_out(out_dir);
  tsn::write_run_result(out, result, mc, manifest.name);
  registry->save(out / "checkpoint");

  std::cout << "variant " << tsn::to_string(mc.variant) << "  copies " << result.final_copies
            << "  " << result.metric_kind << " " << std::setprecision(6) << result.metric_value
            << "  avg_forgetting " << result.mean_forgetting << "\n";
  std::cout << "results: " << (out / "results.json").string() << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& results_paths, const std::string& out_dir) {
  if (results_paths.empty()) throw tsn::InvalidInput("report: no results files given");
  const fs::path out = resolve_out(out_dir);
  fs::create_directories(out);

  std::ofstream table_csv(out / "comparison.csv");
  table_csv << "method,benchmark,metric,value,avg_forgetting,copies\n";
  std::ofstream curves(out / "curves.csv");
  curves << "method,task,stage,return,normalized\n";

  std::cout << std::left << std::setw(16) << "method" << std::setw(14) << "benchmark"
            << std::setw(10) << "metric" << std::setw(12) << "value" << std::setw(12) << "avg_F"
            << "copies\n";
  for (const std::string& path : results_paths) {
    std::ifstream is(path);
    if (!is) throw tsn::InvalidInput("cannot open results file: " + path);
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw tsn::InvalidInput("malformed results file " + path + ": " + e.what());
    }
    const std::string method = j.at("config").at("variant").get<std::string>();
    const std::string bench = j.at("benchmark").get<std::string>();
    const auto& metrics = j.at("metrics");
    const std::string kind = metrics.at("kind").get<std::string>();
    const double value = metrics.at("value").get<double>();
    const double avg_f = metrics.at("avg_forgetting").get<double>();
    const int copies = j.at("copies").get<int>();

    std::cout << std::left << std::setw(16) << method << std::setw(14) << bench << std::setw(10)
              << kind << std::setw(12) << std::setprecision(6) << value << std::setw(12) << avg_f
              << copies << "\n";
    table_csv << method << ',' << bench << ',' << kind << ',' << value << ',' << avg_f << ','
              << copies << '\n';

    const auto& matrix = j.at("matrix");
    const auto& targets = j.at("targets");
    const auto& task_ids = j.at("tasks");
    for (size_t task = 0; task < task_ids.size(); ++task) {
      for (size_t stage = 0; stage < matrix.size(); ++stage) {
        const double ret = matrix[stage][task].get<double>();
        const double target = targets[task].get<double>();
        const double normalized = target != 0.0 ? ret / target : 0.0;
        curves << method << ',' << task_ids[task].get<std::string>() << ',' << stage << ','
               << ret << ',' << normalized << '\n';
      }
    }
  }
  std::cout << "report: " << (out / "comparison.csv").string() << ", "
            << (out / "curves.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"continual offline RL with task-specific subnetworks and affinity routing"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("generate", "generate expert datasets for a benchmark manifest");
  std::string gen_manifest, gen_out = "data";
  uint64_t gen_seed = 0;
  gen->add_option("--manifest", gen_manifest, "benchmark manifest file")->required();
  gen->add_option("--out", gen_out, "output directory for dataset containers");
  gen->add_option("--seed", gen_seed, "generation seed");

  auto* run = app.add_subcommand("run", "run a continual sequence from a config file");
  std::string run_config;
  RunOverrides ov;
  run->add_option("--config", run_config, "run config file")->required();
  run->add_option("--variant", ov.variant, "override method variant");
  run->add_option("--tau", ov.tau, "override routing threshold");
  run->add_option("--alpha", ov.alpha, "override hybrid weight");
  run->add_option("--max-copies", ov.max_copies, "override copy budget (0 = unlimited)");
  run->add_option("--seed", ov.seed, "override seed");
  run->add_option("--out", ov.out, "override output directory");

  auto* val = app.add_subcommand("validate", "replay-check a dataset container against its environment");
  std::string val_data;
  double val_tol = 1e-6;
  val->add_option("--data", val_data, "dataset container directory")->required();
  val->add_option("--tolerance", val_tol, "flagging tolerance on |replayed - dataset| return");

  auto* rep = app.add_subcommand("report", "summarize one or more results.json files");
  std::vector<std::string> rep_inputs;
  std::string rep_out = "report";
  rep->add_option("results", rep_inputs, "results.json files")->required();
  rep->add_option("--out", rep_out, "output directory for comparison/curve CSVs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(gen_manifest, gen_out, gen_seed);
    if (run->parsed()) return cmd_run(run_config, ov);
    if (val->parsed()) return cmd_validate(val_data, val_tol);
    if (rep->parsed()) return cmd_report(rep_inputs, rep_out);
  } catch (const tsn::InvalidInput& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
