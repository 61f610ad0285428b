// advsim: command-line driver for data collection, identification, policy
// refinement, baselines and evaluation. Every command writes into --out and
// records the exact configuration it ran with.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>

#include "advsim/errors.hpp"
#include "advsim/io.hpp"

using namespace advsim;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out;
  std::string env;
  std::string gap;
};

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config_path.empty() ? RunConfig{} : RunConfig::load(c.config_path);
  if (c.seed_set) {
    cfg.seed = c.seed;
    cfg.seeds = {c.seed};
  }
  if (!c.env.empty()) cfg.env = c.env;
  if (!c.gap.empty()) cfg.gap = c.gap;
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "JSON run configuration");
  app->add_option_function<std::uint64_t>("--seed", [&c](const std::uint64_t& s) { c.seed = s; c.seed_set = true; },
                                          "global seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--env", c.env, "slider | pendulum | hopper1d");
  app->add_option("--gap", c.gap, "none | deform | power | heavy");
}

GaussianPolicy load_policy(const std::string& path) {
  if (path.empty()) throw ConfigError("a --policy checkpoint is required");
  return GaussianPolicy::from_json(read_json(path));
}

void check_policy(const GaussianPolicy& p, const EnvSpec& spec, const std::string& path) {
  if (p.model.input_dim() != spec.obs_dim() || p.model.output_dim() != spec.action_dim()) {
    throw ConfigError(path + ": policy dimensions do not match " + spec.name);
  }
}

void log_progress(const char* stage, int iteration, double value) {
  std::fprintf(stderr, "[%s] iteration %d: %.4f\n", stage, iteration, value);
}

int cmd_train(const RunConfig& cfg) {
  const EnvSpec spec = cfg.make_spec();
  const fs::path dir = prepare_run_dir(cfg.out, cfg);
  Rng init = Rng::stream(cfg.seed, "policy_init");
  GaussianPolicy policy(spec, cfg.policy.hidden, cfg.policy.init_log_sigma, init);
  ValueFunction value(spec.obs_dim(), cfg.policy.hidden, init);
  Environment source(spec, TargetGap{});
  RolloutRngs rngs = RolloutRngs::from_seed(cfg.seed);
  const auto log = train_policy(policy, value, source, cfg.policy, rngs, [](const TrainingLogRow& r) {
    if (r.iteration % 10 == 0) log_progress("train", r.iteration, r.mean_return);
  });
  write_training_log(dir / "metrics.csv", log);
  write_json(dir / "policy.json", policy.to_json());
  return 0;
}

int cmd_collect(const RunConfig& cfg, const std::string& policy_path) {
  const EnvSpec spec = cfg.make_spec();
  GaussianPolicy behavior = load_policy(policy_path);
  check_policy(behavior, spec, policy_path);
  Environment target = make_target(spec, cfg.make_gap(spec));
  const fs::path dir = prepare_run_dir(cfg.out, cfg);
  TargetDataset data = collect_target_data(behavior, target, cfg.target_trajectories, cfg.exploration_std, cfg.seed);
  data.provenance["policy"] = policy_path;
  write_dataset(dir / "dataset.jsonl", spec, data);
  std::printf("collected %zu steps in %d episodes, l_R = %.3f\n", data.total_steps(), cfg.target_trajectories, data.l_R);
  return 0;
}

int cmd_identify(const RunConfig& cfg, const std::string& policy_path, const std::string& dataset_path) {
  const EnvSpec spec = cfg.make_spec();
  GaussianPolicy behavior = load_policy(policy_path);
  check_policy(behavior, spec, policy_path);
  if (dataset_path.empty()) throw ConfigError("identify needs --dataset");
  TargetDataset data = read_dataset(dataset_path);
  const fs::path dir = prepare_run_dir(cfg.out, cfg);
  IdentificationRun run = identify(data, behavior, spec, cfg.identify, cfg.seed, [](const IdentifyRow& r) {
    if (r.iteration % 10 == 0) log_progress("identify", r.iteration, r.sim_score);
  });
  write_identify_metrics(dir / "metrics.csv", run.rows, run.param_fn.names);
  write_json(dir / "param_fn.json", run.param_fn.to_json());
  write_json(dir / "discriminator.json", run.discriminator.to_json());
  write_json(dir / "summary.json", {{"iterations", run.rows.size()},
                                    {"early_stopped", run.early_stopped},
                                    {"aborted", run.aborted},
                                    {"mean_params", run.visited_inputs_mean_params.size() > 0
                                                        ? vec_to_json(run.visited_inputs_mean_params)
                                                        : Json::array()}});
  return run.aborted ? 3 : 0;
}

int cmd_refine(const RunConfig& cfg, const std::string& policy_path, const std::string& param_fn_path) {
  const EnvSpec spec = cfg.make_spec();
  GaussianPolicy behavior = load_policy(policy_path);
  check_policy(behavior, spec, policy_path);
  if (param_fn_path.empty()) throw ConfigError("refine needs --param-fn");
  ParamFunction f = ParamFunction::from_json(read_json(param_fn_path));
  const fs::path dir = prepare_run_dir(cfg.out, cfg);
  std::vector<TrainingLogRow> log;
  GaussianPolicy refined = refine_policy(f, behavior, spec, spec.reward, cfg.refine, cfg.seed, &log);
  write_training_log(dir / "metrics.csv", log);
  write_json(dir / "policy.json", refined.to_json());
  return 0;
}

int cmd_baseline(const RunConfig& cfg, const std::string& method, const std::string& policy_path,
                 const std::string& dataset_path) {
  const EnvSpec spec = cfg.make_spec();
  const fs::path dir = prepare_run_dir(cfg.out, cfg);
  GaussianPolicy result;
  if (method == "dr" || method == "dr-ft") {
    result = train_dr_policy(spec, cfg.dr, spec.reward, cfg.policy, cfg.seed);
    if (method == "dr-ft") {
      Environment target = make_target(spec, cfg.make_gap(spec));
      result = finetune(result, target, cfg.finetune, cfg.seed);
    }
  } else if (method == "ft") {
    GaussianPolicy start = load_policy(policy_path);
    check_policy(start, spec, policy_path);
    Environment target = make_target(spec, cfg.make_gap(spec));
    result = finetune(start, target, cfg.finetune, cfg.seed);
    write_json(dir / "summary.json", {{"target_episodes", target.episodes_started()},
                                      {"target_steps", target.steps_taken()}});
  } else if (method == "sysid-o" || method == "sysid-c") {
    GaussianPolicy behavior = load_policy(policy_path);
    check_policy(behavior, spec, policy_path);
    if (dataset_path.empty()) throw ConfigError("sysid baselines need --dataset");
    TargetDataset data = read_dataset(dataset_path);
    SysIdConfig sc = cfg.sysid;
    sc.mode = method == "sysid-o" ? SysIdMode::OpenLoop : SysIdMode::ClosedLoop;
    SysIdResult sys = cmaes_sysid(data, behavior, spec, sc, cfg.seed);
    write_json(dir / "sysid.json", sys.to_json());
    result = refine_under_sysid(sys, behavior, spec, cfg.refine, cfg.seed);
  } else {
    throw ConfigError("unknown baseline method '" + method + "' (ft, dr, dr-ft, sysid-o, sysid-c)");
  }
  write_json(dir / "policy.json", result.to_json());
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::vector<std::string>& policies) {
  const EnvSpec spec = cfg.make_spec();
  if (policies.empty()) throw ConfigError("evaluate needs at least one --policy [name=]path");
  Environment target = make_target(spec, cfg.make_gap(spec));
  const fs::path dir = prepare_run_dir(cfg.out, cfg);
  std::ofstream csv(dir / "results.csv");
  if (!csv) throw IoError("cannot write " + (dir / "results.csv").string());
  csv << "method,env,gap,seed,mean_return,std_return,mean_length\n";
  Json summary = Json::array();
  for (const auto& entry : policies) {
    const auto eq = entry.find('=');
    const std::string name = eq == std::string::npos ? fs::path(entry).parent_path().filename().string() : entry.substr(0, eq);
    const std::string path = eq == std::string::npos ? entry : entry.substr(eq + 1);
    GaussianPolicy policy = load_policy(path);
    check_policy(policy, spec, path);
    std::vector<double> means;
    for (auto seed : cfg.seeds) {
      const EvalStats s = evaluate_policy(target, policy, cfg.eval_episodes, seed);
      means.push_back(s.mean_return);
      csv << name << ',' << spec.name << ',' << cfg.gap << ',' << seed << ',' << s.mean_return << ',' << s.std_return
          << ',' << s.mean_length << '\n';
    }
    double mean = 0.0;
    for (double m : means) mean += m;
    mean /= static_cast<double>(means.size());
    double var = 0.0;
    for (double m : means) var += (m - mean) * (m - mean);
    const double seed_std = std::sqrt(var / static_cast<double>(means.size()));
    summary.push_back({{"method", name}, {"env", spec.name}, {"gap", cfg.gap}, {"mean_return", mean}, {"seed_std", seed_std}});
    std::printf("%-16s %s/%s  %.2f +- %.2f\n", name.c_str(), spec.name.c_str(), cfg.gap.c_str(), mean, seed_std);
  }
  write_json(dir / "summary.json", summary);
  return 0;
}

int cmd_dump_params(const RunConfig& cfg, const std::string& param_fn_path, int grid) {
  const EnvSpec spec = cfg.make_spec();
  if (param_fn_path.empty()) throw ConfigError("dump-params needs --param-fn");
  ParamFunction f = ParamFunction::from_json(read_json(param_fn_path));
  if (f.input_dim() != spec.feature_dim() + spec.action_dim()) throw ConfigError(param_fn_path + ": does not match " + spec.name);
  const fs::path dir = prepare_run_dir(cfg.out, cfg);
  std::ofstream csv(dir / "params.csv");
  if (!csv) throw IoError("cannot write " + (dir / "params.csv").string());
  // Sweeps the first state feature and the first action; other inputs sit at 0.
  csv << "feature0,action0";
  for (const auto& n : f.names) csv << ',' << n;
  csv << '\n';
  for (int i = 0; i < grid; ++i) {
    for (int k = 0; k < grid; ++k) {
      Vec x = Vec::Zero(f.input_dim());
      x[0] = -2.0 + 4.0 * i / std::max(1, grid - 1);
      x[spec.feature_dim()] = -1.0 + 2.0 * k / std::max(1, grid - 1);
      const Vec c = f.mean_params(x);
      csv << x[0] << ',' << x[spec.feature_dim()];
      for (Eigen::Index j = 0; j < c.size(); ++j) csv << ',' << c[j];
      csv << '\n';
    }
  }
  return 0;
}

int cmd_score_dataset(const RunConfig& cfg, const std::string& disc_path, const std::string& dataset_path) {
  if (disc_path.empty() || dataset_path.empty()) throw ConfigError("score-dataset needs --discriminator and --dataset");
  Discriminator d = Discriminator::from_json(read_json(disc_path));
  const auto trajs = read_trajectories(dataset_path);
  const fs::path dir = prepare_run_dir(cfg.out, cfg);
  std::ofstream csv(dir / "scores.csv");
  if (!csv) throw IoError("cannot write " + (dir / "scores.csv").string());
  csv << "episode_id,t,score,gan_reward\n";
  for (const auto& t : trajs) {
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      const double s = d.score(t.steps[i].tuple());
      csv << t.episode_id << ',' << i << ',' << s << ',' << gan_reward(s) << '\n';
    }
  }
  return 0;
}

// Pivots evaluate summaries into one row per method and one column per env/gap.
int cmd_tabulate(const std::vector<std::string>& summaries, const std::string& out_path) {
  if (summaries.empty()) throw ConfigError("tabulate needs at least one --summary");
  std::vector<std::string> methods, columns;
  std::map<std::pair<std::string, std::string>, std::pair<double, double>> cells;
  auto remember = [](std::vector<std::string>& v, const std::string& s) {
    if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
  };
  for (const auto& path : summaries) {
    for (const auto& row : read_json(path)) {
      const std::string m = row.at("method").get<std::string>();
      const std::string col = row.at("env").get<std::string>() + "/" + row.at("gap").get<std::string>();
      remember(methods, m);
      remember(columns, col);
      cells[{m, col}] = {row.at("mean_return").get<double>(), row.value("seed_std", 0.0)};
    }
  }
  std::ofstream csv(out_path);
  if (!csv) throw IoError("cannot write " + out_path);
  csv << "method";
  for (const auto& c : columns) csv << ',' << c << ',' << c << "_std";
  csv << '\n';
  for (const auto& m : methods) {
    csv << m;
    for (const auto& c : columns) {
      const auto it = cells.find({m, c});
      if (it == cells.end()) csv << ",,";
      else csv << ',' << it->second.first << ',' << it->second.second;
    }
    csv << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial simulator identification and policy adaptation"};
  app.require_subcommand(1);
  Common common;
  std::string policy, dataset, param_fn, discriminator, method;
  std::vector<std::string> policies;
  int grid = 11;

  auto* train = app.add_subcommand("train", "train a behavior policy in the source environment");
  auto* collect = app.add_subcommand("collect", "collect target-domain trajectories with the behavior policy");
  auto* ident = app.add_subcommand("identify", "identify the hybrid simulator from a target dataset");
  auto* refine = app.add_subcommand("refine", "refine the behavior policy in the identified simulator");
  auto* baseline = app.add_subcommand("baseline", "run a comparison method");
  auto* evaluate = app.add_subcommand("evaluate", "evaluate policies in the target environment");
  auto* dump = app.add_subcommand("dump-params", "write f(s, a) over an input grid as CSV");
  auto* score = app.add_subcommand("score-dataset", "write per-tuple discriminator scores as CSV");
  auto* tabulate = app.add_subcommand("tabulate", "merge evaluate summaries into a methods x environments CSV");
  std::vector<std::string> summaries;
  std::string table_out = "table.csv";
  tabulate->add_option("--summary", summaries, "evaluate summary.json, repeatable")->required();
  tabulate->add_option("--out", table_out, "CSV path");
  for (auto* sub : {train, collect, ident, refine, baseline, evaluate, dump, score}) add_common(sub, common);
  for (auto* sub : {collect, ident, refine, baseline}) sub->add_option("--policy", policy, "policy checkpoint");
  for (auto* sub : {ident, baseline, score}) sub->add_option("--dataset", dataset, "trajectory file (JSON Lines)");
  for (auto* sub : {refine, dump}) sub->add_option("--param-fn", param_fn, "parameter function checkpoint");
  baseline->add_option("--method", method, "ft | dr | dr-ft | sysid-o | sysid-c")->required();
  evaluate->add_option("--policy", policies, "[name=]path, repeatable")->required();
  dump->add_option("--grid", grid, "grid points per swept input");
  score->add_option("--discriminator", discriminator, "discriminator checkpoint")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    const RunConfig cfg = resolve(common);
    if (*train) return cmd_train(cfg);
    if (*collect) return cmd_collect(cfg, policy);
    if (*ident) return cmd_identify(cfg, policy, dataset);
    if (*refine) return cmd_refine(cfg, policy, param_fn);
    if (*baseline) return cmd_baseline(cfg, method, policy, dataset);
    if (*evaluate) return cmd_evaluate(cfg, policies);
    if (*dump) return cmd_dump_params(cfg, param_fn, grid);
    if (*score) return cmd_score_dataset(cfg, discriminator, dataset);
    if (*tabulate) return cmd_tabulate(summaries, table_out);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
