#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "advsim/discriminator.hpp"
#include "advsim/hybrid.hpp"
#include "advsim/ppo.hpp"

namespace advsim {

// {tau_R}: trajectories of the behavior policy in the target domain. Only
// observations, executed actions and rewards are kept per step; the initial
// state is retained for paired-trajectory baselines.
struct TargetDataset {
  std::vector<Trajectory> trajectories;
  double l_R = 0.0;
  Json provenance = Json::object();

  std::vector<TransitionTuple> tuples() const { return tuples_of(trajectories); }
  std::size_t total_steps() const { return advsim::total_steps(trajectories); }
  // Recomputes l_R; throws TrainingError when no steps were recorded.
  void finalize();
};

// N episodes of pi_B's mean action plus N(0, noise_std^2) exploration noise.
TargetDataset collect_target_data(const GaussianPolicy& behavior, Environment& target, int n_trajectories,
                                  double noise_std, std::uint64_t seed);

// log(d / (1 - d)) with d clamped to (eps, 1 - eps).
double gan_reward(double d);
// b_i = log(l_i / l_R).
double alive_bonus(double l_i, double l_R);

struct IdentifyConfig {
  int iterations = 200;
  int trajectories_per_iter = 50;
  std::vector<int> hidden{64, 64};
  double init_log_sigma = -1.0;
  double exploration_std = 0.25;
  bool use_alive_bonus = true;
  bool early_stop = true;
  int early_stop_window = 20;
  double early_stop_lo = 0.45;
  double early_stop_hi = 0.55;
  int min_iterations = 0;  // never stop early before this many iterations
  PpoConfig ppo{0.2, 10, 256, 3e-4, 1e-3, 0.99, 0.95, 0.0, 0.5};
  DiscriminatorConfig discriminator;
};

Json to_json(const IdentifyConfig& c);
IdentifyConfig identify_config_from_json(const Json& j, IdentifyConfig base = {});

struct IdentifyRow {
  int iteration = 0;
  double sim_score = 0.0;   // mean D on simulated tuples (post-update)
  double real_score = 0.0;  // mean D on target tuples (post-update)
  double disc_loss = 0.0;   // last-epoch loss
  double alive_bonus = 0.0;
  double sim_length = 0.0;  // l_i
  double mean_reward = 0.0;
  double approx_kl = 0.0;
  double entropy = 0.0;
  Vec mean_params;  // squashed mean of f over the iteration's visited inputs
};

struct IdentificationRun {
  IdentifyConfig config;
  std::vector<IdentifyRow> rows;
  ParamFunction param_fn;
  Discriminator discriminator;
  bool early_stopped = false;
  bool aborted = false;  // f went non-finite; param_fn holds the last valid iterate
  Vec visited_inputs_mean_params;  // mean_params of the final iteration
};

using IdentifyCallback = std::function<void(const IdentifyRow&)>;

// Overwrites each step's reward with gan_reward(D(tuple)) + bonus.
void assign_identification_rewards(std::vector<Trajectory>& trajs, const Discriminator& d, double bonus);

// Batch over the parameter function's decisions: input (s, a), sample
// pre-squash c, log-prob, identification reward.
RolloutBatch make_param_batch(const std::vector<Trajectory>& trajs, double gamma, double lambda);

// Mean over inputs of f's squashed mean output.
Vec mean_param_output(const ParamFunction& f, const Mat& inputs);
Mat param_inputs_of(const std::vector<Trajectory>& trajs);

// Alternates discriminator and parameter-function updates with the
// behavior policy rolled out in the hybrid simulator. The target domain is
// never stepped.
IdentificationRun identify(const TargetDataset& dataset, const GaussianPolicy& behavior, const EnvSpec& source,
                           const IdentifyConfig& config, std::uint64_t seed, const IdentifyCallback& callback = {},
                           const ParamFunction* initial_f = nullptr);

struct RefineConfig {
  PolicyTrainConfig train;
  double base_policy_lr = 3e-4;  // behavior-policy training rate; refinement uses half
  bool stochastic_params = true;
};

// Warm-starts from pi_B, fresh value function, PPO in the hybrid simulator
// with the task reward.
GaussianPolicy refine_policy(const ParamFunction& f, const GaussianPolicy& behavior, const EnvSpec& source,
                             const TaskRewardConfig& reward, const RefineConfig& config, std::uint64_t seed,
                             std::vector<TrainingLogRow>* log = nullptr);

struct PipelineConfig {
  int target_trajectories = 200;
  double exploration_std = 0.25;
  IdentifyConfig identify;
  RefineConfig refine;
  int outer_iterations = 1;  // >1 recollects with pi_new as the behavior policy
};

struct PipelineResult {
  TargetDataset dataset;
  IdentificationRun run;
  GaussianPolicy policy;
  long target_steps_collect = 0;
  long target_steps_after_collect = 0;  // target steps issued by identify + refine
};

PipelineResult run_pipeline(Environment& target, const GaussianPolicy& behavior, const PipelineConfig& config,
                            std::uint64_t seed);

}  // namespace advsim
