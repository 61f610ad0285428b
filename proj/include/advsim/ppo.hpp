#pragma once

#include <functional>
#include <vector>

#include "advsim/envs.hpp"
#include "advsim/gaussian_mlp.hpp"
#include "advsim/trajectory.hpp"

namespace advsim {

// Control policy pi(a | o): observation scaled by the spec's nominal scales,
// Gaussian action with a learned state-independent log_sigma. Actions are
// clipped to [-1, 1] by the environment.
struct GaussianPolicy {
  GaussianMlp model;
  Vec obs_scale;

  GaussianPolicy() = default;
  GaussianPolicy(const EnvSpec& spec, std::vector<int> hidden, double init_log_sigma, Rng& rng);

  Vec input(const Vec& obs) const { return obs.cwiseQuotient(obs_scale); }
  GaussianHead head(const Vec& obs) const { return model.head(input(obs)); }
  Vec mean_action(const Vec& obs) const { return head(obs).mu; }

  Json to_json() const;
  static GaussianPolicy from_json(const Json& j);
};

// V(input) with a scalar head.
struct ValueFunction {
  MlpNet net;

  ValueFunction() = default;
  ValueFunction(int input_dim, const std::vector<int>& hidden, Rng& rng);
  double operator()(const Vec& input) const { return net.predict(input)[0]; }
};

struct ActorStep {
  Vec sample;  // pre-clip action
  double log_prob = 0.0;
};

class Actor {
 public:
  virtual ~Actor() = default;
  virtual ActorStep act(const Vec& obs, Rng& rng) const = 0;
  virtual double log_prob(const Vec& obs, const Vec& sample) const = 0;
};

enum class ActionMode {
  Stochastic,     // policy's own Gaussian
  Deterministic,  // mean action, log_prob 0
  Exploration,    // mean + N(0, exploration_std^2), used by the behavior policy
};

class PolicyActor : public Actor {
 public:
  PolicyActor(const GaussianPolicy& policy, ActionMode mode, double exploration_std = 0.25)
      : policy_(&policy), mode_(mode), exploration_std_(exploration_std) {}

  ActorStep act(const Vec& obs, Rng& rng) const override;
  double log_prob(const Vec& obs, const Vec& sample) const override;

 private:
  const GaussianPolicy* policy_;
  ActionMode mode_;
  double exploration_std_;
};

// Actor replaying a fixed action sequence (open-loop system identification).
class ReplayActor : public Actor {
 public:
  explicit ReplayActor(std::vector<Vec> actions) : actions_(std::move(actions)) {}
  ActorStep act(const Vec& obs, Rng& rng) const override;
  double log_prob(const Vec&, const Vec&) const override { return 0.0; }
  void rewind() const { cursor_ = 0; }

 private:
  std::vector<Vec> actions_;
  mutable std::size_t cursor_ = 0;
};

struct RolloutRngs {
  Rng env;
  Rng policy;
  Rng param;

  static RolloutRngs from_seed(std::uint64_t seed);
};

struct EpisodeOptions {
  bool observation_noise = true;
  bool record_intermediates = true;
  const EnvState* initial_state = nullptr;  // overrides p0 when set
  int max_steps = -1;                       // overrides spec.max_steps when > 0
};

// Runs one episode to termination, max_steps, or divergence (recorded as an
// early termination).
Trajectory run_episode(Simulator& sim, const Actor& actor, RolloutRngs& rngs, int episode_id,
                       const EpisodeOptions& options = {});

// Runs episodes until n_episodes are done (or, when min_steps > 0, until the
// step total reaches min_steps).
std::vector<Trajectory> collect_rollouts(Simulator& sim, const Actor& actor, int n_episodes,
                                         RolloutRngs& rngs, int first_episode_id = 0,
                                         long min_steps = 0);

// Flattened on-policy data for one PPO update. Columns of inputs/samples are
// time steps; episodes are contiguous and delimited by episode_starts.
struct RolloutBatch {
  Mat inputs;
  Mat samples;
  Vec log_probs;
  Vec rewards;
  std::vector<bool> dones;
  std::vector<std::size_t> episode_starts;
  double gamma = 0.99;
  double lambda = 0.95;

  Vec advantages;
  Vec returns;

  std::size_t size() const { return static_cast<std::size_t>(rewards.size()); }
  void check() const;
};

// Policy batch: input = scaled observation, sample = pre-clip action, reward =
// stored task reward.
RolloutBatch make_policy_batch(const std::vector<Trajectory>& trajs, const GaussianPolicy& policy,
                               double gamma, double lambda);

struct GaeResult {
  Vec advantages;
  Vec returns;
};

// Single episode. values has rewards.size() + 1 entries; the last is the
// bootstrap value (use 0 at a terminal).
GaeResult compute_gae(const Vec& rewards, const Vec& values, const std::vector<bool>& dones, double gamma,
                      double lambda);
// Whole batch; values holds one entry per step and every episode bootstraps 0.
void compute_gae(RolloutBatch& batch, const Vec& values);

struct PpoConfig {
  double clip = 0.2;
  int epochs = 10;
  int minibatch = 256;
  double policy_lr = 3e-4;
  double value_lr = 1e-3;
  double gamma = 0.99;
  double lambda = 0.95;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
};

struct PpoDiagnostics {
  double surrogate_at_start = 0.0;  // clipped surrogate before any step (rho = 1)
  double mean_ratio = 1.0;
  double max_ratio_deviation = 0.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  double approx_kl = 0.0;
  double value_loss = 0.0;
  bool aborted = false;
};

// Normalizes to mean 0, std 1 (std guarded below by 1e-8).
Vec normalize_advantages(const Vec& advantages);

// True where the clipped objective has zero gradient for that sample.
bool surrogate_clipped(double ratio, double advantage, double clip);

struct SurrogateResult {
  double loss = 0.0;  // -mean(min(rho A, clip(rho) A)) - entropy_coef * mean H
  Vec grad;           // d loss / d agent parameters
  Vec ratio;
};

SurrogateResult clipped_surrogate(GaussianMlp& agent, const Mat& inputs, const Mat& samples,
                                  const Vec& old_log_probs, const Vec& advantages, double clip,
                                  double entropy_coef = 0.0);

// Owns the optimizer state for an (agent, value) pair across iterations.
class PpoTrainer {
 public:
  PpoTrainer(GaussianMlp& agent, MlpNet& value, PpoConfig config);

  // Computes GAE with the current value net, then runs the clipped update. A
  // non-finite loss restores the pre-update weights and sets aborted.
  PpoDiagnostics update(RolloutBatch& batch, Rng& rng);
  // Extra value regression epochs on the batch (after a value re-init).
  double fit_value(RolloutBatch& batch, int epochs, Rng& rng);

  const PpoConfig& config() const { return config_; }

 private:
  GaussianMlp* agent_;
  MlpNet* value_;
  PpoConfig config_;
  Adam agent_opt_;
  Adam value_opt_;
};

struct PolicyTrainConfig {
  int iterations = 100;
  long steps_per_iter = 4000;  // complete episodes are collected until reached
  std::vector<int> hidden{64, 64};
  double init_log_sigma = -0.5;
  int value_warmup_epochs = 0;
  long episode_budget = -1;  // hard cap on episodes started, -1 = none
  PpoConfig ppo;
};

struct TrainingLogRow {
  int iteration = 0;
  double mean_return = 0.0;
  double mean_length = 0.0;
  long episodes = 0;
  PpoDiagnostics ppo;
};

using TrainingCallback = std::function<void(const TrainingLogRow&)>;

// PPO training of policy in sim with the task reward stored by the rollout.
std::vector<TrainingLogRow> train_policy(GaussianPolicy& policy, ValueFunction& value, Simulator& sim,
                                         const PolicyTrainConfig& config, RolloutRngs& rngs,
                                         const TrainingCallback& callback = {});

struct EvalStats {
  double mean_return = 0.0;
  double std_return = 0.0;
  double mean_length = 0.0;
  std::vector<double> returns;
};

// Mean-action rollouts with environment noise on.
EvalStats evaluate_policy(Simulator& sim, const GaussianPolicy& policy, int episodes, std::uint64_t seed);

}  // namespace advsim
