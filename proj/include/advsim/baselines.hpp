#pragma once

#include <functional>
#include <string>
#include <vector>

#include "advsim/hybrid.hpp"
#include "advsim/identify.hpp"
#include "advsim/ppo.hpp"

namespace advsim {

struct Range {
  double lo = 1.0;
  double hi = 1.0;
};

// Toy analogs of the randomized dynamics parameters. Scale entries multiply
// the spec's nominal constant; lateral friction is absolute. Motor friction is
// a back-EMF coefficient in command units per unit joint velocity.
struct DrRanges {
  Range mass_ratio{0.5, 1.5};
  Range motor_scale{0.5, 1.5};
  Range motor_friction{0.02, 0.3};
  Range lateral_friction{0.4, 1.5};
  Range spinning_friction_scale{0.0, 2.0};
  Range restitution_scale{0.0, 1.5};
  Range contact_stiffness_scale{0.5, 2.0};

  static DrRanges degenerate();  // every range collapsed to the nominal value
};

struct DrSample {
  SimParamVector params;  // ordered as EnvSpec::params
  double mass_ratio = 1.0;
  double motor_friction = 0.0;
};

// Independent uniform draw per parameter. Parameters the spec does not
// declare are skipped.
DrSample dr_sample(const DrRanges& ranges, const EnvSpec& spec, Rng& rng);
// Physics constants for a drawn sample.
Physics dr_physics(const EnvSpec& spec, const DrSample& sample);

// Resamples dynamics at every episode start.
class RandomizedSimulator : public Simulator {
 public:
  RandomizedSimulator(EnvSpec spec, DrRanges ranges);

  const EnvSpec& spec() const override { return spec_; }
  void begin_episode(Rng& param_rng) override;
  EnvState step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& param_rng,
                StepRecord* record) override;
  const DrSample& current() const { return current_; }

 private:
  EnvSpec spec_;
  DrRanges ranges_;
  DrSample current_;
  Physics physics_;
};

GaussianPolicy train_dr_policy(const EnvSpec& source, const DrRanges& ranges, const TaskRewardConfig& reward,
                               const PolicyTrainConfig& config, std::uint64_t seed,
                               const GaussianPolicy* warm_start = nullptr);

struct FinetuneConfig {
  long budget_trajs = 200;
  PolicyTrainConfig train;  // steps_per_iter sets the episodes per update
  double base_policy_lr = 3e-4;
};

// PPO on the target itself with a hard cap on episodes started.
GaussianPolicy finetune(const GaussianPolicy& start, Environment& target, const FinetuneConfig& config,
                        std::uint64_t seed);

inline constexpr double kSysIdMaxPenalty = 1e3;

// Temporal Gaussian smoothing per dimension; the kernel is truncated at 3
// sigma and renormalized at the ends. sigma <= 0 returns the input.
std::vector<Vec> gaussian_smooth(const std::vector<Vec>& sequence, double sigma);

// Mean over index-paired trajectories of the per-step mean l_p distance
// between smoothed observation sequences (each dimension divided by obs_scale),
// over the common prefix. A pair without common prefix scores kSysIdMaxPenalty.
double sysid_fitness(const std::vector<Trajectory>& sim, const std::vector<Trajectory>& real, double p,
                     double smooth_sigma, const Vec& obs_scale);

// (mu, lambda)-CMA-ES with rank-one and rank-mu covariance updates.
class Cmaes {
 public:
  Cmaes(Vec mean, double sigma, int population, std::uint64_t seed);

  std::vector<Vec> ask();
  void tell(const std::vector<Vec>& candidates, const std::vector<double>& fitness);

  const Vec& mean() const { return mean_; }
  double sigma() const { return sigma_; }
  const Vec& best() const { return best_x_; }
  double best_fitness() const { return best_f_; }
  int generation() const { return generation_; }

 private:
  int n_;
  int lambda_;
  int mu_;
  Vec weights_;
  double mu_eff_;
  double c_sigma_, d_sigma_, c_c_, c_1_, c_mu_, chi_n_;
  Vec mean_;
  double sigma_;
  Mat cov_;
  Mat b_;
  Vec d_;
  Vec p_sigma_;
  Vec p_c_;
  Rng rng_;
  int generation_ = 0;
  Vec best_x_;
  double best_f_ = 1e300;
};

struct CmaesResult {
  Vec best;
  double fitness = 0.0;
  std::vector<double> history;  // best fitness per generation
};

CmaesResult cmaes_minimize(const std::function<double(const Vec&)>& objective, const Vec& x0, double sigma0,
                           int population, int generations, std::uint64_t seed);

enum class SysIdMode { OpenLoop, ClosedLoop };

struct SysIdConfig {
  SysIdMode mode = SysIdMode::OpenLoop;
  int population = 16;
  int generations = 200;
  double sigma0 = 0.3;  // fraction of each parameter's search range
  double p = 2.0;
  double smooth_sigma = 2.0;  // steps
  bool fit_variance = true;
  double log_std_lo = -6.0;  // log-std search box, relative to range width
  double log_std_hi = 0.0;
  int pairs = 50;  // recorded trajectories used per fitness evaluation
};

struct SysIdResult {
  Vec mean;     // per-parameter, inside the search ranges
  Vec log_var;  // per-parameter
  double fitness = 0.0;
  std::vector<double> history;
  std::vector<std::string> names;

  Json to_json() const;
};

// CMA-ES over state-independent parameter means (and log-variances). Search
// ranges are the spec's parameter ranges. Simulated rollouts start from the
// recorded initial states with noise off; open loop replays the recorded
// actions, closed loop runs the behavior policy's mean action.
SysIdResult cmaes_sysid(const TargetDataset& dataset, const GaussianPolicy& behavior, const EnvSpec& source,
                        const SysIdConfig& config, std::uint64_t seed);

// Parameters drawn once per episode from N(mean, exp(log_var)), clipped to
// the declared ranges.
class SysIdSimulator : public Simulator {
 public:
  SysIdSimulator(EnvSpec spec, SysIdResult result);
  const EnvSpec& spec() const override { return spec_; }
  void begin_episode(Rng& param_rng) override;
  EnvState step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& param_rng,
                StepRecord* record) override;

 private:
  EnvSpec spec_;
  SysIdResult result_;
  SimParamVector current_;
};

GaussianPolicy refine_under_sysid(const SysIdResult& result, const GaussianPolicy& behavior, const EnvSpec& source,
                                  const RefineConfig& config, std::uint64_t seed);

}  // namespace advsim
