#pragma once

#include <string>
#include <vector>

#include "advsim/envs.hpp"
#include "advsim/gaussian_mlp.hpp"
#include "advsim/ppo.hpp"
#include "advsim/trajectory.hpp"

namespace advsim {

struct ParamSample {
  SimParamVector params;  // squashed c_t
  Vec pre_squash;
  double log_prob = 0.0;  // Gaussian log-density of pre_squash
};

// f_theta(s, a) -> N(mu, sigma) over pre-squash parameters, mapped into each
// declared range by lo + (hi - lo) * sigmoid(u). Contact parameters come from
// one branch, motor scales from the other.
class ParamFunction {
 public:
  ParamFunction() = default;
  // The mean starts at each parameter's nominal value.
  ParamFunction(const EnvSpec& spec, std::vector<int> hidden, double init_log_sigma, Rng& rng);

  int input_dim() const { return model.input_dim(); }
  int output_dim() const { return model.output_dim(); }

  // State features concatenated with the clipped action.
  static Vec input(const EnvSpec& spec, const EnvState& state, const Vec& action);

  ParamSample eval(const Vec& input, Rng& rng, bool stochastic) const;
  // Squashed mean for one input.
  Vec mean_params(const Vec& input) const;

  Vec squash(const Vec& u) const;
  Vec unsquash(const Vec& c) const;

  Json to_json() const;
  static ParamFunction from_json(const Json& j);

  GaussianMlp model;
  Vec lo;
  Vec hi;
  std::vector<std::string> names;
};

ParamSample param_eval(const ParamFunction& f, const EnvSpec& spec, const EnvState& s, const Vec& a, Rng& rng,
                       bool stochastic);

// G~: the analytic stepper with per-step parameters from f (or a pinned
// constant vector), never with a target gap.
class HybridSimulator : public Simulator {
 public:
  HybridSimulator(EnvSpec spec, const ParamFunction* f, bool stochastic = true);
  // Constant parameters; no parameter function is consulted.
  static HybridSimulator pinned(EnvSpec spec, SimParamVector params);

  const EnvSpec& spec() const override { return spec_; }
  EnvState step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& param_rng,
                StepRecord* record) override;

  bool stochastic() const { return stochastic_; }
  void set_stochastic(bool on) { stochastic_ = on; }
  long steps_taken() const { return steps_; }

 private:
  EnvSpec spec_;
  const ParamFunction* f_ = nullptr;
  bool stochastic_ = true;
  std::optional<SimParamVector> pinned_;
  long steps_ = 0;
};

struct TrajectoryLogProb {
  double total = 0.0;
  double initial = 0.0;      // log p0(s0)
  double policy = 0.0;       // sum log pi(a_t | o_t)
  double param = 0.0;        // sum log f(c_t | s_t, a_t)
  double dynamics = 0.0;     // torque noise draws, standard-normal density of z
  double observation = 0.0;  // additive observation noise, o_0 included
};

// log p_{pi,f}(tau). f may be null for trajectories without per-step
// parameters. Deterministic factors contribute 0.
TrajectoryLogProb trajectory_log_prob(const Trajectory& traj, const Actor& policy, const ParamFunction* f,
                                      const EnvSpec& spec);

}  // namespace advsim
