#pragma once

#include <atomic>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "advsim/nn.hpp"
#include "advsim/rng.hpp"

namespace advsim {

enum class EnvKind { Slider, Pendulum, Hopper1d };

// Simulator parameters the hybrid simulator can override per step.
enum class ParamKind {
  LateralFriction,   // Coulomb coefficient (slider, hopper foot) or joint friction (pendulum)
  Restitution,       // contact damping scale, x nominal k_d
  SpinningFriction,  // hopper tangential damping scale, x nominal
  ContactStiffness,  // contact stiffness scale, x nominal k_p (the ERP knob)
  MotorScale,        // per-actuator tau = c_a * a
};

struct ParamDecl {
  std::string name;
  ParamKind kind = ParamKind::MotorScale;
  int actuator = -1;  // MotorScale only
  double nominal = 1.0;
  double lo = 0.0;  // squashing range of the parameter function
  double hi = 1.0;

  bool is_contact() const { return kind != ParamKind::MotorScale; }
};

// r = w_c + w_v * dir * v_x - w_a |a|^2 - w_j |j|_0 - w_s |qdd|
struct TaskRewardConfig {
  double alive = 1.0;        // w_c
  double velocity = 1.0;     // w_v
  double action = 0.0;       // w_a
  double joint_limit = 0.0;  // w_j
  double smoothness = 0.0;   // w_s
  double direction = 1.0;    // +1 forward, -1 reversed task
};

struct EnvState {
  Vec q;
  Vec qdot;
  int t = 0;

  Vec flat() const;
};

struct EnvSpec {
  std::string name;
  EnvKind kind = EnvKind::Slider;
  double dt = 0.02;  // 50 Hz control, one physics step per control step
  double gravity = 9.8;

  double mass = 1.0;                // kg
  double length = 1.0;              // pendulum length / hopper rest leg length, m
  double friction = 0.5;            // see ParamKind::LateralFriction
  double contact_stiffness = 0.0;   // k_p, N/m
  double contact_damping = 0.0;     // k_d, N*s/m
  double tangential_damping = 0.0;  // N*s/m
  double max_leg_angle = 0.0;       // hopper: leg angle at full hip command, rad
  std::vector<double> motor_gain;   // force (or torque) per unit command

  int max_steps = 100;
  double height_min = 0.4;    // hopper healthy band, m
  double height_max = 2.0;
  double speed_limit = 1e9;   // slider |v| / pendulum |omega| bound

  Vec obs_scale;    // nominal scale per observation dimension
  Vec state_scale;  // nominal scale per parameter-function state feature
  double observation_noise = 0.10;  // additive, std = value * obs_scale
  double torque_noise = 0.05;       // multiplicative (1 + value * z)

  Vec init_mean;       // over flat state (q, qdot)
  Vec init_halfwidth;  // uniform box; 0 means deterministic in that dim

  std::vector<ParamDecl> params;
  TaskRewardConfig reward;

  int nq() const { return static_cast<int>(init_mean.size()) / 2; }
  int state_dim() const { return static_cast<int>(init_mean.size()); }
  int obs_dim() const { return static_cast<int>(obs_scale.size()); }
  int action_dim() const { return static_cast<int>(motor_gain.size()); }
  int feature_dim() const { return static_cast<int>(state_scale.size()); }
  int contact_param_count() const;
  int actuator_param_count() const;
};

// Default specs for "slider", "slider_frictionless", "pendulum", "hopper1d".
EnvSpec make_env_spec(std::string_view name);
void validate(const EnvSpec& spec);

enum class GapKind { None, Deform, Power, Heavy };

struct TargetGap {
  GapKind kind = GapKind::None;
  double back_emf = 0.0;       // Power: tau -= c * qdot_joint (normalized command units)
  std::vector<double> motor_scale;  // Power: per-actuator strength factor (empty = all 1)
  double mass_delta = 0.0;     // Heavy: kg added to the body
  double deform_stiffness_ratio = 0.2;  // Deform: k_p scaled down 5x ...
  double deform_quadratic = 0.0;        // ... plus k_2 * penetration^2, N/m^2
};

GapKind parse_gap_kind(std::string_view name);
std::string gap_name(GapKind kind);
std::string env_name(EnvKind kind);
// Shipped gap magnitudes for an environment.
TargetGap default_gap(const EnvSpec& spec, GapKind kind);

// Per-step simulator parameters, ordered as EnvSpec::params.
struct SimParamVector {
  Vec values;

  static SimParamVector nominal(const EnvSpec& spec);
  bool within_ranges(const EnvSpec& spec) const;
  double get(const EnvSpec& spec, ParamKind kind, int actuator = -1) const;
};

// Constants used by one physics step after applying gap, parameters, and
// any domain-randomization overrides.
struct Physics {
  double mass = 1.0;
  double friction = 0.0;
  double tangential_damping = 0.0;
  double stiffness = 0.0;
  double damping = 0.0;
  double quadratic_stiffness = 0.0;
  double back_emf = 0.0;
  Vec motor_scale;
};

Physics resolve_physics(const EnvSpec& spec, const TargetGap& gap, const SimParamVector* params);

// Intermediates of one step, kept for trajectory log-probabilities.
struct StepRecord {
  Vec command;        // clipped action
  Vec effective;      // command after motor scaling / back-EMF, before noise
  Vec torque_noise;   // z draws (empty when torque noise is off)
  double normal_force = 0.0;
  // Filled by simulators that draw per-step parameters.
  Vec param_input;
  Vec param_sample;   // pre-squash
  Vec params;         // squashed c_t
  double param_log_prob = 0.0;
};

// Clipped command after motor scaling and back-EMF, before torque noise.
Vec effective_command(const EnvSpec& spec, const Physics& physics, const EnvState& state,
                      const Vec& action);

EnvState step_physics(const EnvSpec& spec, const Physics& physics, const EnvState& state,
                      const Vec& action, Rng& rng, StepRecord* record = nullptr);

// Semi-implicit Euler step. params == nullptr uses the spec's nominal constants.
// Throws SimulationDiverged on a non-finite state.
EnvState env_step(const EnvSpec& spec, const TargetGap& gap, const EnvState& state, const Vec& torque,
                  const SimParamVector* params, Rng& rng, StepRecord* record = nullptr);

Vec observe(const EnvSpec& spec, const EnvState& state, Rng& rng, bool noise_on, Vec* noise = nullptr);
// Noise-free observation map g(s).
Vec observation_map(const EnvSpec& spec, const EnvState& state);
// Translation-invariant state features fed to the parameter function.
Vec state_features(const EnvSpec& spec, const EnvState& state);

bool is_terminal(const EnvSpec& spec, const EnvState& state);
// Left the healthy bounds (as opposed to reaching max_steps).
bool is_unhealthy(const EnvSpec& spec, const EnvState& state);

EnvState sample_initial_state(const EnvSpec& spec, Rng& rng);
// log p0(s0) of the uniform initial box; deterministic dims contribute 0.
double initial_state_log_prob(const EnvSpec& spec);

double forward_velocity(const EnvSpec& spec, const EnvState& state);
double task_reward(const TaskRewardConfig& cfg, const EnvSpec& spec, const EnvState& s, const Vec& a,
                   const EnvState& s_next);

// Anything that advances an EnvState: target environments, the hybrid
// simulator, randomized simulators.
class Simulator {
 public:
  virtual ~Simulator() = default;
  virtual const EnvSpec& spec() const = 0;
  // Called once per episode before reset (domain randomization resamples here).
  virtual void begin_episode(Rng& /*param_rng*/) {}
  virtual EnvState step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& param_rng,
                        StepRecord* record) = 0;
};

// Source or target environment handle. Copies share one step counter.
class Environment : public Simulator {
 public:
  Environment(EnvSpec spec, TargetGap gap);

  const EnvSpec& spec() const override { return spec_; }
  const TargetGap& gap() const { return gap_; }
  EnvState step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& param_rng,
                StepRecord* record) override;

  long steps_taken() const { return steps_->load(); }
  long episodes_started() const { return episodes_->load(); }
  void begin_episode(Rng& param_rng) override;

 private:
  EnvSpec spec_;
  TargetGap gap_;
  std::shared_ptr<std::atomic<long>> steps_;
  std::shared_ptr<std::atomic<long>> episodes_;
};

// Throws ConfigError when the gap does not apply to the environment.
Environment make_target(const EnvSpec& spec, const TargetGap& gap);

}  // namespace advsim
