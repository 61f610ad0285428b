#include "advsim/envs.hpp"

#include <algorithm>
#include <cmath>

#include "advsim/errors.hpp"

namespace advsim {

namespace {

Vec vec(std::initializer_list<double> values) {
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
}

bool finite(const EnvState& s) { return s.q.allFinite() && s.qdot.allFinite(); }

EnvSpec slider_spec() {
  EnvSpec s;
  s.name = "slider";
  s.kind = EnvKind::Slider;
  s.mass = 1.0;
  s.friction = 0.5;
  s.motor_gain = {20.0};
  s.max_steps = 100;
  s.speed_limit = 3.0;
  s.obs_scale = vec({2.0, 1.0});
  s.state_scale = vec({1.0});
  s.init_mean = vec({0.0, 0.0});
  s.init_halfwidth = vec({0.0, 0.1});
  s.params = {
      {"lateral_friction", ParamKind::LateralFriction, -1, 0.5, 0.0, 2.0},
      {"motor_scale", ParamKind::MotorScale, 0, 1.0, 0.0, 3.0},
  };
  s.reward = {1.0, 1.0, 0.1, 0.0, 0.01, 1.0};
  return s;
}

// Linear, identifiable variant: no friction, motor scale is the only parameter.
EnvSpec frictionless_slider_spec() {
  EnvSpec s = slider_spec();
  s.name = "slider_frictionless";
  s.friction = 0.0;
  s.params = {{"motor_scale", ParamKind::MotorScale, 0, 1.0, 0.0, 3.0}};
  return s;
}

EnvSpec pendulum_spec() {
  EnvSpec s;
  s.name = "pendulum";
  s.kind = EnvKind::Pendulum;
  s.mass = 1.0;
  s.length = 1.0;
  s.friction = 0.1;  // viscous joint friction, N*m*s/rad
  s.motor_gain = {5.0};
  s.max_steps = 200;
  s.speed_limit = 8.0;
  s.obs_scale = vec({1.0, 1.0, 4.0});
  s.state_scale = vec({1.0, 1.0, 4.0});
  s.init_mean = vec({0.0, 0.0});
  s.init_halfwidth = vec({0.1, 0.1});
  s.params = {
      {"joint_friction", ParamKind::LateralFriction, -1, 0.1, 0.0, 2.0},
      {"motor_scale", ParamKind::MotorScale, 0, 1.0, 0.0, 3.0},
  };
  s.reward = {1.0, 0.5, 0.05, 0.0, 0.0, 1.0};
  return s;
}

EnvSpec hopper_spec() {
  EnvSpec s;
  s.name = "hopper1d";
  s.kind = EnvKind::Hopper1d;
  s.mass = 1.0;
  s.length = 1.0;
  s.friction = 0.8;
  s.contact_stiffness = 15.0;
  s.contact_damping = 1.0;
  s.tangential_damping = 2.0;
  s.max_leg_angle = 0.5;
  s.motor_gain = {6.0, 1.0};  // leg thrust (N), hip (fraction of max_leg_angle)
  s.max_steps = 200;
  s.height_min = 0.4;
  s.height_max = 2.0;
  s.obs_scale = vec({0.5, 1.0, 0.5});
  s.state_scale = vec({1.0, 1.0, 1.0});
  s.init_mean = vec({0.0, 0.8, 0.0, 0.0});
  s.init_halfwidth = vec({0.0, 0.05, 0.1, 0.1});
  s.params = {
      {"lateral_friction", ParamKind::LateralFriction, -1, 0.8, 0.0, 2.0},
      {"restitution", ParamKind::Restitution, -1, 1.0, 0.0, 5.0},
      {"spinning_friction", ParamKind::SpinningFriction, -1, 1.0, 0.0, 5.0},
      {"contact_erp", ParamKind::ContactStiffness, -1, 1.0, 0.05, 20.0},
      {"motor_scale_leg", ParamKind::MotorScale, 0, 1.0, 0.0, 3.0},
      {"motor_scale_hip", ParamKind::MotorScale, 1, 1.0, 0.0, 3.0},
  };
  s.reward = {1.0, 1.0, 0.05, 0.1, 0.005, 1.0};
  return s;
}

// Velocity of the joint driven by each actuator (back-EMF term).
double joint_velocity(const EnvSpec& spec, const EnvState& state, int actuator) {
  switch (spec.kind) {
    case EnvKind::Slider:
    case EnvKind::Pendulum:
      return state.qdot[0];
    case EnvKind::Hopper1d:
      // Leg extension rate; the hip servo has no modelled joint velocity.
      return actuator == 0 ? state.qdot[1] : 0.0;
  }
  return 0.0;
}

}  // namespace

Vec EnvState::flat() const {
  Vec s(q.size() + qdot.size());
  s << q, qdot;
  return s;
}

int EnvSpec::contact_param_count() const {
  return static_cast<int>(std::count_if(params.begin(), params.end(), [](const ParamDecl& d) { return d.is_contact(); }));
}

int EnvSpec::actuator_param_count() const {
  return static_cast<int>(params.size()) - contact_param_count();
}

EnvSpec make_env_spec(std::string_view name) {
  if (name == "slider") return slider_spec();
  if (name == "slider_frictionless") return frictionless_slider_spec();
  if (name == "pendulum") return pendulum_spec();
  if (name == "hopper1d") return hopper_spec();
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

void validate(const EnvSpec& spec) {
  if (!(spec.dt > 0.0)) throw ConfigError(spec.name + ": dt must be positive");
  if (!(spec.mass > 0.0)) throw ConfigError(spec.name + ": mass must be positive");
  if (spec.max_steps <= 0) throw ConfigError(spec.name + ": max_steps must be positive");
  if (spec.init_mean.size() != spec.init_halfwidth.size() || spec.init_mean.size() % 2 != 0) {
    throw ConfigError(spec.name + ": initial-state box has inconsistent dimensions");
  }
  if (spec.motor_gain.empty()) throw ConfigError(spec.name + ": no actuators");
  for (const auto& d : spec.params) {
    if (!(d.lo < d.hi)) throw ConfigError(spec.name + ": parameter " + d.name + " has an empty range");
    if (d.nominal < d.lo || d.nominal > d.hi) {
      throw ConfigError(spec.name + ": nominal " + d.name + " lies outside its range");
    }
    if (d.kind == ParamKind::MotorScale && (d.actuator < 0 || d.actuator >= spec.action_dim())) {
      throw ConfigError(spec.name + ": motor scale " + d.name + " names no actuator");
    }
  }
}

GapKind parse_gap_kind(std::string_view name) {
  if (name == "none" || name == "None") return GapKind::None;
  if (name == "deform" || name == "Deform") return GapKind::Deform;
  if (name == "power" || name == "Power") return GapKind::Power;
  if (name == "heavy" || name == "Heavy") return GapKind::Heavy;
  throw ConfigError("unknown gap kind '" + std::string(name) + "'");
}

std::string gap_name(GapKind kind) {
  switch (kind) {
    case GapKind::None: return "none";
    case GapKind::Deform: return "deform";
    case GapKind::Power: return "power";
    case GapKind::Heavy: return "heavy";
  }
  return "none";
}

std::string env_name(EnvKind kind) {
  switch (kind) {
    case EnvKind::Slider: return "slider";
    case EnvKind::Pendulum: return "pendulum";
    case EnvKind::Hopper1d: return "hopper1d";
  }
  return "slider";
}

TargetGap default_gap(const EnvSpec& spec, GapKind kind) {
  TargetGap gap;
  gap.kind = kind;
  switch (kind) {
    case GapKind::None:
      break;
    case GapKind::Power:
      if (spec.kind == EnvKind::Hopper1d) {
        gap.motor_scale = {0.5, 1.0};
        gap.back_emf = 0.5;
      } else {
        gap.motor_scale = std::vector<double>(spec.motor_gain.size(), 0.5);
      }
      break;
    case GapKind::Heavy:
      gap.mass_delta = spec.kind == EnvKind::Hopper1d ? 0.15 : 0.5 * spec.mass;
      break;
    case GapKind::Deform:
      gap.deform_stiffness_ratio = 0.15;
      gap.deform_quadratic = 20.0;
      break;
  }
  return gap;
}

SimParamVector SimParamVector::nominal(const EnvSpec& spec) {
  SimParamVector p;
  p.values.resize(static_cast<Eigen::Index>(spec.params.size()));
  for (std::size_t i = 0; i < spec.params.size(); ++i) p.values[static_cast<Eigen::Index>(i)] = spec.params[i].nominal;
  return p;
}

bool SimParamVector::within_ranges(const EnvSpec& spec) const {
  if (values.size() != static_cast<Eigen::Index>(spec.params.size())) return false;
  for (std::size_t i = 0; i < spec.params.size(); ++i) {
    const double v = values[static_cast<Eigen::Index>(i)];
    const auto& d = spec.params[i];
    if (!std::isfinite(v) || v < d.lo || v > d.hi) return false;
    if (d.kind == ParamKind::ContactStiffness && !(v > 0.0)) return false;
    if (v < 0.0) return false;
  }
  return true;
}

double SimParamVector::get(const EnvSpec& spec, ParamKind kind, int actuator) const {
  for (std::size_t i = 0; i < spec.params.size(); ++i) {
    const auto& d = spec.params[i];
    if (d.kind == kind && (kind != ParamKind::MotorScale || d.actuator == actuator)) {
      return values[static_cast<Eigen::Index>(i)];
    }
  }
  throw ContractViolation("SimParamVector::get: parameter not declared by " + spec.name);
}

Physics resolve_physics(const EnvSpec& spec, const TargetGap& gap, const SimParamVector* params) {
  Physics p;
  p.mass = spec.mass;
  p.friction = spec.friction;
  p.tangential_damping = spec.tangential_damping;
  p.stiffness = spec.contact_stiffness;
  p.damping = spec.contact_damping;
  p.motor_scale = Vec::Ones(spec.action_dim());

  if (params != nullptr) {
    if (params->values.size() != static_cast<Eigen::Index>(spec.params.size())) {
      throw ContractViolation("simulation parameter vector does not match " + spec.name);
    }
    for (std::size_t i = 0; i < spec.params.size(); ++i) {
      const auto& d = spec.params[i];
      const double v = params->values[static_cast<Eigen::Index>(i)];
      switch (d.kind) {
        case ParamKind::LateralFriction: p.friction = v; break;
        case ParamKind::Restitution: p.damping = spec.contact_damping * v; break;
        case ParamKind::SpinningFriction: p.tangential_damping = spec.tangential_damping * v; break;
        case ParamKind::ContactStiffness: p.stiffness = spec.contact_stiffness * v; break;
        case ParamKind::MotorScale: p.motor_scale[d.actuator] = v; break;
      }
    }
  }

  switch (gap.kind) {
    case GapKind::None:
      break;
    case GapKind::Power:
      for (std::size_t i = 0; i < gap.motor_scale.size(); ++i) {
        p.motor_scale[static_cast<Eigen::Index>(i)] *= gap.motor_scale[i];
      }
      p.back_emf = gap.back_emf;
      break;
    case GapKind::Heavy:
      p.mass += gap.mass_delta;
      break;
    case GapKind::Deform:
      p.stiffness *= gap.deform_stiffness_ratio;
      p.quadratic_stiffness = gap.deform_quadratic;
      break;
  }
  return p;
}

Vec effective_command(const EnvSpec& spec, const Physics& physics, const EnvState& state, const Vec& action) {
  if (action.size() != spec.action_dim()) {
    throw ContractViolation(spec.name + ": action has " + std::to_string(action.size()) +
                            " entries, expected " + std::to_string(spec.action_dim()));
  }
  Vec u = action.cwiseMax(-1.0).cwiseMin(1.0);
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    u[i] = physics.motor_scale[i] * u[i];
    if (physics.back_emf != 0.0) u[i] -= physics.back_emf * joint_velocity(spec, state, static_cast<int>(i));
  }
  return u;
}

EnvState step_physics(const EnvSpec& spec, const Physics& physics, const EnvState& state, const Vec& action,
                      Rng& rng, StepRecord* record) {
  Vec u = effective_command(spec, physics, state, action);
  if (record != nullptr) {
    record->command = action.cwiseMax(-1.0).cwiseMin(1.0);
    record->effective = u;
    record->torque_noise.resize(0);
    record->normal_force = 0.0;
  }
  if (spec.torque_noise > 0.0) {
    const Vec z = rng.normal_vector(u.size());
    u.array() *= 1.0 + spec.torque_noise * z.array();
    if (record != nullptr) record->torque_noise = z;
  }

  const double dt = spec.dt;
  const double m = physics.mass;
  EnvState next = state;
  next.t = state.t + 1;

  switch (spec.kind) {
    case EnvKind::Slider: {
      const double force = spec.motor_gain[0] * u[0];
      const double v_trial = state.qdot[0] + dt * force / m;
      // Implicit Coulomb friction: sticks when the friction impulse can stop it.
      const double dv_friction = dt * physics.friction * spec.gravity;
      double v = 0.0;
      if (std::abs(v_trial) > dv_friction) v = v_trial - std::copysign(dv_friction, v_trial);
      next.qdot[0] = v;
      next.q[0] = state.q[0] + dt * v;
      break;
    }
    case EnvKind::Pendulum: {
      const double inertia = m * spec.length * spec.length;
      const double theta = state.q[0];
      const double omega = state.qdot[0];
      const double torque = spec.motor_gain[0] * u[0] - physics.friction * omega -
                            m * spec.gravity * spec.length * std::sin(theta);
      next.qdot[0] = omega + dt * torque / inertia;
      next.q[0] = theta + dt * next.qdot[0];
      break;
    }
    case EnvKind::Hopper1d: {
      const double z = state.q[1];
      const double vx = state.qdot[0];
      const double vz = state.qdot[1];
      const double penetration = spec.length - z;
      double fn = 0.0;
      double ft = 0.0;
      if (penetration > 0.0) {
        const double phi = std::clamp(spec.max_leg_angle * spec.motor_gain[1] * u[1], -1.2, 1.2);
        const double leg = spec.motor_gain[0] * u[0];
        double axial = physics.stiffness * penetration + physics.quadratic_stiffness * penetration * penetration -
                       physics.damping * vz + leg;
        axial = std::max(0.0, axial);  // the ground never pulls
        fn = axial * std::cos(phi);
        ft = axial * std::sin(phi) - physics.tangential_damping * vx;
        const double limit = physics.friction * fn;
        ft = std::clamp(ft, -limit, limit);
      }
      if (record != nullptr) record->normal_force = fn;
      next.qdot[0] = vx + dt * ft / m;
      next.qdot[1] = vz + dt * (fn / m - spec.gravity);
      next.q[0] = state.q[0] + dt * next.qdot[0];
      next.q[1] = z + dt * next.qdot[1];
      break;
    }
  }
  if (!finite(next)) throw SimulationDiverged(spec.name + ": non-finite state at step " + std::to_string(next.t));
  return next;
}

EnvState env_step(const EnvSpec& spec, const TargetGap& gap, const EnvState& state, const Vec& torque,
                  const SimParamVector* params, Rng& rng, StepRecord* record) {
  if (!finite(state)) throw SimulationDiverged(spec.name + ": non-finite input state");
  const Physics physics = resolve_physics(spec, gap, params);
  return step_physics(spec, physics, state, torque, rng, record);
}

Vec observation_map(const EnvSpec& spec, const EnvState& s) {
  switch (spec.kind) {
    case EnvKind::Slider:
      return vec({s.q[0], s.qdot[0]});
    case EnvKind::Pendulum:
      return vec({std::cos(s.q[0]), std::sin(s.q[0]), s.qdot[0]});
    case EnvKind::Hopper1d:
      return vec({s.q[1], s.qdot[0], s.qdot[1]});
  }
  return {};
}

Vec observe(const EnvSpec& spec, const EnvState& state, Rng& rng, bool noise_on, Vec* noise) {
  Vec o = observation_map(spec, state);
  if (noise_on && spec.observation_noise > 0.0) {
    Vec eps(o.size());
    for (Eigen::Index i = 0; i < o.size(); ++i) eps[i] = spec.observation_noise * spec.obs_scale[i] * rng.normal();
    o += eps;
    if (noise != nullptr) *noise = eps;
  } else if (noise != nullptr) {
    noise->resize(0);
  }
  return o;
}

Vec state_features(const EnvSpec& spec, const EnvState& s) {
  Vec f;
  switch (spec.kind) {
    case EnvKind::Slider: f = vec({s.qdot[0]}); break;
    case EnvKind::Pendulum: f = vec({std::cos(s.q[0]), std::sin(s.q[0]), s.qdot[0]}); break;
    case EnvKind::Hopper1d: f = vec({s.q[1], s.qdot[0], s.qdot[1]}); break;
  }
  return f.cwiseQuotient(spec.state_scale);
}

bool is_unhealthy(const EnvSpec& spec, const EnvState& s) {
  if (!finite(s)) return true;
  switch (spec.kind) {
    case EnvKind::Slider:
    case EnvKind::Pendulum:
      return std::abs(s.qdot[0]) > spec.speed_limit;
    case EnvKind::Hopper1d:
      return s.q[1] < spec.height_min || s.q[1] > spec.height_max;
  }
  return false;
}

bool is_terminal(const EnvSpec& spec, const EnvState& s) {
  return is_unhealthy(spec, s) || s.t >= spec.max_steps;
}

EnvState sample_initial_state(const EnvSpec& spec, Rng& rng) {
  const Vec flat = spec.init_mean;
  Vec s(flat.size());
  for (Eigen::Index i = 0; i < flat.size(); ++i) {
    const double hw = spec.init_halfwidth[i];
    s[i] = hw > 0.0 ? rng.uniform(flat[i] - hw, flat[i] + hw) : flat[i];
  }
  EnvState state;
  state.q = s.head(spec.nq());
  state.qdot = s.tail(spec.nq());
  state.t = 0;
  return state;
}

double initial_state_log_prob(const EnvSpec& spec) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < spec.init_halfwidth.size(); ++i) {
    if (spec.init_halfwidth[i] > 0.0) lp -= std::log(2.0 * spec.init_halfwidth[i]);
  }
  return lp;
}

double forward_velocity(const EnvSpec& /*spec*/, const EnvState& s) {
  return s.qdot[0];  // slider v, pendulum omega, hopper v_x
}

double task_reward(const TaskRewardConfig& cfg, const EnvSpec& spec, const EnvState& s, const Vec& a,
                   const EnvState& s_next) {
  const Vec command = a.cwiseMax(-1.0).cwiseMin(1.0);
  double at_limit = 0.0;
  for (Eigen::Index i = 0; i < command.size(); ++i) {
    if (std::abs(command[i]) >= 1.0) at_limit += 1.0;
  }
  const double qdd = ((s_next.qdot - s.qdot) / spec.dt).norm();
  return cfg.alive + cfg.velocity * cfg.direction * forward_velocity(spec, s_next) -
         cfg.action * command.squaredNorm() - cfg.joint_limit * at_limit - cfg.smoothness * qdd;
}

Environment::Environment(EnvSpec spec, TargetGap gap)
    : spec_(std::move(spec)),
      gap_(std::move(gap)),
      steps_(std::make_shared<std::atomic<long>>(0)),
      episodes_(std::make_shared<std::atomic<long>>(0)) {}

EnvState Environment::step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& /*param_rng*/,
                           StepRecord* record) {
  steps_->fetch_add(1);
  return env_step(spec_, gap_, state, action, nullptr, env_rng, record);
}

void Environment::begin_episode(Rng& /*param_rng*/) { episodes_->fetch_add(1); }

Environment make_target(const EnvSpec& spec, const TargetGap& gap) {
  validate(spec);
  switch (gap.kind) {
    case GapKind::None:
    case GapKind::Heavy:
      break;
    case GapKind::Power:
      if (!gap.motor_scale.empty() && gap.motor_scale.size() != spec.motor_gain.size()) {
        throw ConfigError("power gap: motor_scale needs one entry per actuator of " + spec.name);
      }
      break;
    case GapKind::Deform:
      if (spec.kind != EnvKind::Hopper1d) {
        throw ConfigError("deform gap needs a penalty-contact environment; " + spec.name + " has none");
      }
      break;
  }
  return Environment(spec, gap);
}

}  // namespace advsim
