#include "advsim/hybrid.hpp"

#include <algorithm>
#include <cmath>

#include "advsim/errors.hpp"

namespace advsim {

namespace {

double sigmoid(double u) {
  if (u >= 0.0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

std::vector<int> branch_dims_for(const EnvSpec& spec) {
  // Outputs follow spec.params order, so contact parameters must lead.
  bool seen_actuator = false;
  for (const auto& d : spec.params) {
    if (!d.is_contact()) seen_actuator = true;
    else if (seen_actuator) throw ConfigError(spec.name + ": contact parameters must precede motor scales");
  }
  std::vector<int> dims;
  if (spec.contact_param_count() > 0) dims.push_back(spec.contact_param_count());
  if (spec.actuator_param_count() > 0) dims.push_back(spec.actuator_param_count());
  if (dims.empty()) throw ConfigError(spec.name + ": no simulation parameters declared");
  return dims;
}

}  // namespace

ParamFunction::ParamFunction(const EnvSpec& spec, std::vector<int> hidden, double init_log_sigma, Rng& rng)
    : model(spec.feature_dim() + spec.action_dim(), branch_dims_for(spec), std::move(hidden),
            StdMode::StateDependent, init_log_sigma, rng) {
  const auto n = static_cast<Eigen::Index>(spec.params.size());
  lo.resize(n);
  hi.resize(n);
  Vec nominal(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& d = spec.params[static_cast<std::size_t>(i)];
    lo[i] = d.lo;
    hi[i] = d.hi;
    nominal[i] = d.nominal;
    names.push_back(d.name);
  }
  model.set_mean_bias(unsquash(nominal));
}

Vec ParamFunction::input(const EnvSpec& spec, const EnvState& state, const Vec& action) {
  const Vec features = state_features(spec, state);
  Vec x(features.size() + action.size());
  x << features, action.cwiseMax(-1.0).cwiseMin(1.0);
  return x;
}

Vec ParamFunction::squash(const Vec& u) const {
  Vec c(u.size());
  for (Eigen::Index i = 0; i < u.size(); ++i) c[i] = lo[i] + (hi[i] - lo[i]) * sigmoid(u[i]);
  return c;
}

Vec ParamFunction::unsquash(const Vec& c) const {
  Vec u(c.size());
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    double p = (c[i] - lo[i]) / (hi[i] - lo[i]);
    p = std::clamp(p, 1e-9, 1.0 - 1e-9);
    u[i] = std::log(p / (1.0 - p));
  }
  return u;
}

ParamSample ParamFunction::eval(const Vec& x, Rng& rng, bool stochastic) const {
  const GaussianHead head = model.head(x);
  ParamSample out;
  if (stochastic) {
    GaussianDraw draw = gaussian_sample(head, rng);
    out.pre_squash = std::move(draw.sample);
    out.log_prob = draw.log_prob;
  } else {
    out.pre_squash = head.mu;
  }
  out.params.values = squash(out.pre_squash);
  return out;
}

Vec ParamFunction::mean_params(const Vec& x) const { return squash(model.head(x).mu); }

Json ParamFunction::to_json() const {
  return {{"model", model.to_json()}, {"lo", vec_to_json(lo)}, {"hi", vec_to_json(hi)}, {"names", names}};
}

ParamFunction ParamFunction::from_json(const Json& j) {
  ParamFunction f;
  f.model = GaussianMlp::from_json(j.at("model"));
  f.lo = vec_from_json(j.at("lo"));
  f.hi = vec_from_json(j.at("hi"));
  f.names = j.at("names").get<std::vector<std::string>>();
  if (f.lo.size() != f.model.output_dim() || f.hi.size() != f.model.output_dim()) {
    throw ConfigError("parameter function checkpoint: range_map does not match the network output");
  }
  return f;
}

ParamSample param_eval(const ParamFunction& f, const EnvSpec& spec, const EnvState& s, const Vec& a, Rng& rng,
                       bool stochastic) {
  return f.eval(ParamFunction::input(spec, s, a), rng, stochastic);
}

HybridSimulator::HybridSimulator(EnvSpec spec, const ParamFunction* f, bool stochastic)
    : spec_(std::move(spec)), f_(f), stochastic_(stochastic) {
  if (f_ != nullptr && f_->output_dim() != static_cast<int>(spec_.params.size())) {
    throw ContractViolation("parameter function output does not match " + spec_.name + " parameters");
  }
}

HybridSimulator HybridSimulator::pinned(EnvSpec spec, SimParamVector params) {
  if (params.values.size() != static_cast<Eigen::Index>(spec.params.size())) {
    throw ContractViolation("pinned parameter vector does not match " + spec.name);
  }
  HybridSimulator sim(std::move(spec), nullptr, false);
  sim.pinned_ = std::move(params);
  return sim;
}

EnvState HybridSimulator::step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& param_rng,
                               StepRecord* record) {
  ++steps_;
  static const TargetGap kNoGap{};
  if (pinned_) return env_step(spec_, kNoGap, state, action, &*pinned_, env_rng, record);
  if (f_ == nullptr) return env_step(spec_, kNoGap, state, action, nullptr, env_rng, record);

  Vec x = ParamFunction::input(spec_, state, action);
  ParamSample c = f_->eval(x, param_rng, stochastic_);
  EnvState next = env_step(spec_, kNoGap, state, action, &c.params, env_rng, record);
  if (record != nullptr) {
    record->param_input = std::move(x);
    record->param_sample = std::move(c.pre_squash);
    record->params = std::move(c.params.values);
    record->param_log_prob = c.log_prob;
  }
  return next;
}

TrajectoryLogProb trajectory_log_prob(const Trajectory& traj, const Actor& policy, const ParamFunction* f,
                                      const EnvSpec& spec) {
  if (!traj.has_intermediates) throw ContractViolation("trajectory_log_prob needs recorded intermediates");
  TrajectoryLogProb lp;
  lp.initial = initial_state_log_prob(spec);

  auto obs_noise_lp = [&](const Vec& eps) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < eps.size(); ++i) {
      s += normal_log_density(eps[i], spec.observation_noise * spec.obs_scale[i]);
    }
    return s;
  };
  lp.observation += obs_noise_lp(traj.initial_obs_noise);

  for (const auto& step : traj.steps) {
    if (step.action_sample.size() == 0) throw ContractViolation("trajectory_log_prob: missing action sample");
    lp.policy += policy.log_prob(step.obs, step.action_sample);
    if (f != nullptr) {
      if (step.param_sample.size() == 0) throw ContractViolation("trajectory_log_prob: missing parameter sample");
      lp.param += gaussian_log_prob(f->model.head(step.param_input), step.param_sample);
    }
    for (Eigen::Index i = 0; i < step.torque_noise.size(); ++i) lp.dynamics += normal_log_density(step.torque_noise[i], 1.0);
    lp.observation += obs_noise_lp(step.next_obs_noise);
  }
  lp.total = lp.initial + lp.policy + lp.param + lp.dynamics + lp.observation;
  return lp;
}

}  // namespace advsim
