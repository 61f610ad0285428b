#include "advsim/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "advsim/errors.hpp"

namespace advsim {

// ---- domain randomization --------------------------------------------------

DrRanges DrRanges::degenerate() {
  DrRanges r;
  r.mass_ratio = {1.0, 1.0};
  r.motor_scale = {1.0, 1.0};
  r.motor_friction = {0.0, 0.0};
  r.lateral_friction = {-1.0, -1.0};  // negative: keep the spec's nominal
  r.spinning_friction_scale = {1.0, 1.0};
  r.restitution_scale = {1.0, 1.0};
  r.contact_stiffness_scale = {1.0, 1.0};
  return r;
}

namespace {

double draw(const Range& r, Rng& rng) {
  if (r.lo > r.hi) throw ConfigError("domain randomization: range has lo > hi");
  return rng.uniform(r.lo, r.hi);
}

}  // namespace

DrSample dr_sample(const DrRanges& ranges, const EnvSpec& spec, Rng& rng) {
  DrSample s;
  s.mass_ratio = draw(ranges.mass_ratio, rng);
  s.motor_friction = draw(ranges.motor_friction, rng);
  s.params = SimParamVector::nominal(spec);
  for (std::size_t i = 0; i < spec.params.size(); ++i) {
    double& v = s.params.values[static_cast<Eigen::Index>(i)];
    switch (spec.params[i].kind) {
      case ParamKind::LateralFriction:
        if (ranges.lateral_friction.lo >= 0.0) v = draw(ranges.lateral_friction, rng);
        break;
      case ParamKind::Restitution: v = draw(ranges.restitution_scale, rng); break;
      case ParamKind::SpinningFriction: v = draw(ranges.spinning_friction_scale, rng); break;
      case ParamKind::ContactStiffness: v = draw(ranges.contact_stiffness_scale, rng); break;
      case ParamKind::MotorScale: v = draw(ranges.motor_scale, rng); break;
    }
  }
  return s;
}

Physics dr_physics(const EnvSpec& spec, const DrSample& sample) {
  Physics p = resolve_physics(spec, TargetGap{}, &sample.params);
  p.mass *= sample.mass_ratio;
  p.back_emf = sample.motor_friction;
  return p;
}

RandomizedSimulator::RandomizedSimulator(EnvSpec spec, DrRanges ranges)
    : spec_(std::move(spec)), ranges_(ranges) {
  current_.params = SimParamVector::nominal(spec_);
  physics_ = dr_physics(spec_, current_);
}

void RandomizedSimulator::begin_episode(Rng& param_rng) {
  current_ = dr_sample(ranges_, spec_, param_rng);
  physics_ = dr_physics(spec_, current_);
}

EnvState RandomizedSimulator::step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& /*param_rng*/,
                                   StepRecord* record) {
  return step_physics(spec_, physics_, state, action, env_rng, record);
}

GaussianPolicy train_dr_policy(const EnvSpec& source, const DrRanges& ranges, const TaskRewardConfig& reward,
                               const PolicyTrainConfig& config, std::uint64_t seed, const GaussianPolicy* warm_start) {
  EnvSpec spec = source;
  spec.reward = reward;
  Rng init = Rng::stream(seed, "policy_init");
  GaussianPolicy policy = warm_start != nullptr ? *warm_start : GaussianPolicy(spec, config.hidden, config.init_log_sigma, init);
  ValueFunction value(spec.obs_dim(), config.hidden, init);
  RandomizedSimulator sim(spec, ranges);
  RolloutRngs rngs = RolloutRngs::from_seed(seed);
  train_policy(policy, value, sim, config, rngs);
  return policy;
}

GaussianPolicy finetune(const GaussianPolicy& start, Environment& target, const FinetuneConfig& config,
                        std::uint64_t seed) {
  GaussianPolicy policy = start;
  if (config.budget_trajs <= 0) return policy;
  PolicyTrainConfig train = config.train;
  train.episode_budget = config.budget_trajs;
  train.iterations = std::numeric_limits<int>::max();
  train.ppo.policy_lr = config.base_policy_lr;
  Rng value_rng = Rng::stream(seed, "finetune_value_init");
  ValueFunction value(target.spec().obs_dim(), train.hidden, value_rng);
  RolloutRngs rngs = RolloutRngs::from_seed(Rng::stream(seed, "finetune_rollouts").next_u64());
  train_policy(policy, value, target, train, rngs);
  return policy;
}

// ---- fitness ---------------------------------------------------------------

std::vector<Vec> gaussian_smooth(const std::vector<Vec>& seq, double sigma) {
  if (sigma <= 0.0 || seq.size() < 2) return seq;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int k = -radius; k <= radius; ++k) {
    kernel[static_cast<std::size_t>(k + radius)] = std::exp(-0.5 * (k * k) / (sigma * sigma));
  }
  const int n = static_cast<int>(seq.size());
  std::vector<Vec> out(seq.size());
  for (int t = 0; t < n; ++t) {
    Vec acc = Vec::Zero(seq[0].size());
    double wsum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
      const int j = t + k;
      if (j < 0 || j >= n) continue;
      const double w = kernel[static_cast<std::size_t>(k + radius)];
      acc += w * seq[static_cast<std::size_t>(j)];
      wsum += w;
    }
    out[static_cast<std::size_t>(t)] = acc / wsum;
  }
  return out;
}

namespace {

std::vector<Vec> observation_sequence(const Trajectory& t, std::size_t steps, const Vec& scale) {
  std::vector<Vec> seq;
  seq.reserve(steps + 1);
  for (std::size_t i = 0; i < steps; ++i) seq.push_back(t.steps[i].obs.cwiseQuotient(scale));
  seq.push_back(t.steps[steps - 1].next_obs.cwiseQuotient(scale));
  return seq;
}

double lp_norm(const Vec& v, double p) {
  if (p == 2.0) return v.norm();
  if (p == 1.0) return v.lpNorm<1>();
  return std::pow(v.array().abs().pow(p).sum(), 1.0 / p);
}

}  // namespace

double sysid_fitness(const std::vector<Trajectory>& sim, const std::vector<Trajectory>& real, double p,
                     double smooth_sigma, const Vec& obs_scale) {
  if (sim.size() != real.size() || sim.empty()) throw ContractViolation("sysid_fitness: trajectories must pair up");
  if (!(p >= 1.0)) throw ContractViolation("sysid_fitness: p must be >= 1");
  double total = 0.0;
  for (std::size_t k = 0; k < sim.size(); ++k) {
    const std::size_t steps = std::min(sim[k].length(), real[k].length());
    if (steps == 0) {
      total += kSysIdMaxPenalty;
      continue;
    }
    const auto a = gaussian_smooth(observation_sequence(sim[k], steps, obs_scale), smooth_sigma);
    const auto b = gaussian_smooth(observation_sequence(real[k], steps, obs_scale), smooth_sigma);
    double d = 0.0;
    for (std::size_t t = 0; t < a.size(); ++t) d += lp_norm(a[t] - b[t], p);
    d /= static_cast<double>(a.size());
    total += std::isfinite(d) ? std::min(d, kSysIdMaxPenalty) : kSysIdMaxPenalty;
  }
  return total / static_cast<double>(sim.size());
}

// ---- CMA-ES ----------------------------------------------------------------

Cmaes::Cmaes(Vec mean, double sigma, int population, std::uint64_t seed)
    : n_(static_cast<int>(mean.size())), mean_(std::move(mean)), sigma_(sigma), rng_(seed) {
  if (n_ < 1 || !(sigma_ > 0.0)) throw ConfigError("CMA-ES: need a non-empty start point and sigma > 0");
  const double n = n_;
  lambda_ = population > 1 ? population : 4 + static_cast<int>(3.0 * std::log(n));
  mu_ = lambda_ / 2;
  weights_.resize(mu_);
  for (int i = 0; i < mu_; ++i) weights_[i] = std::log(mu_ + 0.5) - std::log(i + 1.0);
  weights_ /= weights_.sum();
  mu_eff_ = 1.0 / weights_.squaredNorm();
  c_sigma_ = (mu_eff_ + 2.0) / (n + mu_eff_ + 5.0);
  d_sigma_ = 1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff_ - 1.0) / (n + 1.0)) - 1.0) + c_sigma_;
  c_c_ = (4.0 + mu_eff_ / n) / (n + 4.0 + 2.0 * mu_eff_ / n);
  c_1_ = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff_);
  c_mu_ = std::min(1.0 - c_1_, 2.0 * (mu_eff_ - 2.0 + 1.0 / mu_eff_) / ((n + 2.0) * (n + 2.0) + mu_eff_));
  chi_n_ = std::sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
  cov_ = Mat::Identity(n_, n_);
  b_ = Mat::Identity(n_, n_);
  d_ = Vec::Ones(n_);
  p_sigma_ = Vec::Zero(n_);
  p_c_ = Vec::Zero(n_);
  best_x_ = mean_;
}

std::vector<Vec> Cmaes::ask() {
  std::vector<Vec> out;
  out.reserve(static_cast<std::size_t>(lambda_));
  for (int k = 0; k < lambda_; ++k) {
    const Vec z = rng_.normal_vector(n_);
    out.push_back(mean_ + sigma_ * (b_ * d_.asDiagonal() * z));
  }
  return out;
}

void Cmaes::tell(const std::vector<Vec>& x, const std::vector<double>& f) {
  if (static_cast<int>(x.size()) != lambda_ || x.size() != f.size()) throw ContractViolation("CMA-ES: tell size mismatch");
  std::vector<int> order(static_cast<std::size_t>(lambda_));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return f[static_cast<std::size_t>(a)] < f[static_cast<std::size_t>(b)]; });
  if (f[static_cast<std::size_t>(order[0])] < best_f_) {
    best_f_ = f[static_cast<std::size_t>(order[0])];
    best_x_ = x[static_cast<std::size_t>(order[0])];
  }

  const Vec old_mean = mean_;
  mean_.setZero();
  for (int i = 0; i < mu_; ++i) mean_ += weights_[i] * x[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  const Vec y = (mean_ - old_mean) / sigma_;

  // C^{-1/2} y
  const Vec c_inv_sqrt_y = b_ * d_.cwiseInverse().asDiagonal() * b_.transpose() * y;
  p_sigma_ = (1.0 - c_sigma_) * p_sigma_ + std::sqrt(c_sigma_ * (2.0 - c_sigma_) * mu_eff_) * c_inv_sqrt_y;
  ++generation_;
  const double ps_norm = p_sigma_.norm();
  const double h_denom = std::sqrt(1.0 - std::pow(1.0 - c_sigma_, 2.0 * generation_));
  const bool h_sigma = ps_norm / h_denom < (1.4 + 2.0 / (n_ + 1.0)) * chi_n_;
  p_c_ = (1.0 - c_c_) * p_c_ + (h_sigma ? std::sqrt(c_c_ * (2.0 - c_c_) * mu_eff_) : 0.0) * y;

  Mat rank_mu = Mat::Zero(n_, n_);
  for (int i = 0; i < mu_; ++i) {
    const Vec yi = (x[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] - old_mean) / sigma_;
    rank_mu += weights_[i] * yi * yi.transpose();
  }
  const double delta_h = h_sigma ? 0.0 : c_c_ * (2.0 - c_c_);
  cov_ = (1.0 - c_1_ - c_mu_) * cov_ + c_1_ * (p_c_ * p_c_.transpose() + delta_h * cov_) + c_mu_ * rank_mu;
  sigma_ *= std::exp((c_sigma_ / d_sigma_) * (ps_norm / chi_n_ - 1.0));

  cov_ = 0.5 * (cov_ + cov_.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(cov_);
  b_ = eig.eigenvectors();
  d_ = eig.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
}

CmaesResult cmaes_minimize(const std::function<double(const Vec&)>& objective, const Vec& x0, double sigma0,
                           int population, int generations, std::uint64_t seed) {
  Cmaes es(x0, sigma0, population, seed);
  CmaesResult result;
  for (int g = 0; g < generations; ++g) {
    const auto xs = es.ask();
    std::vector<double> fs;
    fs.reserve(xs.size());
    for (const auto& x : xs) {
      const double f = objective(x);
      fs.push_back(std::isfinite(f) ? f : kSysIdMaxPenalty);
    }
    es.tell(xs, fs);
    result.history.push_back(es.best_fitness());
    if (es.sigma() < 1e-12) break;
  }
  result.best = es.best();
  result.fitness = es.best_fitness();
  return result;
}

// ---- SysID -----------------------------------------------------------------

Json SysIdResult::to_json() const {
  return {{"names", names}, {"mean", vec_to_json(mean)}, {"log_var", vec_to_json(log_var)}, {"fitness", fitness},
          {"history", history}};
}

namespace {

struct SysIdDecoder {
  Vec lo, hi;
  bool fit_variance;
  double log_std_lo, log_std_hi;

  int dims() const { return static_cast<int>(lo.size()) * (fit_variance ? 2 : 1); }

  // Candidate coordinates live in [0, 1]; the excess outside the box is
  // returned for a quadratic penalty.
  double decode(const Vec& x, Vec& mean, Vec& log_std) const {
    const auto n = lo.size();
    double excess = 0.0;
    mean.resize(n);
    log_std.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = std::clamp(x[i], 0.0, 1.0);
      excess += (x[i] - u) * (x[i] - u);
      mean[i] = lo[i] + (hi[i] - lo[i]) * u;
      if (fit_variance) {
        const double v = std::clamp(x[n + i], 0.0, 1.0);
        excess += (x[n + i] - v) * (x[n + i] - v);
        log_std[i] = std::log(hi[i] - lo[i]) + log_std_lo + (log_std_hi - log_std_lo) * v;
      } else {
        log_std[i] = -std::numeric_limits<double>::infinity();
      }
    }
    return excess;
  }
};

SimParamVector draw_params(const Vec& mean, const Vec& log_std, const Vec& lo, const Vec& hi, const Vec& z) {
  SimParamVector p;
  p.values.resize(mean.size());
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    const double s = std::isfinite(log_std[i]) ? std::exp(log_std[i]) : 0.0;
    p.values[i] = std::clamp(mean[i] + s * z[i], lo[i], hi[i]);
  }
  return p;
}

}  // namespace

SysIdResult cmaes_sysid(const TargetDataset& dataset, const GaussianPolicy& behavior, const EnvSpec& source,
                        const SysIdConfig& config, std::uint64_t seed) {
  if (dataset.trajectories.empty()) throw ContractViolation("cmaes_sysid: empty dataset");
  EnvSpec spec = source;
  spec.observation_noise = 0.0;
  spec.torque_noise = 0.0;
  const auto n = static_cast<Eigen::Index>(spec.params.size());
  SysIdDecoder dec;
  dec.lo.resize(n);
  dec.hi.resize(n);
  Vec x0(n * (config.fit_variance ? 2 : 1));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& d = spec.params[static_cast<std::size_t>(i)];
    dec.lo[i] = d.lo;
    dec.hi[i] = d.hi;
    x0[i] = (d.nominal - d.lo) / (d.hi - d.lo);
    if (config.fit_variance) x0[n + i] = 0.5;
  }
  dec.fit_variance = config.fit_variance;
  dec.log_std_lo = config.log_std_lo;
  dec.log_std_hi = config.log_std_hi;

  std::vector<const Trajectory*> real;
  for (const auto& t : dataset.trajectories) {
    if (t.length() > 0) real.push_back(&t);
    if (static_cast<int>(real.size()) >= config.pairs) break;
  }
  std::vector<Trajectory> real_copy;
  for (const auto* t : real) real_copy.push_back(*t);
  // Common random numbers: every candidate sees the same per-episode z draws.
  Rng crn = Rng::stream(seed, "sysid_crn");
  std::vector<Vec> z;
  for (std::size_t k = 0; k < real.size(); ++k) z.push_back(crn.normal_vector(n));

  const PolicyActor closed(behavior, ActionMode::Deterministic);
  Rng unused(0);
  auto objective = [&](const Vec& x) {
    Vec mean, log_std;
    const double excess = dec.decode(x, mean, log_std);
    std::vector<Trajectory> sim(real.size());
    for (std::size_t k = 0; k < real.size(); ++k) {
      const Trajectory& r = *real[k];
      const SimParamVector params = draw_params(mean, log_std, dec.lo, dec.hi, z[k]);
      EnvState s;
      s.q = r.initial_state.head(spec.nq());
      s.qdot = r.initial_state.tail(spec.nq());
      s.t = 0;
      Vec obs = observation_map(spec, s);
      try {
        for (std::size_t t = 0; t < r.length(); ++t) {
          const Vec a = config.mode == SysIdMode::OpenLoop ? r.steps[t].action : closed.act(obs, unused).sample;
          const EnvState next = env_step(spec, TargetGap{}, s, a, &params, unused, nullptr);
          Transition tr;
          tr.obs = obs;
          tr.action = a;
          tr.next_obs = observation_map(spec, next);
          obs = tr.next_obs;
          s = next;
          sim[k].steps.push_back(std::move(tr));
        }
      } catch (const SimulationDiverged&) {
        // Scored on the prefix that stayed finite.
      }
    }
    return sysid_fitness(sim, real_copy, config.p, config.smooth_sigma, spec.obs_scale) + 1e3 * excess;
  };

  const CmaesResult cr = cmaes_minimize(objective, x0, config.sigma0, config.population, config.generations,
                                        Rng::stream(seed, "cmaes").next_u64());
  SysIdResult result;
  Vec log_std;
  dec.decode(cr.best, result.mean, log_std);
  result.log_var = config.fit_variance ? Vec(2.0 * log_std) : Vec::Constant(n, -std::numeric_limits<double>::infinity());
  result.fitness = cr.fitness;
  result.history = cr.history;
  for (const auto& d : spec.params) result.names.push_back(d.name);
  return result;
}

SysIdSimulator::SysIdSimulator(EnvSpec spec, SysIdResult result) : spec_(std::move(spec)), result_(std::move(result)) {
  if (result_.mean.size() != static_cast<Eigen::Index>(spec_.params.size())) {
    throw ContractViolation("SysIdSimulator: result does not match " + spec_.name);
  }
  current_.values = result_.mean;
}

void SysIdSimulator::begin_episode(Rng& param_rng) {
  const auto n = result_.mean.size();
  Vec lo(n), hi(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    lo[i] = spec_.params[static_cast<std::size_t>(i)].lo;
    hi[i] = spec_.params[static_cast<std::size_t>(i)].hi;
  }
  current_ = draw_params(result_.mean, 0.5 * result_.log_var, lo, hi, param_rng.normal_vector(n));
}

EnvState SysIdSimulator::step(const EnvState& state, const Vec& action, Rng& env_rng, Rng& /*param_rng*/,
                              StepRecord* record) {
  return env_step(spec_, TargetGap{}, state, action, &current_, env_rng, record);
}

GaussianPolicy refine_under_sysid(const SysIdResult& result, const GaussianPolicy& behavior, const EnvSpec& source,
                                  const RefineConfig& config, std::uint64_t seed) {
  GaussianPolicy policy = behavior;
  if (config.train.iterations <= 0) return policy;
  SysIdSimulator sim(source, result);
  Rng value_rng = Rng::stream(seed, "refine_value_init");
  ValueFunction value(source.obs_dim(), config.train.hidden, value_rng);
  PolicyTrainConfig train = config.train;
  train.ppo.policy_lr = 0.5 * config.base_policy_lr;
  RolloutRngs rngs = RolloutRngs::from_seed(Rng::stream(seed, "refine_rollouts").next_u64());
  train_policy(policy, value, sim, train, rngs);
  return policy;
}

}  // namespace advsim
