#include "advsim/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advsim/errors.hpp"

namespace advsim {

// ---- policy / value --------------------------------------------------------

GaussianPolicy::GaussianPolicy(const EnvSpec& spec, std::vector<int> hidden, double init_log_sigma, Rng& rng)
    : model(spec.obs_dim(), {spec.action_dim()}, std::move(hidden), StdMode::Free, init_log_sigma, rng),
      obs_scale(spec.obs_scale) {}

Json GaussianPolicy::to_json() const { return {{"model", model.to_json()}, {"obs_scale", vec_to_json(obs_scale)}}; }

GaussianPolicy GaussianPolicy::from_json(const Json& j) {
  GaussianPolicy p;
  p.model = GaussianMlp::from_json(j.at("model"));
  p.obs_scale = vec_from_json(j.at("obs_scale"));
  if (p.obs_scale.size() != p.model.input_dim()) throw ConfigError("policy checkpoint: obs_scale size mismatch");
  return p;
}

ValueFunction::ValueFunction(int input_dim, const std::vector<int>& hidden, Rng& rng) {
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  net = MlpNet(sizes, rng, 1.0);
}

ActorStep PolicyActor::act(const Vec& obs, Rng& rng) const {
  GaussianHead head = policy_->head(obs);
  switch (mode_) {
    case ActionMode::Stochastic: {
      GaussianDraw d = gaussian_sample(head, rng);
      return {std::move(d.sample), d.log_prob};
    }
    case ActionMode::Deterministic:
      return {head.mu, 0.0};
    case ActionMode::Exploration: {
      GaussianHead explore(head.mu, Vec::Constant(head.dim(), std::log(exploration_std_)));
      GaussianDraw d = gaussian_sample(explore, rng);
      return {std::move(d.sample), d.log_prob};
    }
  }
  return {head.mu, 0.0};
}

double PolicyActor::log_prob(const Vec& obs, const Vec& sample) const {
  GaussianHead head = policy_->head(obs);
  switch (mode_) {
    case ActionMode::Stochastic:
      return gaussian_log_prob(head, sample);
    case ActionMode::Deterministic:
      return 0.0;
    case ActionMode::Exploration:
      return gaussian_log_prob(GaussianHead(head.mu, Vec::Constant(head.dim(), std::log(exploration_std_))), sample);
  }
  return 0.0;
}

ActorStep ReplayActor::act(const Vec& obs, Rng& /*rng*/) const {
  if (cursor_ < actions_.size()) return {actions_[cursor_++], 0.0};
  return {Vec::Zero(actions_.empty() ? obs.size() : actions_.front().size()), 0.0};
}

// ---- rollouts ----------------------------------------------------------------

RolloutRngs RolloutRngs::from_seed(std::uint64_t seed) {
  return {Rng::stream(seed, "env"), Rng::stream(seed, "policy"), Rng::stream(seed, "param_fn")};
}

Trajectory run_episode(Simulator& sim, const Actor& actor, RolloutRngs& rngs, int episode_id,
                       const EpisodeOptions& options) {
  const EnvSpec& spec = sim.spec();
  const int max_steps = options.max_steps > 0 ? options.max_steps : spec.max_steps;
  Trajectory traj;
  traj.episode_id = episode_id;
  traj.has_intermediates = options.record_intermediates;

  sim.begin_episode(rngs.param);
  EnvState state = options.initial_state != nullptr ? *options.initial_state : sample_initial_state(spec, rngs.env);
  state.t = 0;
  traj.initial_state = state.flat();
  Vec noise;
  Vec obs = observe(spec, state, rngs.env, options.observation_noise, &noise);
  traj.initial_obs_noise = noise;

  while (true) {
    ActorStep step = actor.act(obs, rngs.policy);
    StepRecord record;
    EnvState next;
    try {
      next = sim.step(state, step.sample, rngs.env, rngs.param, &record);
    } catch (const SimulationDiverged&) {
      traj.diverged = true;
      traj.fell = true;
      if (!traj.steps.empty()) traj.steps.back().done = true;
      break;
    }
    Transition tr;
    tr.obs = obs;
    tr.action = record.command;
    tr.next_obs = observe(spec, next, rngs.env, options.observation_noise, &noise);
    tr.reward = task_reward(spec.reward, spec, state, record.command, next);
    const bool unhealthy = is_unhealthy(spec, next);
    tr.done = unhealthy || next.t >= max_steps;
    if (options.record_intermediates) {
      tr.state = state.flat();
      tr.next_state = next.flat();
      tr.action_sample = step.sample;
      tr.action_log_prob = step.log_prob;
      tr.param_input = std::move(record.param_input);
      tr.param_sample = std::move(record.param_sample);
      tr.params = std::move(record.params);
      tr.param_log_prob = record.param_log_prob;
      tr.torque_noise = std::move(record.torque_noise);
      tr.next_obs_noise = noise;
    } else if (record.param_sample.size() > 0) {
      // The parameter-function learner needs these even without full records.
      tr.param_input = std::move(record.param_input);
      tr.param_sample = std::move(record.param_sample);
      tr.params = std::move(record.params);
      tr.param_log_prob = record.param_log_prob;
      tr.action_sample = step.sample;
      tr.action_log_prob = step.log_prob;
    } else {
      tr.action_sample = step.sample;
      tr.action_log_prob = step.log_prob;
    }
    obs = tr.next_obs;
    state = next;
    const bool done = tr.done;
    traj.steps.push_back(std::move(tr));
    if (done) {
      traj.fell = unhealthy;
      break;
    }
  }
  return traj;
}

std::vector<Trajectory> collect_rollouts(Simulator& sim, const Actor& actor, int n_episodes, RolloutRngs& rngs,
                                         int first_episode_id, long min_steps) {
  std::vector<Trajectory> out;
  long steps = 0;
  int id = first_episode_id;
  while (min_steps > 0 ? steps < min_steps : static_cast<int>(out.size()) < n_episodes) {
    out.push_back(run_episode(sim, actor, rngs, id++));
    steps += static_cast<long>(out.back().length());
  }
  return out;
}

double Trajectory::total_reward() const {
  double r = 0.0;
  for (const auto& s : steps) r += s.reward;
  return r;
}

double mean_length(const std::vector<Trajectory>& trajs) {
  if (trajs.empty()) return 0.0;
  return static_cast<double>(total_steps(trajs)) / static_cast<double>(trajs.size());
}

std::size_t total_steps(const std::vector<Trajectory>& trajs) {
  std::size_t n = 0;
  for (const auto& t : trajs) n += t.length();
  return n;
}

std::vector<TransitionTuple> tuples_of(const std::vector<Trajectory>& trajs) {
  std::vector<TransitionTuple> out;
  out.reserve(total_steps(trajs));
  for (const auto& t : trajs) {
    for (const auto& s : t.steps) out.push_back(s.tuple());
  }
  return out;
}

// ---- batches and GAE -------------------------------------------------------

void RolloutBatch::check() const {
  const auto n = rewards.size();
  if (inputs.cols() != n || samples.cols() != n || log_probs.size() != n ||
      static_cast<Eigen::Index>(dones.size()) != n) {
    throw ContractViolation("RolloutBatch: parallel arrays differ in length");
  }
  if (!(gamma > 0.0 && gamma <= 1.0) || !(lambda > 0.0 && lambda <= 1.0)) {
    throw ContractViolation("RolloutBatch: gamma and lambda must lie in (0, 1]");
  }
}

RolloutBatch make_policy_batch(const std::vector<Trajectory>& trajs, const GaussianPolicy& policy, double gamma,
                               double lambda) {
  const auto n = static_cast<Eigen::Index>(total_steps(trajs));
  RolloutBatch b;
  b.gamma = gamma;
  b.lambda = lambda;
  b.inputs.resize(policy.model.input_dim(), n);
  b.samples.resize(policy.model.output_dim(), n);
  b.log_probs.resize(n);
  b.rewards.resize(n);
  b.dones.reserve(static_cast<std::size_t>(n));
  Eigen::Index col = 0;
  for (const auto& t : trajs) {
    if (t.steps.empty()) continue;
    b.episode_starts.push_back(static_cast<std::size_t>(col));
    for (const auto& s : t.steps) {
      b.inputs.col(col) = policy.input(s.obs);
      b.samples.col(col) = s.action_sample;
      b.log_probs[col] = s.action_log_prob;
      b.rewards[col] = s.reward;
      b.dones.push_back(s.done);
      ++col;
    }
    b.dones.back() = true;
  }
  return b;
}

GaeResult compute_gae(const Vec& rewards, const Vec& values, const std::vector<bool>& dones, double gamma,
                      double lambda) {
  const Eigen::Index T = rewards.size();
  if (values.size() != T + 1 || static_cast<Eigen::Index>(dones.size()) != T) {
    throw ContractViolation("compute_gae: values must have T+1 entries and dones T entries");
  }
  GaeResult out{Vec::Zero(T), Vec::Zero(T)};
  double running = 0.0;
  for (Eigen::Index t = T - 1; t >= 0; --t) {
    const double not_done = dones[static_cast<std::size_t>(t)] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * values[t + 1] * not_done - values[t];
    running = delta + gamma * lambda * not_done * running;
    out.advantages[t] = running;
  }
  out.returns = out.advantages + values.head(T);
  return out;
}

void compute_gae(RolloutBatch& batch, const Vec& values) {
  batch.check();
  const auto n = batch.size();
  if (static_cast<std::size_t>(values.size()) != n) throw ContractViolation("compute_gae: one value per step required");
  batch.advantages.resize(static_cast<Eigen::Index>(n));
  batch.returns.resize(static_cast<Eigen::Index>(n));
  for (std::size_t e = 0; e < batch.episode_starts.size(); ++e) {
    const std::size_t start = batch.episode_starts[e];
    const std::size_t end = e + 1 < batch.episode_starts.size() ? batch.episode_starts[e + 1] : n;
    const auto len = static_cast<Eigen::Index>(end - start);
    Vec v(len + 1);
    v.head(len) = values.segment(static_cast<Eigen::Index>(start), len);
    v[len] = 0.0;
    std::vector<bool> d(batch.dones.begin() + static_cast<long>(start), batch.dones.begin() + static_cast<long>(end));
    d.back() = true;
    const GaeResult g = compute_gae(batch.rewards.segment(static_cast<Eigen::Index>(start), len), v, d, batch.gamma,
                                    batch.lambda);
    batch.advantages.segment(static_cast<Eigen::Index>(start), len) = g.advantages;
    batch.returns.segment(static_cast<Eigen::Index>(start), len) = g.returns;
  }
}

// ---- PPO -------------------------------------------------------------------

Vec normalize_advantages(const Vec& advantages) {
  if (advantages.size() == 0) return advantages;
  const double mean = advantages.mean();
  const Vec centered = advantages.array() - mean;
  const double std = std::sqrt(centered.squaredNorm() / static_cast<double>(advantages.size()));
  return centered / std::max(std, 1e-8);
}

bool surrogate_clipped(double ratio, double advantage, double clip) {
  return (advantage > 0.0 && ratio > 1.0 + clip) || (advantage < 0.0 && ratio < 1.0 - clip);
}

SurrogateResult clipped_surrogate(GaussianMlp& agent, const Mat& inputs, const Mat& samples, const Vec& old_log_probs,
                                  const Vec& advantages, double clip, double entropy_coef) {
  const Vec logp = agent.log_prob(inputs, samples);
  const double n = static_cast<double>(logp.size());
  SurrogateResult r;
  r.ratio = (logp - old_log_probs).array().exp();
  Vec weights(logp.size());
  double objective = 0.0;
  for (Eigen::Index i = 0; i < logp.size(); ++i) {
    const double rho = r.ratio[i];
    const double a = advantages[i];
    const double clipped_rho = std::clamp(rho, 1.0 - clip, 1.0 + clip);
    objective += std::min(rho * a, clipped_rho * a);
    // d(rho A)/d logp = rho A; the clipped branch is constant in the parameters.
    weights[i] = surrogate_clipped(rho, a, clip) ? 0.0 : -rho * a / n;
  }
  const double entropy = agent.cached_entropy();
  r.loss = -objective / n - entropy_coef * entropy;
  r.grad = agent.log_prob_gradient(weights, -entropy_coef / n);
  return r;
}

PpoTrainer::PpoTrainer(GaussianMlp& agent, MlpNet& value, PpoConfig config)
    : agent_(&agent),
      value_(&value),
      config_(config),
      agent_opt_(agent.num_params(), config.policy_lr),
      value_opt_(value.num_params(), config.value_lr) {}

namespace {

std::vector<Eigen::Index> shuffled(Eigen::Index n, Rng& rng) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng.engine());
  return idx;
}

Mat gather(const Mat& m, const std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end) {
  Mat out(m.rows(), static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out.col(static_cast<Eigen::Index>(k - begin)) = m.col(idx[k]);
  return out;
}

Vec gather(const Vec& v, const std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end) {
  Vec out(static_cast<Eigen::Index>(end - begin));
  for (std::size_t k = begin; k < end; ++k) out[static_cast<Eigen::Index>(k - begin)] = v[idx[k]];
  return out;
}

double value_step(MlpNet& value, Adam& opt, const Mat& inputs, const Vec& targets, double max_grad_norm) {
  const Mat pred = value.forward(inputs);
  const Vec diff = pred.row(0).transpose() - targets;
  const double n = static_cast<double>(diff.size());
  const double loss = 0.5 * diff.squaredNorm() / n;
  Vec grad = value.backward(Mat((diff / n).transpose())).flatten();
  clip_grad_norm(grad, max_grad_norm);
  Vec params = value.parameters();
  opt.step(params, grad);
  value.set_parameters(params);
  return loss;
}

}  // namespace

double PpoTrainer::fit_value(RolloutBatch& batch, int epochs, Rng& rng) {
  if (batch.returns.size() != static_cast<Eigen::Index>(batch.size())) {
    compute_gae(batch, value_->predict(batch.inputs).row(0).transpose());
  }
  double loss = 0.0;
  const auto n = static_cast<std::size_t>(batch.size());
  const auto mb = static_cast<std::size_t>(std::max(1, config_.minibatch));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const auto idx = shuffled(static_cast<Eigen::Index>(n), rng);
    for (std::size_t begin = 0; begin < n; begin += mb) {
      const std::size_t end = std::min(n, begin + mb);
      loss = value_step(*value_, value_opt_, gather(batch.inputs, idx, begin, end), gather(batch.returns, idx, begin, end),
                        config_.max_grad_norm);
    }
  }
  return loss;
}

PpoDiagnostics PpoTrainer::update(RolloutBatch& batch, Rng& rng) {
  batch.check();
  PpoDiagnostics diag;
  const auto n = static_cast<std::size_t>(batch.size());
  if (n == 0) return diag;

  compute_gae(batch, value_->predict(batch.inputs).row(0).transpose());
  const Vec adv = normalize_advantages(batch.advantages);

  const Vec agent_backup = agent_->parameters();
  const Vec value_backup = value_->parameters();
  const Adam agent_opt_backup = agent_opt_;
  const Adam value_opt_backup = value_opt_;

  {
    const SurrogateResult start = clipped_surrogate(*agent_, batch.inputs, batch.samples, batch.log_probs, adv,
                                                    config_.clip, 0.0);
    diag.surrogate_at_start = -start.loss;
  }

  const auto mb = static_cast<std::size_t>(std::max(1, config_.minibatch));
  double value_loss = 0.0;
  bool finite = true;
  for (int epoch = 0; epoch < config_.epochs && finite; ++epoch) {
    const auto idx = shuffled(static_cast<Eigen::Index>(n), rng);
    for (std::size_t begin = 0; begin < n; begin += mb) {
      const std::size_t end = std::min(n, begin + mb);
      SurrogateResult s = clipped_surrogate(*agent_, gather(batch.inputs, idx, begin, end),
                                            gather(batch.samples, idx, begin, end), gather(batch.log_probs, idx, begin, end),
                                            gather(adv, idx, begin, end), config_.clip, config_.entropy_coef);
      if (!std::isfinite(s.loss) || !s.grad.allFinite()) {
        finite = false;
        break;
      }
      clip_grad_norm(s.grad, config_.max_grad_norm);
      Vec params = agent_->parameters();
      agent_opt_.step(params, s.grad);
      agent_->set_parameters(params);

      value_loss = value_step(*value_, value_opt_, gather(batch.inputs, idx, begin, end),
                              gather(batch.returns, idx, begin, end), config_.max_grad_norm);
      if (!std::isfinite(value_loss)) {
        finite = false;
        break;
      }
    }
  }

  if (!finite || !agent_->parameters().allFinite()) {
    agent_->set_parameters(agent_backup);
    value_->set_parameters(value_backup);
    agent_opt_ = agent_opt_backup;
    value_opt_ = value_opt_backup;
    diag.aborted = true;
    return diag;
  }

  const Vec logp = agent_->log_prob(batch.inputs, batch.samples);
  const Vec log_ratio = logp - batch.log_probs;
  const Vec ratio = log_ratio.array().exp();
  diag.mean_ratio = ratio.mean();
  diag.max_ratio_deviation = (ratio.array() - 1.0).abs().maxCoeff();
  diag.clip_fraction = ((ratio.array() - 1.0).abs() > config_.clip).cast<double>().mean();
  // k3 estimator: E[(rho - 1) - log rho] >= 0.
  diag.approx_kl = ((ratio.array() - 1.0) - log_ratio.array()).mean();
  diag.entropy = agent_->cached_entropy();
  diag.value_loss = value_loss;
  return diag;
}

// ---- training loop ---------------------------------------------------------

std::vector<TrainingLogRow> train_policy(GaussianPolicy& policy, ValueFunction& value, Simulator& sim,
                                         const PolicyTrainConfig& config, RolloutRngs& rngs,
                                         const TrainingCallback& callback) {
  std::vector<TrainingLogRow> log;
  PpoTrainer trainer(policy.model, value.net, config.ppo);
  Rng update_rng = Rng(rngs.policy.next_u64());
  long episodes = 0;
  int next_id = 0;
  for (int it = 0; it < config.iterations; ++it) {
    if (config.episode_budget >= 0 && episodes >= config.episode_budget) break;
    PolicyActor actor(policy, ActionMode::Stochastic);
    std::vector<Trajectory> trajs;
    long steps = 0;
    while (steps < config.steps_per_iter) {
      if (config.episode_budget >= 0 && episodes >= config.episode_budget) break;
      trajs.push_back(run_episode(sim, actor, rngs, next_id++, {true, false}));
      steps += static_cast<long>(trajs.back().length());
      ++episodes;
    }
    if (trajs.empty()) break;
    RolloutBatch batch = make_policy_batch(trajs, policy, config.ppo.gamma, config.ppo.lambda);
    if (it == 0 && config.value_warmup_epochs > 0) trainer.fit_value(batch, config.value_warmup_epochs, update_rng);
    TrainingLogRow row;
    row.iteration = it;
    row.ppo = trainer.update(batch, update_rng);
    double total = 0.0;
    for (const auto& t : trajs) total += t.total_reward();
    row.mean_return = total / static_cast<double>(trajs.size());
    row.mean_length = mean_length(trajs);
    row.episodes = episodes;
    if (callback) callback(row);
    log.push_back(row);
  }
  return log;
}

EvalStats evaluate_policy(Simulator& sim, const GaussianPolicy& policy, int episodes, std::uint64_t seed) {
  RolloutRngs rngs = RolloutRngs::from_seed(seed);
  PolicyActor actor(policy, ActionMode::Deterministic);
  EvalStats stats;
  double len = 0.0;
  for (int e = 0; e < episodes; ++e) {
    const Trajectory t = run_episode(sim, actor, rngs, e, {true, false});
    stats.returns.push_back(t.total_reward());
    len += static_cast<double>(t.length());
  }
  const double n = static_cast<double>(episodes);
  stats.mean_return = std::accumulate(stats.returns.begin(), stats.returns.end(), 0.0) / n;
  double var = 0.0;
  for (double r : stats.returns) var += (r - stats.mean_return) * (r - stats.mean_return);
  stats.std_return = std::sqrt(var / n);
  stats.mean_length = len / n;
  return stats;
}

}  // namespace advsim
