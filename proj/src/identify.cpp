#include "advsim/identify.hpp"

#include <cmath>
#include <deque>
#include <numeric>

#include "advsim/errors.hpp"

namespace advsim {

void TargetDataset::finalize() {
  if (trajectories.empty() || advsim::total_steps(trajectories) == 0) {
    throw TrainingError("target dataset holds no transitions; the behavior policy fails immediately in the target");
  }
  l_R = mean_length(trajectories);
}

TargetDataset collect_target_data(const GaussianPolicy& behavior, Environment& target, int n_trajectories,
                                  double noise_std, std::uint64_t seed) {
  if (n_trajectories < 1) throw ConfigError("collect_target_data: need at least one trajectory");
  const ActionMode mode = noise_std > 0.0 ? ActionMode::Exploration : ActionMode::Deterministic;
  PolicyActor actor(behavior, mode, noise_std);
  RolloutRngs rngs = RolloutRngs::from_seed(seed);
  TargetDataset data;
  for (int i = 0; i < n_trajectories; ++i) {
    data.trajectories.push_back(run_episode(target, actor, rngs, i, {true, false}));
  }
  data.finalize();
  data.provenance = {{"env", target.spec().name},
                     {"gap", gap_name(target.gap().kind)},
                     {"seed", seed},
                     {"trajectories", n_trajectories},
                     {"exploration_std", noise_std}};
  return data;
}

double gan_reward(double d) {
  const double c = clamp_score(d);
  return std::log(c / (1.0 - c));
}

double alive_bonus(double l_i, double l_R) {
  if (!(l_i > 0.0)) throw TrainingError("alive bonus: no simulated steps in this iteration");
  if (!(l_R > 0.0)) throw TrainingError("alive bonus: target mean length must be positive");
  return std::log(l_i / l_R);
}

Json to_json(const IdentifyConfig& c) {
  return {{"iterations", c.iterations},
          {"trajectories_per_iter", c.trajectories_per_iter},
          {"hidden", c.hidden},
          {"init_log_sigma", c.init_log_sigma},
          {"exploration_std", c.exploration_std},
          {"use_alive_bonus", c.use_alive_bonus},
          {"early_stop", c.early_stop},
          {"early_stop_window", c.early_stop_window},
          {"early_stop_lo", c.early_stop_lo},
          {"early_stop_hi", c.early_stop_hi},
          {"min_iterations", c.min_iterations},
          {"ppo",
           {{"clip", c.ppo.clip},
            {"epochs", c.ppo.epochs},
            {"minibatch", c.ppo.minibatch},
            {"policy_lr", c.ppo.policy_lr},
            {"value_lr", c.ppo.value_lr},
            {"gamma", c.ppo.gamma},
            {"lambda", c.ppo.lambda},
            {"entropy_coef", c.ppo.entropy_coef},
            {"max_grad_norm", c.ppo.max_grad_norm}}},
          {"discriminator",
           {{"hidden", c.discriminator.hidden},
            {"epochs", c.discriminator.epochs},
            {"minibatch", c.discriminator.minibatch},
            {"learning_rate", c.discriminator.learning_rate}}}};
}

IdentifyConfig identify_config_from_json(const Json& j, IdentifyConfig c) {
  c.iterations = j.value("iterations", c.iterations);
  c.trajectories_per_iter = j.value("trajectories_per_iter", c.trajectories_per_iter);
  c.hidden = j.value("hidden", c.hidden);
  c.init_log_sigma = j.value("init_log_sigma", c.init_log_sigma);
  c.exploration_std = j.value("exploration_std", c.exploration_std);
  c.use_alive_bonus = j.value("use_alive_bonus", c.use_alive_bonus);
  c.early_stop = j.value("early_stop", c.early_stop);
  c.early_stop_window = j.value("early_stop_window", c.early_stop_window);
  c.early_stop_lo = j.value("early_stop_lo", c.early_stop_lo);
  c.early_stop_hi = j.value("early_stop_hi", c.early_stop_hi);
  c.min_iterations = j.value("min_iterations", c.min_iterations);
  if (j.contains("ppo")) {
    const Json& p = j["ppo"];
    c.ppo.clip = p.value("clip", c.ppo.clip);
    c.ppo.epochs = p.value("epochs", c.ppo.epochs);
    c.ppo.minibatch = p.value("minibatch", c.ppo.minibatch);
    c.ppo.policy_lr = p.value("policy_lr", c.ppo.policy_lr);
    c.ppo.value_lr = p.value("value_lr", c.ppo.value_lr);
    c.ppo.gamma = p.value("gamma", c.ppo.gamma);
    c.ppo.lambda = p.value("lambda", c.ppo.lambda);
    c.ppo.entropy_coef = p.value("entropy_coef", c.ppo.entropy_coef);
    c.ppo.max_grad_norm = p.value("max_grad_norm", c.ppo.max_grad_norm);
  }
  if (j.contains("discriminator")) {
    const Json& d = j["discriminator"];
    c.discriminator.hidden = d.value("hidden", c.discriminator.hidden);
    c.discriminator.epochs = d.value("epochs", c.discriminator.epochs);
    c.discriminator.minibatch = d.value("minibatch", c.discriminator.minibatch);
    c.discriminator.learning_rate = d.value("learning_rate", c.discriminator.learning_rate);
  }
  if (c.iterations < 0 || c.trajectories_per_iter < 1) throw ConfigError("identify: invalid iteration budget");
  return c;
}

void assign_identification_rewards(std::vector<Trajectory>& trajs, const Discriminator& d, double bonus) {
  std::vector<TransitionTuple> tuples = tuples_of(trajs);
  const Vec scores = d.scores(tuples);
  Eigen::Index k = 0;
  for (auto& t : trajs) {
    for (auto& s : t.steps) s.reward = gan_reward(scores[k++]) + bonus;
  }
}

RolloutBatch make_param_batch(const std::vector<Trajectory>& trajs, double gamma, double lambda) {
  const auto n = static_cast<Eigen::Index>(total_steps(trajs));
  RolloutBatch b;
  b.gamma = gamma;
  b.lambda = lambda;
  if (n == 0) return b;
  const Transition* first = nullptr;
  for (const auto& t : trajs) {
    if (!t.steps.empty()) {
      first = &t.steps.front();
      break;
    }
  }
  b.inputs.resize(first->param_input.size(), n);
  b.samples.resize(first->param_sample.size(), n);
  b.log_probs.resize(n);
  b.rewards.resize(n);
  Eigen::Index col = 0;
  for (const auto& t : trajs) {
    if (t.steps.empty()) continue;
    b.episode_starts.push_back(static_cast<std::size_t>(col));
    for (const auto& s : t.steps) {
      if (s.param_sample.size() == 0) throw ContractViolation("make_param_batch: step lacks a parameter sample");
      b.inputs.col(col) = s.param_input;
      b.samples.col(col) = s.param_sample;
      b.log_probs[col] = s.param_log_prob;
      b.rewards[col] = s.reward;
      b.dones.push_back(s.done);
      ++col;
    }
    b.dones.back() = true;
  }
  return b;
}

Mat param_inputs_of(const std::vector<Trajectory>& trajs) {
  std::vector<const Vec*> cols;
  for (const auto& t : trajs) {
    for (const auto& s : t.steps) {
      if (s.param_input.size() > 0) cols.push_back(&s.param_input);
    }
  }
  if (cols.empty()) return Mat();
  Mat m(cols.front()->size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = *cols[i];
  return m;
}

Vec mean_param_output(const ParamFunction& f, const Mat& inputs) {
  if (inputs.cols() == 0) throw ContractViolation("mean_param_output: no inputs");
  Mat mu, log_sigma;
  f.model.heads(inputs, mu, log_sigma);
  Vec sum = Vec::Zero(mu.rows());
  for (Eigen::Index j = 0; j < mu.cols(); ++j) sum += f.squash(mu.col(j));
  return sum / static_cast<double>(mu.cols());
}

IdentificationRun identify(const TargetDataset& dataset, const GaussianPolicy& behavior, const EnvSpec& source,
                           const IdentifyConfig& config, std::uint64_t seed, const IdentifyCallback& callback,
                           const ParamFunction* initial_f) {
  if (dataset.trajectories.empty() || !(dataset.l_R > 0.0)) {
    throw ContractViolation("identify: target dataset is empty or not finalized");
  }
  IdentificationRun run;
  run.config = config;

  Rng init_rng = Rng::stream(seed, "param_fn_init");
  run.param_fn = initial_f != nullptr ? *initial_f : ParamFunction(source, config.hidden, config.init_log_sigma, init_rng);
  Rng disc_rng = Rng::stream(seed, "discriminator");
  run.discriminator = Discriminator(source.obs_dim(), source.action_dim(), config.discriminator.hidden, disc_rng);
  const std::vector<TransitionTuple> real = dataset.tuples();
  run.discriminator.fit_normalizer(real);
  Adam disc_opt(run.discriminator.net.num_params(), config.discriminator.learning_rate);

  Rng value_rng = Rng::stream(seed, "param_value_init");
  ValueFunction value(run.param_fn.input_dim(), config.hidden, value_rng);
  PpoTrainer trainer(run.param_fn.model, value.net, config.ppo);
  Rng update_rng = Rng::stream(seed, "param_ppo");

  HybridSimulator sim(source, &run.param_fn, true);
  PolicyActor actor(behavior, config.exploration_std > 0.0 ? ActionMode::Exploration : ActionMode::Deterministic,
                    config.exploration_std);
  RolloutRngs rngs = RolloutRngs::from_seed(Rng::stream(seed, "identify_rollouts").next_u64());

  std::deque<double> window;
  double window_sum = 0.0;
  int next_id = 0;
  for (int it = 0; it < config.iterations; ++it) {
    std::vector<Trajectory> trajs;
    trajs.reserve(static_cast<std::size_t>(config.trajectories_per_iter));
    for (int e = 0; e < config.trajectories_per_iter; ++e) {
      trajs.push_back(run_episode(sim, actor, rngs, next_id++, {true, false}));
    }
    const std::vector<TransitionTuple> sim_tuples = tuples_of(trajs);
    if (sim_tuples.empty()) throw TrainingError("identify: simulated rollouts produced no steps");

    IdentifyRow row;
    row.iteration = it;
    const auto losses = train_discriminator(run.discriminator, real, sim_tuples, config.discriminator, disc_rng, &disc_opt);
    row.disc_loss = losses.empty() ? 0.0 : losses.back();
    row.sim_length = mean_length(trajs);
    row.alive_bonus = config.use_alive_bonus ? alive_bonus(row.sim_length, dataset.l_R) : 0.0;
    assign_identification_rewards(trajs, run.discriminator, row.alive_bonus);

    const Vec sim_scores = run.discriminator.scores(sim_tuples);
    row.sim_score = sim_scores.mean();
    row.real_score = run.discriminator.scores(real).mean();

    RolloutBatch batch = make_param_batch(trajs, config.ppo.gamma, config.ppo.lambda);
    row.mean_reward = batch.rewards.mean();
    const Mat inputs = batch.inputs;

    const Vec before = run.param_fn.model.parameters();
    const PpoDiagnostics diag = trainer.update(batch, update_rng);
    if (diag.aborted || !run.param_fn.model.parameters().allFinite()) {
      run.param_fn.model.set_parameters(before);
      run.aborted = true;
      break;
    }
    row.approx_kl = diag.approx_kl;
    row.entropy = diag.entropy;
    row.mean_params = mean_param_output(run.param_fn, inputs);
    run.visited_inputs_mean_params = row.mean_params;
    run.rows.push_back(row);
    if (callback) callback(row);

    window.push_back(row.sim_score);
    window_sum += row.sim_score;
    if (static_cast<int>(window.size()) > config.early_stop_window) {
      window_sum -= window.front();
      window.pop_front();
    }
    if (config.early_stop && static_cast<int>(window.size()) == config.early_stop_window &&
        it + 1 >= config.min_iterations) {
      const double avg = window_sum / static_cast<double>(window.size());
      if (avg >= config.early_stop_lo && avg <= config.early_stop_hi) {
        run.early_stopped = true;
        break;
      }
    }
  }
  return run;
}

GaussianPolicy refine_policy(const ParamFunction& f, const GaussianPolicy& behavior, const EnvSpec& source,
                             const TaskRewardConfig& reward, const RefineConfig& config, std::uint64_t seed,
                             std::vector<TrainingLogRow>* log) {
  GaussianPolicy policy = behavior;
  if (config.train.iterations <= 0) return policy;
  EnvSpec spec = source;
  spec.reward = reward;
  HybridSimulator sim(spec, &f, config.stochastic_params);
  Rng value_rng = Rng::stream(seed, "refine_value_init");
  ValueFunction value(spec.obs_dim(), config.train.hidden, value_rng);
  PolicyTrainConfig train = config.train;
  train.ppo.policy_lr = 0.5 * config.base_policy_lr;
  RolloutRngs rngs = RolloutRngs::from_seed(Rng::stream(seed, "refine_rollouts").next_u64());
  auto rows = train_policy(policy, value, sim, train, rngs);
  if (log != nullptr) *log = std::move(rows);
  return policy;
}

PipelineResult run_pipeline(Environment& target, const GaussianPolicy& behavior, const PipelineConfig& config,
                            std::uint64_t seed) {
  PipelineResult result;
  GaussianPolicy current = behavior;
  const EnvSpec& source = target.spec();
  for (int outer = 0; outer < std::max(1, config.outer_iterations); ++outer) {
    const std::uint64_t s = seed + 7919ULL * static_cast<std::uint64_t>(outer);
    const long before = target.steps_taken();
    result.dataset = collect_target_data(current, target, config.target_trajectories, config.exploration_std,
                                         Rng::stream(s, "collect").next_u64());
    result.target_steps_collect += target.steps_taken() - before;
    const long after_collect = target.steps_taken();
    result.run = identify(result.dataset, current, source, config.identify, s);
    current = refine_policy(result.run.param_fn, current, source, source.reward, config.refine, s);
    result.target_steps_after_collect += target.steps_taken() - after_collect;
  }
  result.policy = std::move(current);
  return result;
}

}  // namespace advsim
