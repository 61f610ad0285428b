#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "advsim/errors.hpp"
#include "advsim/ppo.hpp"
#include "fd.hpp"

using namespace advsim;

namespace {

// A_t = sum_k (gamma lambda)^k delta_{t+k} written as a double sum.
Vec brute_force_gae(const Vec& r, const Vec& v, double gamma, double lambda) {
  const Eigen::Index T = r.size();
  Vec a = Vec::Zero(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    for (Eigen::Index k = 0; t + k < T; ++k) {
      const Eigen::Index j = t + k;
      const double next = j + 1 < T ? v[j + 1] : 0.0;
      const double delta = r[j] + gamma * next - v[j];
      a[t] += std::pow(gamma * lambda, static_cast<double>(k)) * delta;
    }
  }
  return a;
}

// Single-step episodes of a 1D bandit; the input is a constant 1.
RolloutBatch bandit_batch(GaussianMlp& agent, Rng& rng, int n, double target) {
  RolloutBatch b;
  b.inputs = Mat::Ones(1, n);
  b.samples.resize(1, n);
  b.log_probs.resize(n);
  b.rewards.resize(n);
  const GaussianHead head = agent.head(Vec::Ones(1));
  for (int i = 0; i < n; ++i) {
    const GaussianDraw d = gaussian_sample(head, rng);
    b.samples(0, i) = d.sample[0];
    b.log_probs[i] = d.log_prob;
    b.rewards[i] = -(d.sample[0] - target) * (d.sample[0] - target);
    b.dones.push_back(true);
    b.episode_starts.push_back(static_cast<std::size_t>(i));
  }
  return b;
}

}  // namespace

TEST_CASE("GAE trivial cases") {
  const GaeResult one = compute_gae(Vec::Ones(1), Vec::Zero(2), {true}, 1.0, 1.0);
  CHECK(one.advantages[0] == 1.0);
  const GaeResult zero = compute_gae(Vec::Zero(5), Vec::Zero(6), {false, false, false, false, true}, 0.99, 0.95);
  CHECK(zero.advantages.isZero(0.0));
  CHECK_THROWS_AS(compute_gae(Vec::Zero(3), Vec::Zero(3), {false, false, true}, 0.99, 0.95), ContractViolation);
}

TEST_CASE("GAE on a 3-step fixture matches the brute-force double sum") {
  Vec r(3), v(4);
  r << 1.0, -0.5, 2.0;
  v << 0.3, 0.7, -0.2, 0.0;
  const GaeResult g = compute_gae(r, v, {false, false, true}, 0.99, 0.95);
  const Vec ref = brute_force_gae(r, v.head(3), 0.99, 0.95);
  CHECK((g.advantages - ref).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((g.returns - (ref + v.head(3))).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("batched GAE treats each episode separately") {
  Rng rng(1);
  RolloutBatch b;
  b.inputs = Mat::Zero(1, 7);
  b.samples = Mat::Zero(1, 7);
  b.log_probs = Vec::Zero(7);
  b.rewards = rng.normal_vector(7);
  b.dones = {false, false, true, false, false, false, true};
  b.episode_starts = {0, 3};
  const Vec values = rng.normal_vector(7);
  compute_gae(b, values);
  CHECK((b.advantages.head(3) - brute_force_gae(b.rewards.head(3), values.head(3), 0.99, 0.95)).norm() < 1e-12);
  CHECK((b.advantages.tail(4) - brute_force_gae(b.rewards.tail(4), values.tail(4), 0.99, 0.95)).norm() < 1e-12);
  b.gamma = 0.0;
  CHECK_THROWS_AS(b.check(), ContractViolation);
}

TEST_CASE("advantage normalization") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec a = rng.normal_vector(1 + static_cast<Eigen::Index>(rng.index(500))) * 7.0;
    if (a.size() < 2) continue;
    const Vec n = normalize_advantages(a);
    CHECK(std::abs(n.mean()) < 1e-9);
    CHECK(std::abs(std::sqrt(n.squaredNorm() / static_cast<double>(n.size())) - 1.0) < 1e-6);
  }
  CHECK(normalize_advantages(Vec::Zero(4)).isZero(0.0));
}

TEST_CASE("clipped samples contribute zero gradient") {
  Rng rng(3);
  GaussianMlp agent(2, {1}, {8}, StdMode::Free, -0.5, rng, 1.0);
  const Mat x = Mat::Random(2, 1);
  Mat s = Mat::Random(1, 1);
  const double logp = agent.log_prob(x, s)[0];
  for (double ratio : {1.5, 0.5, 1.1, 0.9}) {
    for (double adv : {1.0, -1.0}) {
      const Vec old = Vec::Constant(1, logp - std::log(ratio));
      const SurrogateResult r = clipped_surrogate(agent, x, s, old, Vec::Constant(1, adv), 0.2);
      const bool clipped = (adv > 0 && ratio > 1.2) || (adv < 0 && ratio < 0.8);
      CHECK(surrogate_clipped(ratio, adv, 0.2) == clipped);
      if (clipped) CHECK(r.grad.isZero(0.0));
      else CHECK(r.grad.norm() > 0.0);
    }
  }
}

TEST_CASE("surrogate gradient matches central differences") {
  Rng rng(4);
  for (StdMode mode : {StdMode::Free, StdMode::StateDependent}) {
    GaussianMlp agent(3, {2}, {8, 8}, mode, -0.5, rng, 1.0);
    const Mat x = Mat::Random(3, 20);
    const Mat s = Mat::Random(2, 20);
    Vec old = agent.log_prob(x, s);
    // Ratios well inside and well outside the clip band, away from the kinks.
    for (Eigen::Index i = 0; i < old.size(); ++i) old[i] -= (i % 3 == 0) ? 0.6 : rng.uniform(-0.1, 0.1);
    const Vec adv = rng.normal_vector(20);
    const Vec analytic = clipped_surrogate(agent, x, s, old, adv, 0.2, 0.01).grad;
    auto loss = [&](const Vec& p) {
      GaussianMlp a = agent;
      a.set_parameters(p);
      return clipped_surrogate(a, x, s, old, adv, 0.2, 0.01).loss;
    };
    CHECK(max_relative_error(analytic, numeric_gradient(loss, agent.parameters())) < 1e-4);
  }
}

TEST_CASE("zero advantages leave the policy unchanged and the start surrogate is zero") {
  Rng rng(5);
  GaussianMlp agent(1, {1}, {8}, StdMode::Free, -0.5, rng, 0.01);
  MlpNet value = MlpNet::zeros({1, 8, 1});
  PpoConfig cfg;
  cfg.value_lr = 0.0;
  PpoTrainer trainer(agent, value, cfg);
  RolloutBatch b = bandit_batch(agent, rng, 64, 0.7);
  b.rewards.setZero();
  const Vec before = agent.parameters();
  const PpoDiagnostics d = trainer.update(b, rng);
  CHECK(agent.parameters() == before);
  CHECK(d.surrogate_at_start == 0.0);
  CHECK_FALSE(d.aborted);
}

TEST_CASE("on-policy start: rho = 1 and the surrogate equals the normalized mean advantage") {
  Rng rng(6);
  GaussianMlp agent(1, {1}, {8}, StdMode::Free, -0.5, rng, 0.01);
  MlpNet value = MlpNet::zeros({1, 8, 1});
  PpoTrainer trainer(agent, value, {});
  RolloutBatch b = bandit_batch(agent, rng, 128, 0.7);
  const PpoDiagnostics d = trainer.update(b, rng);
  CHECK(std::abs(d.surrogate_at_start) < 1e-9);
  CHECK(d.approx_kl >= 0.0);
}

TEST_CASE("non-finite rewards abort the update and restore the weights") {
  Rng rng(7);
  GaussianMlp agent(1, {1}, {8}, StdMode::Free, -0.5, rng, 0.01);
  MlpNet value = MlpNet::zeros({1, 8, 1});
  PpoTrainer trainer(agent, value, {});
  RolloutBatch b = bandit_batch(agent, rng, 32, 0.7);
  b.rewards[3] = std::nan("");
  const Vec before = agent.parameters();
  const Vec vbefore = value.parameters();
  const PpoDiagnostics d = trainer.update(b, rng);
  CHECK(d.aborted);
  CHECK(agent.parameters() == before);
  CHECK(value.parameters() == vbefore);
}

TEST_CASE("1D bandit converges to the optimal action") {
  Rng rng(8);
  GaussianMlp agent(1, {1}, {16}, StdMode::Free, -0.5, rng, 0.01);
  MlpNet value({1, 16, 1}, rng);
  PpoConfig cfg;
  cfg.policy_lr = 3e-3;
  PpoTrainer trainer(agent, value, cfg);
  for (int it = 0; it < 200; ++it) {
    RolloutBatch b = bandit_batch(agent, rng, 256, 0.7);
    trainer.update(b, rng);
  }
  CHECK(std::abs(agent.head(Vec::Ones(1)).mu[0] - 0.7) < 0.05);
}

TEST_CASE("rollout bookkeeping") {
  const EnvSpec spec = make_env_spec("slider");
  Rng rng(9);
  GaussianPolicy pi(spec, {8}, -0.5, rng);
  PolicyActor actor(pi, ActionMode::Stochastic);

  SUBCASE("max_steps 1 gives one transition per trajectory") {
    EnvSpec one = spec;
    one.max_steps = 1;
    Environment env = make_target(one, {});
    RolloutRngs r = RolloutRngs::from_seed(1);
    for (const auto& t : collect_rollouts(env, actor, 20, r)) {
      CHECK(t.length() == 1);
      CHECK(t.steps.back().done);
    }
  }

  SUBCASE("200 source trajectories: tuple count equals the summed lengths") {
    Environment env = make_target(spec, {});
    RolloutRngs r = RolloutRngs::from_seed(2);
    const auto trajs = collect_rollouts(env, actor, 200, r);
    std::size_t sum = 0;
    for (const auto& t : trajs) sum += t.length();
    CHECK(trajs.size() == 200);
    CHECK(tuples_of(trajs).size() == sum);
    CHECK(static_cast<long>(sum) == env.steps_taken());
    const RolloutBatch b = make_policy_batch(trajs, pi, 0.99, 0.95);
    CHECK(b.size() == sum);
    CHECK_NOTHROW(b.check());
  }

  SUBCASE("fixed seed reproduces the batch") {
    auto once = [&] {
      Environment env = make_target(spec, {});
      RolloutRngs r = RolloutRngs::from_seed(3);
      return make_policy_batch(collect_rollouts(env, actor, 10, r), pi, 0.99, 0.95);
    };
    const RolloutBatch a = once();
    const RolloutBatch b = once();
    CHECK(a.samples == b.samples);
    CHECK(a.rewards == b.rewards);
    CHECK(a.log_probs == b.log_probs);
  }

  SUBCASE("stored log-probs are the policy density of the stored samples") {
    Environment env = make_target(spec, {});
    RolloutRngs r = RolloutRngs::from_seed(4);
    for (const auto& t : collect_rollouts(env, actor, 5, r)) {
      for (const auto& s : t.steps) CHECK(s.action_log_prob == doctest::Approx(actor.log_prob(s.obs, s.action_sample)));
    }
  }
}

TEST_CASE("training respects a hard episode budget") {
  const EnvSpec spec = make_env_spec("slider");
  Rng rng(10);
  GaussianPolicy pi(spec, {8}, -0.5, rng);
  ValueFunction v(spec.obs_dim(), {8}, rng);
  Environment env = make_target(spec, {});
  PolicyTrainConfig cfg;
  cfg.iterations = 100;
  cfg.steps_per_iter = 250;
  cfg.episode_budget = 7;
  RolloutRngs r = RolloutRngs::from_seed(5);
  train_policy(pi, v, env, cfg, r);
  CHECK(env.episodes_started() == 7);
}

TEST_CASE("PPO improves a slider policy") {
  const EnvSpec spec = make_env_spec("slider");
  Rng rng(11);
  GaussianPolicy pi(spec, {32, 32}, -0.5, rng);
  ValueFunction v(spec.obs_dim(), {32, 32}, rng);
  Environment env = make_target(spec, {});
  PolicyTrainConfig cfg;
  cfg.iterations = 30;
  cfg.steps_per_iter = 2000;
  RolloutRngs r = RolloutRngs::from_seed(6);
  const double before = evaluate_policy(env, pi, 10, 1).mean_return;
  train_policy(pi, v, env, cfg, r);
  const double after = evaluate_policy(env, pi, 10, 1).mean_return;
  CHECK(after > before + 50.0);
  // Evaluation is reproducible for a fixed seed.
  CHECK(evaluate_policy(env, pi, 5, 2).returns == evaluate_policy(env, pi, 5, 2).returns);
}

TEST_CASE("policy checkpoints round-trip and log_prob stays finite") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(12);
  GaussianPolicy pi(spec, {8}, -0.5, rng);
  const GaussianPolicy q = GaussianPolicy::from_json(pi.to_json());
  const Vec o = rng.normal_vector(spec.obs_dim());
  CHECK(q.mean_action(o) == pi.mean_action(o));
  PolicyActor actor(pi, ActionMode::Stochastic);
  CHECK(std::isfinite(actor.log_prob(o, Vec::Constant(2, 1.0))));
  CHECK(std::isfinite(actor.log_prob(o, Vec::Constant(2, -1.0))));
}
