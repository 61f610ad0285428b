#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "advsim/errors.hpp"
#include "advsim/hybrid.hpp"

using namespace advsim;

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

// Diagonal Gaussian density written out term by term.
double density(const Vec& mu, const Vec& log_sigma, const Vec& x) {
  double lp = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double ls = std::clamp(log_sigma[i], -5.0, 2.0);
    const double z = (x[i] - mu[i]) / std::exp(ls);
    lp += -0.5 * kLog2Pi - ls - 0.5 * z * z;
  }
  return lp;
}

ParamFunction zero_function(const EnvSpec& spec) {
  Rng rng(0);
  ParamFunction f(spec, {8, 8}, -1.0, rng);
  f.model.set_parameters(Vec::Zero(static_cast<Eigen::Index>(f.model.num_params())));
  return f;
}

}  // namespace

TEST_CASE("zero network puts every parameter at its range midpoint") {
  const EnvSpec spec = make_env_spec("hopper1d");
  const ParamFunction f = zero_function(spec);
  Rng rng(1);
  EnvState s = sample_initial_state(spec, rng);
  const ParamSample c = param_eval(f, spec, s, Vec::Zero(2), rng, false);
  for (Eigen::Index i = 0; i < c.params.values.size(); ++i) {
    CHECK(c.params.values[i] == doctest::Approx(0.5 * (f.lo[i] + f.hi[i])).epsilon(1e-15));
  }
  CHECK(c.log_prob == 0.0);
}

TEST_CASE("initial mean output sits at the nominal constants") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(2);
  ParamFunction f(spec, {16, 16}, -1.0, rng);
  for (int k = 0; k < 50; ++k) {
    const EnvState s = sample_initial_state(spec, rng);
    const Vec c = f.mean_params(ParamFunction::input(spec, s, rng.normal_vector(2)));
    for (std::size_t i = 0; i < spec.params.size(); ++i) {
      const auto& d = spec.params[i];
      CHECK(std::abs(c[static_cast<Eigen::Index>(i)] - d.nominal) < 0.02 * (d.hi - d.lo));
    }
  }
}

TEST_CASE("vanishing sigma: stochastic output tracks the deterministic one") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(3);
  ParamFunction f(spec, {16}, -1.0, rng);
  f.model.set_log_sigma(-5.0);
  for (int k = 0; k < 200; ++k) {
    const EnvState s = sample_initial_state(spec, rng);
    const Vec a = rng.normal_vector(2);
    const Vec det = param_eval(f, spec, s, a, rng, false).params.values;
    const Vec sto = param_eval(f, spec, s, a, rng, true).params.values;
    for (Eigen::Index i = 0; i < det.size(); ++i) CHECK(std::abs(det[i] - sto[i]) < 1e-2 * (f.hi[i] - f.lo[i]));
  }
}

TEST_CASE("seeded net and rng reproduce the same parameters") {
  const EnvSpec spec = make_env_spec("hopper1d");
  auto draw = [&] {
    Rng init(4);
    ParamFunction f(spec, {16, 16}, -1.0, init);
    Rng rng(5);
    const EnvState s = sample_initial_state(spec, rng);
    return param_eval(f, spec, s, rng.normal_vector(2), rng, true).params.values;
  };
  CHECK(draw() == draw());
}

TEST_CASE("range safety over random states, actions and weights") {
  Rng rng(6);
  long checked = 0;
  for (const char* name : {"slider", "pendulum", "hopper1d"}) {
    const EnvSpec spec = make_env_spec(name);
    for (int net = 0; net < 34; ++net) {
      ParamFunction f(spec, {8, 8}, rng.uniform(-5.0, 2.0), rng);
      // Large random weights push the pre-squash values far into the tails.
      f.model.set_parameters(rng.normal_vector(static_cast<Eigen::Index>(f.model.num_params())) * 5.0);
      for (int k = 0; k < 1000; ++k) {
        Vec x = rng.normal_vector(f.input_dim()) * 10.0;
        const ParamSample c = f.eval(x, rng, true);
        REQUIRE(c.params.within_ranges(spec));
        ++checked;
      }
    }
  }
  CHECK(checked >= 100000);
}

TEST_CASE("param_eval log_prob equals the recomputed pre-squash density") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(7);
  ParamFunction f(spec, {16, 16}, -0.5, rng);
  for (int k = 0; k < 500; ++k) {
    const Vec x = rng.normal_vector(f.input_dim());
    const ParamSample c = f.eval(x, rng, true);
    const GaussianHead h = f.model.head(x);
    CHECK(c.log_prob == doctest::Approx(density(h.mu, h.log_sigma, c.pre_squash)).epsilon(1e-12));
    CHECK((f.squash(c.pre_squash) - c.params.values).norm() == 0.0);
  }
}

TEST_CASE("squash and unsquash invert inside the range") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(8);
  ParamFunction f(spec, {4}, -1.0, rng);
  for (int k = 0; k < 100; ++k) {
    Vec c(f.lo.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) c[i] = rng.uniform(f.lo[i] + 1e-3, f.hi[i] - 1e-3);
    CHECK((f.squash(f.unsquash(c)) - c).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("expressiveness: regression reaches any constant inside the ranges") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(9);
  for (int trial = 0; trial < 3; ++trial) {
    ParamFunction f(spec, {16, 16}, -1.0, rng);
    Vec target(f.lo.size());
    for (Eigen::Index i = 0; i < target.size(); ++i) {
      const double w = f.hi[i] - f.lo[i];
      target[i] = rng.uniform(f.lo[i] + 0.1 * w, f.hi[i] - 0.1 * w);
    }
    const Vec u = f.unsquash(target);
    const Mat inputs = Mat::Random(f.input_dim(), 64);
    // Least squares on the mean rows of each branch; the log-sigma rows get no loss.
    int offset = 0;
    for (auto& net : f.model.branches()) {
      const int dim = net.output_dim() / 2;
      Adam opt(net.num_params(), 3e-3);
      for (int it = 0; it < 4000; ++it) {
        const Mat out = net.forward(inputs);
        Mat grad = Mat::Zero(out.rows(), out.cols());
        grad.topRows(dim) = (out.topRows(dim).colwise() - u.segment(offset, dim)) * (2.0 / 64.0);
        Vec p = net.parameters();
        opt.step(p, net.backward(grad).flatten());
        net.set_parameters(p);
      }
      offset += dim;
    }
    for (int k = 0; k < 20; ++k) {
      const Vec c = f.mean_params(inputs.col(k));
      for (Eigen::Index i = 0; i < c.size(); ++i) CHECK(std::abs(c[i] - target[i]) <= 0.01 * target[i]);
    }
  }
}

TEST_CASE("identity parameters: pinned nominal hybrid equals the source bit for bit") {
  for (const char* name : {"slider", "pendulum", "hopper1d"}) {
    const EnvSpec spec = make_env_spec(name);
    Environment source = make_target(spec, {});
    HybridSimulator hybrid = HybridSimulator::pinned(spec, SimParamVector::nominal(spec));
    Rng e1(10), p1(11), e2(10), p2(11), act(12);
    EnvState a = sample_initial_state(spec, e1);
    EnvState b = sample_initial_state(spec, e2);
    for (int t = 0; t < 1000; ++t) {
      if (is_terminal(spec, a)) {
        a = sample_initial_state(spec, e1);
        b = sample_initial_state(spec, e2);
      }
      const Vec u = act.normal_vector(spec.action_dim());
      a = source.step(a, u, e1, p1, nullptr);
      b = hybrid.step(b, u, e2, p2, nullptr);
      REQUIRE(a.flat() == b.flat());
      REQUIRE(a.t == b.t);
    }
    CHECK(hybrid.steps_taken() == 1000);
  }
}

TEST_CASE("motor_scale 0 leaves only friction acting on the slider") {
  EnvSpec spec = make_env_spec("slider");
  SimParamVector c = SimParamVector::nominal(spec);
  c.values[1] = 0.0;
  HybridSimulator sim = HybridSimulator::pinned(spec, c);
  Rng e(13), p(14);
  EnvState s;
  s.q = Vec::Zero(1);
  s.qdot = Vec::Constant(1, 1.0);
  StepRecord rec;
  const EnvState next = sim.step(s, Vec::Constant(1, 1.0), e, p, &rec);
  CHECK(rec.effective[0] == 0.0);
  CHECK(next.qdot[0] == doctest::Approx(1.0 - 0.02 * 0.5 * 9.8).epsilon(1e-15));
}

TEST_CASE("constant motor_scale 0.5 matches a slider with halved motor gain") {
  const EnvSpec spec = make_env_spec("slider");
  EnvSpec halved = spec;
  halved.motor_gain[0] *= 0.5;
  SimParamVector c = SimParamVector::nominal(spec);
  c.values[1] = 0.5;
  HybridSimulator sim = HybridSimulator::pinned(spec, c);
  Environment weak = make_target(halved, {});
  Rng init(16);
  GaussianPolicy pi(spec, {8}, 0.0, init);
  PolicyActor actor(pi, ActionMode::Stochastic);
  for (int ep = 0; ep < 20; ++ep) {
    RolloutRngs r1 = RolloutRngs::from_seed(100 + static_cast<std::uint64_t>(ep));
    RolloutRngs r2 = r1;
    const Trajectory a = run_episode(sim, actor, r1, ep);
    const Trajectory b = run_episode(weak, actor, r2, ep);
    REQUIRE(a.length() == b.length());
    for (std::size_t t = 0; t < a.length(); ++t) {
      REQUIRE(a.steps[t].next_state == b.steps[t].next_state);
      REQUIRE(a.steps[t].next_obs == b.steps[t].next_obs);
    }
  }
}

TEST_CASE("trajectory log-probability conventions") {
  EnvSpec spec = make_env_spec("slider");
  spec.init_halfwidth.setZero();
  spec.observation_noise = 0.0;
  Rng rng(17);
  GaussianPolicy pi(spec, {4}, 0.0, rng);
  PolicyActor actor(pi, ActionMode::Stochastic);

  SUBCASE("empty trajectory with deterministic init has total 0") {
    Trajectory t;
    t.has_intermediates = true;
    CHECK(trajectory_log_prob(t, actor, nullptr, spec).total == 0.0);
  }

  SUBCASE("one step with every Gaussian standard and at its mean") {
    spec.observation_noise = 0.1;
    spec.obs_scale = Vec::Constant(2, 10.0);  // observation noise std 1
    pi.model.set_parameters(Vec::Zero(static_cast<Eigen::Index>(pi.model.num_params())));
    pi.obs_scale = spec.obs_scale;
    ParamFunction f = zero_function(spec);
    Trajectory t;
    t.has_intermediates = true;
    t.initial_obs_noise = Vec::Zero(2);
    Transition tr;
    tr.obs = Vec::Zero(2);
    tr.action_sample = Vec::Zero(1);
    tr.param_input = Vec::Zero(f.input_dim());
    tr.param_sample = Vec::Zero(2);
    tr.torque_noise = Vec::Zero(1);
    tr.next_obs_noise = Vec::Zero(2);
    t.steps.push_back(tr);
    // action 1 + params 2 + torque 1 + observations 2 + 2
    const TrajectoryLogProb lp = trajectory_log_prob(t, actor, &f, spec);
    CHECK(lp.total == doctest::Approx(-0.5 * kLog2Pi * 8).epsilon(1e-12));
  }

  SUBCASE("missing intermediates is a contract violation") {
    Trajectory t;
    CHECK_THROWS_AS(trajectory_log_prob(t, actor, nullptr, spec), ContractViolation);
  }
}

TEST_CASE("seeded 3-step hybrid rollout: total equals the per-factor oracle") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(18);
  GaussianPolicy pi(spec, {16, 16}, -0.5, rng);
  ParamFunction f(spec, {16, 16}, -1.0, rng);
  HybridSimulator sim(spec, &f, true);
  PolicyActor actor(pi, ActionMode::Stochastic);
  RolloutRngs rngs = RolloutRngs::from_seed(19);
  EpisodeOptions opt;
  opt.max_steps = 3;
  const Trajectory traj = run_episode(sim, actor, rngs, 0, opt);
  REQUIRE(traj.length() == 3);

  double initial = 0.0;
  for (Eigen::Index i = 0; i < spec.init_halfwidth.size(); ++i) {
    if (spec.init_halfwidth[i] > 0) initial += -std::log(2.0 * spec.init_halfwidth[i]);
  }
  auto obs_terms = [&](const Vec& eps) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < eps.size(); ++i) {
      const double sd = 0.1 * spec.obs_scale[i];
      s += -0.5 * kLog2Pi - std::log(sd) - 0.5 * (eps[i] / sd) * (eps[i] / sd);
    }
    return s;
  };
  double policy = 0.0, param = 0.0, dynamics = 0.0, observation = obs_terms(traj.initial_obs_noise);
  for (const auto& st : traj.steps) {
    const GaussianHead hp = pi.head(st.obs);
    policy += density(hp.mu, hp.log_sigma, st.action_sample);
    const GaussianHead hf = f.model.head(st.param_input);
    param += density(hf.mu, hf.log_sigma, st.param_sample);
    for (Eigen::Index i = 0; i < st.torque_noise.size(); ++i) {
      dynamics += -0.5 * kLog2Pi - 0.5 * st.torque_noise[i] * st.torque_noise[i];
    }
    observation += obs_terms(st.next_obs_noise);
  }
  const TrajectoryLogProb lp = trajectory_log_prob(traj, actor, &f, spec);
  CHECK(lp.initial == doctest::Approx(initial).epsilon(1e-12));
  CHECK(std::abs(lp.policy - policy) < 1e-9);
  CHECK(std::abs(lp.param - param) < 1e-9);
  CHECK(std::abs(lp.dynamics - dynamics) < 1e-9);
  CHECK(std::abs(lp.observation - observation) < 1e-9);
  CHECK(std::abs(lp.total - (initial + policy + param + dynamics + observation)) < 1e-9);
  CHECK(std::abs(lp.total - (lp.initial + lp.policy + lp.param + lp.dynamics + lp.observation)) < 1e-9);
  // Stored per-step log-probs agree with the recomputation.
  double stored = 0.0;
  for (const auto& st : traj.steps) stored += st.param_log_prob;
  CHECK(std::abs(stored - param) < 1e-9);
}

TEST_CASE("parameter function checkpoints round-trip") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(20);
  ParamFunction f(spec, {8}, -1.0, rng);
  const ParamFunction g = ParamFunction::from_json(f.to_json());
  const Vec x = rng.normal_vector(f.input_dim());
  CHECK(g.mean_params(x) == f.mean_params(x));
  CHECK(g.names == f.names);
  Json broken = f.to_json();
  broken["lo"] = Json::array({0.0});
  CHECK_THROWS_AS(ParamFunction::from_json(broken), ConfigError);
}

TEST_CASE("contact parameters must precede motor scales") {
  EnvSpec spec = make_env_spec("slider");
  std::swap(spec.params[0], spec.params[1]);
  Rng rng(21);
  CHECK_THROWS_AS(ParamFunction(spec, {4}, -1.0, rng), ConfigError);
}
