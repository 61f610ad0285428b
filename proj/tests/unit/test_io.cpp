#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <sstream>

#include "advsim/errors.hpp"
#include "advsim/io.hpp"

using namespace advsim;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "advsim_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

void write_lines(const fs::path& p, const std::vector<std::string>& lines) {
  std::ofstream out(p);
  for (const auto& l : lines) out << l << '\n';
}

// Hybrid rollouts carry every optional field.
std::vector<Trajectory> hybrid_rollouts(const EnvSpec& spec, int n) {
  Rng rng(1);
  GaussianPolicy pi(spec, {8}, -0.5, rng);
  static ParamFunction f;
  f = ParamFunction(spec, {8}, -1.0, rng);
  HybridSimulator sim(spec, &f);
  PolicyActor actor(pi, ActionMode::Stochastic);
  RolloutRngs rngs = RolloutRngs::from_seed(2);
  return collect_rollouts(sim, actor, n, rngs);
}

void check_same(const Vec& a, const Vec& b) {
  REQUIRE(a.size() == b.size());
  CHECK(a == b);
}

}  // namespace

TEST_CASE("trajectory files round-trip every recorded field") {
  const EnvSpec spec = make_env_spec("hopper1d");
  const auto trajs = hybrid_rollouts(spec, 4);
  REQUIRE(trajs.front().has_intermediates);
  const fs::path p = scratch("roundtrip.jsonl");
  write_trajectories(p, header_for(spec, {{"seed", 2}}), trajs);
  TrajectoryFileHeader h;
  const auto back = read_trajectories(p, &h);
  CHECK(h.env == "hopper1d");
  CHECK(h.obs_dim == spec.obs_dim());
  CHECK(h.param_dim == static_cast<int>(spec.params.size()));
  CHECK(h.provenance["seed"] == 2);
  REQUIRE(back.size() == trajs.size());
  for (std::size_t k = 0; k < trajs.size(); ++k) {
    const Trajectory& a = trajs[k];
    const Trajectory& b = back[k];
    CHECK(a.episode_id == b.episode_id);
    CHECK(a.fell == b.fell);
    CHECK(a.has_intermediates == b.has_intermediates);
    check_same(a.initial_state, b.initial_state);
    check_same(a.initial_obs_noise, b.initial_obs_noise);
    REQUIRE(a.steps.size() == b.steps.size());
    for (std::size_t t = 0; t < a.steps.size(); ++t) {
      const Transition& x = a.steps[t];
      const Transition& y = b.steps[t];
      check_same(x.obs, y.obs);
      check_same(x.action, y.action);
      check_same(x.next_obs, y.next_obs);
      check_same(x.state, y.state);
      check_same(x.next_state, y.next_state);
      check_same(x.action_sample, y.action_sample);
      check_same(x.param_input, y.param_input);
      check_same(x.param_sample, y.param_sample);
      check_same(x.params, y.params);
      check_same(x.torque_noise, y.torque_noise);
      check_same(x.next_obs_noise, y.next_obs_noise);
      CHECK(x.reward == y.reward);
      CHECK(x.done == y.done);
      CHECK(x.action_log_prob == y.action_log_prob);
      CHECK(x.param_log_prob == y.param_log_prob);
    }
  }
}

TEST_CASE("target datasets carry no simulator state") {
  const EnvSpec spec = make_env_spec("slider");
  Environment target = make_target(spec, default_gap(spec, GapKind::Power));
  Rng rng(3);
  const GaussianPolicy pi(spec, {8}, -0.5, rng);
  const TargetDataset data = collect_target_data(pi, target, 3, 0.25, 4);
  const fs::path p = scratch("dataset.jsonl");
  write_dataset(p, spec, data);
  const auto lines = lines_of(p);
  REQUIRE(lines.size() == data.total_steps() + 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const Json j = Json::parse(lines[i]);
    CHECK_FALSE(j.contains("state"));
    CHECK_FALSE(j.contains("sampled_params"));
    CHECK_FALSE(j.contains("torque_noise"));
  }
  const TargetDataset back = read_dataset(p);
  CHECK(back.total_steps() == data.total_steps());
  CHECK(back.l_R == doctest::Approx(data.l_R));
}

TEST_CASE("malformed trajectory files are rejected with a line number") {
  const EnvSpec spec = make_env_spec("slider");
  Rng rng(5);
  const GaussianPolicy pi(spec, {8}, -0.5, rng);
  Environment env(spec, {});
  PolicyActor actor(pi, ActionMode::Stochastic);
  RolloutRngs rngs = RolloutRngs::from_seed(6);
  const auto trajs = collect_rollouts(env, actor, 1, rngs);
  const fs::path good = scratch("good.jsonl");
  write_trajectories(good, header_for(spec), trajs);
  const auto lines = lines_of(good);
  REQUIRE(lines.size() >= 3);

  SUBCASE("unknown major version") {
    Json h = Json::parse(lines[0]);
    h["version"] = "2.0";
    auto bad = lines;
    bad[0] = h.dump();
    write_lines(scratch("v2.jsonl"), bad);
    CHECK_THROWS_AS(read_trajectories(scratch("v2.jsonl")), IoError);
  }
  SUBCASE("newer minor version is accepted") {
    Json h = Json::parse(lines[0]);
    h["version"] = "1.7";
    auto ok = lines;
    ok[0] = h.dump();
    write_lines(scratch("v17.jsonl"), ok);
    CHECK(read_trajectories(scratch("v17.jsonl")).front().steps.size() == trajs.front().steps.size());
  }
  SUBCASE("t skips a step") {
    auto bad = lines;
    bad.erase(bad.begin() + 2);
    write_lines(scratch("skip.jsonl"), bad);
    CHECK_THROWS_WITH_AS(read_trajectories(scratch("skip.jsonl")), doctest::Contains("line 3"), IoError);
  }
  SUBCASE("observation width disagrees with the header") {
    Json j = Json::parse(lines[1]);
    j["obs"].push_back(0.0);
    auto bad = lines;
    bad[1] = j.dump();
    write_lines(scratch("dims.jsonl"), bad);
    CHECK_THROWS_AS(read_trajectories(scratch("dims.jsonl")), IoError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(read_trajectories(scratch("absent.jsonl")), IoError); }
}

TEST_CASE("run configuration round-trips and fills defaults") {
  RunConfig c;
  c.env = "hopper1d";
  c.gap = "heavy";
  c.seed = 9;
  c.seeds = {1, 2, 3};
  c.target_trajectories = 50;
  c.identify.iterations = 17;
  c.identify.hidden = {32, 32};
  c.refine.train.iterations = 4;
  c.sysid.mode = SysIdMode::ClosedLoop;
  c.dr.mass_ratio = {0.8, 1.2};
  c.gap_overrides = {{"mass_delta", 0.3}};
  const RunConfig back = RunConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.make_gap(back.make_spec()).mass_delta == 0.3);

  const RunConfig defaults = RunConfig::from_json(Json::object());
  CHECK(defaults.to_json() == RunConfig{}.to_json());
  CHECK_THROWS_AS(RunConfig::from_json({{"target_trajectories", 0}}), ConfigError);
  CHECK_THROWS_AS(RunConfig::from_json({{"sysid", {{"mode", "sideways"}}}}), ConfigError);
}

TEST_CASE("noise toggles reach the spec") {
  RunConfig c;
  c.observation_noise = false;
  c.torque_noise = false;
  const EnvSpec s = c.make_spec();
  CHECK(s.observation_noise == 0.0);
  CHECK(s.torque_noise == 0.0);
}

TEST_CASE("missing JSON file is a configuration error naming the path") {
  const fs::path p = scratch("no_such_config.json");
  CHECK_THROWS_WITH_AS(read_json(p), doctest::Contains(p.string().c_str()), ConfigError);
  CHECK_THROWS_WITH_AS(RunConfig::load(p), doctest::Contains("no_such_config.json"), ConfigError);
}

TEST_CASE("run directories record their configuration") {
  RunConfig c;
  c.seed = 42;
  const fs::path dir = scratch("run_dir");
  fs::remove_all(dir);
  prepare_run_dir(dir, c);
  CHECK(RunConfig::load(dir / "config.json").to_json() == c.to_json());
}

TEST_CASE("same seed gives byte-identical dataset files") {
  const EnvSpec spec = make_env_spec("hopper1d");
  Rng rng(7);
  const GaussianPolicy pi(spec, {8}, -0.5, rng);
  for (const char* name : {"a.jsonl", "b.jsonl"}) {
    Environment target = make_target(spec, default_gap(spec, GapKind::Power));
    write_dataset(scratch(name), spec, collect_target_data(pi, target, 5, 0.25, 8));
  }
  CHECK(slurp(scratch("a.jsonl")) == slurp(scratch("b.jsonl")));
}

TEST_CASE("single one-step episode is a header plus one transition") {
  EnvSpec spec = make_env_spec("slider");
  spec.max_steps = 1;
  Environment target = make_target(spec, {});
  Rng rng(9);
  const GaussianPolicy pi(spec, {8}, -0.5, rng);
  const fs::path p = scratch("one.jsonl");
  write_dataset(p, spec, collect_target_data(pi, target, 1, 0.25, 10));
  const auto lines = lines_of(p);
  REQUIRE(lines.size() == 2);
  CHECK(Json::parse(lines[1])["done"] == true);
}

TEST_CASE("identification metrics columns") {
  IdentifyRow r;
  r.iteration = 3;
  r.mean_params = (Vec(2) << 0.5, 1.5).finished();
  const fs::path p = scratch("metrics.csv");
  write_identify_metrics(p, {r, r}, {"motor_scale", "lateral_friction"});
  const auto lines = lines_of(p);
  REQUIRE(lines.size() == 3);
  CHECK(lines[0] ==
        "iteration,mean_reward,mean_sim_score,mean_real_score,disc_loss,alive_bonus,mean_episode_length,kl,entropy,"
        "f_mean_motor_scale,f_mean_lateral_friction");
  CHECK(lines[1].rfind("3,", 0) == 0);
  CHECK(lines[1].substr(lines[1].size() - 8) == ",0.5,1.5");
}
