#include "advsim/io.hpp"

#include <fstream>
#include <iomanip>
#include <map>

#include "advsim/errors.hpp"

namespace advsim {

namespace fs = std::filesystem;

// ---- configuration ---------------------------------------------------------

Json to_json(const PpoConfig& c) {
  return {{"clip", c.clip},         {"epochs", c.epochs}, {"minibatch", c.minibatch},
          {"policy_lr", c.policy_lr}, {"value_lr", c.value_lr}, {"gamma", c.gamma},
          {"lambda", c.lambda},     {"entropy_coef", c.entropy_coef}, {"max_grad_norm", c.max_grad_norm}};
}

PpoConfig ppo_config_from_json(const Json& j, PpoConfig c) {
  c.clip = j.value("clip", c.clip);
  c.epochs = j.value("epochs", c.epochs);
  c.minibatch = j.value("minibatch", c.minibatch);
  c.policy_lr = j.value("policy_lr", c.policy_lr);
  c.value_lr = j.value("value_lr", c.value_lr);
  c.gamma = j.value("gamma", c.gamma);
  c.lambda = j.value("lambda", c.lambda);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  return c;
}

Json to_json(const PolicyTrainConfig& c) {
  return {{"iterations", c.iterations},
          {"steps_per_iter", c.steps_per_iter},
          {"hidden", c.hidden},
          {"init_log_sigma", c.init_log_sigma},
          {"value_warmup_epochs", c.value_warmup_epochs},
          {"episode_budget", c.episode_budget},
          {"ppo", to_json(c.ppo)}};
}

PolicyTrainConfig policy_config_from_json(const Json& j, PolicyTrainConfig c) {
  c.iterations = j.value("iterations", c.iterations);
  c.steps_per_iter = j.value("steps_per_iter", c.steps_per_iter);
  c.hidden = j.value("hidden", c.hidden);
  c.init_log_sigma = j.value("init_log_sigma", c.init_log_sigma);
  c.value_warmup_epochs = j.value("value_warmup_epochs", c.value_warmup_epochs);
  c.episode_budget = j.value("episode_budget", c.episode_budget);
  if (j.contains("ppo")) c.ppo = ppo_config_from_json(j["ppo"], c.ppo);
  return c;
}

Json to_json(const TaskRewardConfig& c) {
  return {{"alive", c.alive},           {"velocity", c.velocity},     {"action", c.action},
          {"joint_limit", c.joint_limit}, {"smoothness", c.smoothness}, {"direction", c.direction}};
}

TaskRewardConfig reward_from_json(const Json& j, TaskRewardConfig c) {
  c.alive = j.value("alive", c.alive);
  c.velocity = j.value("velocity", c.velocity);
  c.action = j.value("action", c.action);
  c.joint_limit = j.value("joint_limit", c.joint_limit);
  c.smoothness = j.value("smoothness", c.smoothness);
  c.direction = j.value("direction", c.direction);
  return c;
}

namespace {

Json range_json(const Range& r) { return Json::array({r.lo, r.hi}); }
Range range_from(const Json& j, Range r) {
  if (j.is_null()) return r;
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

Json dr_json(const DrRanges& d) {
  return {{"mass_ratio", range_json(d.mass_ratio)},
          {"motor_scale", range_json(d.motor_scale)},
          {"motor_friction", range_json(d.motor_friction)},
          {"lateral_friction", range_json(d.lateral_friction)},
          {"spinning_friction_scale", range_json(d.spinning_friction_scale)},
          {"restitution_scale", range_json(d.restitution_scale)},
          {"contact_stiffness_scale", range_json(d.contact_stiffness_scale)}};
}

DrRanges dr_from(const Json& j, DrRanges d) {
  auto get = [&](const char* key) { return j.contains(key) ? j[key] : Json(); };
  d.mass_ratio = range_from(get("mass_ratio"), d.mass_ratio);
  d.motor_scale = range_from(get("motor_scale"), d.motor_scale);
  d.motor_friction = range_from(get("motor_friction"), d.motor_friction);
  d.lateral_friction = range_from(get("lateral_friction"), d.lateral_friction);
  d.spinning_friction_scale = range_from(get("spinning_friction_scale"), d.spinning_friction_scale);
  d.restitution_scale = range_from(get("restitution_scale"), d.restitution_scale);
  d.contact_stiffness_scale = range_from(get("contact_stiffness_scale"), d.contact_stiffness_scale);
  return d;
}

Json sysid_json(const SysIdConfig& c) {
  return {{"mode", c.mode == SysIdMode::OpenLoop ? "open_loop" : "closed_loop"},
          {"population", c.population},
          {"generations", c.generations},
          {"sigma0", c.sigma0},
          {"p", c.p},
          {"smooth_sigma", c.smooth_sigma},
          {"fit_variance", c.fit_variance},
          {"log_std_lo", c.log_std_lo},
          {"log_std_hi", c.log_std_hi},
          {"pairs", c.pairs}};
}

SysIdConfig sysid_from(const Json& j, SysIdConfig c) {
  if (j.contains("mode")) {
    const auto m = j["mode"].get<std::string>();
    if (m == "open_loop") c.mode = SysIdMode::OpenLoop;
    else if (m == "closed_loop") c.mode = SysIdMode::ClosedLoop;
    else throw ConfigError("sysid.mode must be open_loop or closed_loop, got '" + m + "'");
  }
  c.population = j.value("population", c.population);
  c.generations = j.value("generations", c.generations);
  c.sigma0 = j.value("sigma0", c.sigma0);
  c.p = j.value("p", c.p);
  c.smooth_sigma = j.value("smooth_sigma", c.smooth_sigma);
  c.fit_variance = j.value("fit_variance", c.fit_variance);
  c.log_std_lo = j.value("log_std_lo", c.log_std_lo);
  c.log_std_hi = j.value("log_std_hi", c.log_std_hi);
  c.pairs = j.value("pairs", c.pairs);
  return c;
}

}  // namespace

Json RunConfig::to_json() const {
  return {{"env", env},
          {"gap", gap},
          {"gap_overrides", gap_overrides},
          {"seed", seed},
          {"seeds", seeds},
          {"target_trajectories", target_trajectories},
          {"exploration_std", exploration_std},
          {"eval_episodes", eval_episodes},
          {"observation_noise", observation_noise},
          {"torque_noise", torque_noise},
          {"deterministic_params", deterministic_params},
          {"reward", reward},
          {"policy", advsim::to_json(policy)},
          {"identify", advsim::to_json(identify)},
          {"refine", {{"train", advsim::to_json(refine.train)}, {"base_policy_lr", refine.base_policy_lr}}},
          {"finetune",
           {{"budget_trajs", finetune.budget_trajs},
            {"train", advsim::to_json(finetune.train)},
            {"base_policy_lr", finetune.base_policy_lr}}},
          {"dr", dr_json(dr)},
          {"sysid", sysid_json(sysid)},
          {"out", out}};
}

RunConfig RunConfig::from_json(const Json& j) {
  RunConfig c;
  c.env = j.value("env", c.env);
  c.gap = j.value("gap", c.gap);
  c.gap_overrides = j.value("gap_overrides", c.gap_overrides);
  c.seed = j.value("seed", c.seed);
  c.seeds = j.value("seeds", std::vector<std::uint64_t>{c.seed});
  c.target_trajectories = j.value("target_trajectories", c.target_trajectories);
  c.exploration_std = j.value("exploration_std", c.exploration_std);
  c.eval_episodes = j.value("eval_episodes", c.eval_episodes);
  c.observation_noise = j.value("observation_noise", c.observation_noise);
  c.torque_noise = j.value("torque_noise", c.torque_noise);
  c.deterministic_params = j.value("deterministic_params", c.deterministic_params);
  c.reward = j.value("reward", c.reward);
  if (j.contains("policy")) c.policy = policy_config_from_json(j["policy"], c.policy);
  if (j.contains("identify")) c.identify = identify_config_from_json(j["identify"], c.identify);
  if (j.contains("refine")) {
    const Json& r = j["refine"];
    if (r.contains("train")) c.refine.train = policy_config_from_json(r["train"], c.refine.train);
    c.refine.base_policy_lr = r.value("base_policy_lr", c.policy.ppo.policy_lr);
  } else {
    c.refine.base_policy_lr = c.policy.ppo.policy_lr;
  }
  if (j.contains("finetune")) {
    const Json& f = j["finetune"];
    c.finetune.budget_trajs = f.value("budget_trajs", c.finetune.budget_trajs);
    if (f.contains("train")) c.finetune.train = policy_config_from_json(f["train"], c.finetune.train);
    c.finetune.base_policy_lr = f.value("base_policy_lr", c.policy.ppo.policy_lr);
  }
  if (j.contains("dr")) c.dr = dr_from(j["dr"], c.dr);
  if (j.contains("sysid")) c.sysid = sysid_from(j["sysid"], c.sysid);
  c.out = j.value("out", c.out);
  c.refine.stochastic_params = !c.deterministic_params;
  if (c.target_trajectories < 1) throw ConfigError("target_trajectories must be at least 1");
  if (c.eval_episodes < 1) throw ConfigError("eval_episodes must be at least 1");
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  try {
    return from_json(read_json(path));
  } catch (const Json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

EnvSpec RunConfig::make_spec() const {
  EnvSpec spec = make_env_spec(env);
  if (!observation_noise) spec.observation_noise = 0.0;
  if (!torque_noise) spec.torque_noise = 0.0;
  spec.reward = reward_from_json(reward, spec.reward);
  validate(spec);
  return spec;
}

TargetGap RunConfig::make_gap(const EnvSpec& spec) const {
  TargetGap g = default_gap(spec, parse_gap_kind(gap));
  const Json& o = gap_overrides;
  g.back_emf = o.value("back_emf", g.back_emf);
  g.motor_scale = o.value("motor_scale", g.motor_scale);
  g.mass_delta = o.value("mass_delta", g.mass_delta);
  g.deform_stiffness_ratio = o.value("deform_stiffness_ratio", g.deform_stiffness_ratio);
  g.deform_quadratic = o.value("deform_quadratic", g.deform_quadratic);
  return g;
}

// ---- files -----------------------------------------------------------------

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed: " + path.string());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

TrajectoryFileHeader header_for(const EnvSpec& spec, const Json& provenance) {
  TrajectoryFileHeader h;
  h.env = spec.name;
  h.obs_dim = spec.obs_dim();
  h.action_dim = spec.action_dim();
  h.state_dim = spec.state_dim();
  h.param_dim = static_cast<int>(spec.params.size());
  h.provenance = provenance;
  return h;
}

namespace {

void put(Json& j, const char* key, const Vec& v) {
  if (v.size() > 0) j[key] = vec_to_json(v);
}

Vec take(const Json& j, const char* key) { return j.contains(key) ? vec_from_json(j[key]) : Vec(); }

void check_dim(const Vec& v, int expected, const char* what, std::size_t line) {
  if (v.size() != expected) {
    throw IoError("trajectory file line " + std::to_string(line) + ": " + what + " has " + std::to_string(v.size()) +
                  " entries, header declares " + std::to_string(expected));
  }
}

}  // namespace

void write_trajectories(const fs::path& path, const TrajectoryFileHeader& h, const std::vector<Trajectory>& trajs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  const Json header{{"schema", "advsim.trajectories"},
                    {"version", std::to_string(h.major) + "." + std::to_string(h.minor)},
                    {"env", h.env},
                    {"dims", {{"obs", h.obs_dim}, {"action", h.action_dim}, {"state", h.state_dim}, {"params", h.param_dim}}},
                    {"provenance", h.provenance}};
  out << header.dump() << '\n';
  for (const auto& traj : trajs) {
    for (std::size_t t = 0; t < traj.steps.size(); ++t) {
      const Transition& s = traj.steps[t];
      Json line{{"episode_id", traj.episode_id},
                {"t", t},
                {"obs", vec_to_json(s.obs)},
                {"action", vec_to_json(s.action)},
                {"next_obs", vec_to_json(s.next_obs)},
                {"reward", s.reward},
                {"done", s.done}};
      if (t == 0) {
        Json ep{{"fell", traj.fell}, {"diverged", traj.diverged}, {"has_intermediates", traj.has_intermediates}};
        put(ep, "initial_state", traj.initial_state);
        put(ep, "initial_obs_noise", traj.initial_obs_noise);
        line["episode"] = ep;
      }
      if (s.state.size() > 0) {
        line["state"] = vec_to_json(s.state);
        put(line, "next_state", s.next_state);
      }
      if (s.param_sample.size() > 0) {
        line["sampled_params"] = {{"input", vec_to_json(s.param_input)},
                                  {"pre_squash", vec_to_json(s.param_sample)},
                                  {"values", vec_to_json(s.params)}};
      }
      if (s.action_sample.size() > 0) {
        line["log_probs"] = {{"action", s.action_log_prob}, {"params", s.param_log_prob}};
        line["action_sample"] = vec_to_json(s.action_sample);
      }
      put(line, "torque_noise", s.torque_noise);
      put(line, "next_obs_noise", s.next_obs_noise);
      out << line.dump() << '\n';
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Trajectory> read_trajectories(const fs::path& path, TrajectoryFileHeader* header_out) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string text;
  if (!std::getline(in, text)) throw IoError(path.string() + ": empty trajectory file");
  TrajectoryFileHeader h;
  try {
    const Json header = Json::parse(text);
    const std::string version = header.at("version").get<std::string>();
    const auto dot = version.find('.');
    h.major = std::stoi(version.substr(0, dot));
    h.minor = dot == std::string::npos ? 0 : std::stoi(version.substr(dot + 1));
    if (h.major != kTrajectorySchemaMajor) {
      throw IoError(path.string() + ": unsupported trajectory schema major version " + std::to_string(h.major) +
                    " (this build reads " + std::to_string(kTrajectorySchemaMajor) + ".x)");
    }
    h.env = header.at("env").get<std::string>();
    const Json& dims = header.at("dims");
    h.obs_dim = dims.at("obs").get<int>();
    h.action_dim = dims.at("action").get<int>();
    h.state_dim = dims.value("state", 0);
    h.param_dim = dims.value("params", 0);
    h.provenance = header.value("provenance", Json::object());
  } catch (const Json::exception& e) {
    throw IoError(path.string() + ": malformed header: " + e.what());
  }

  std::vector<Trajectory> trajs;
  std::map<int, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, text)) {
    ++line_no;
    if (text.empty()) continue;
    try {
      const Json j = Json::parse(text);
      const int id = j.at("episode_id").get<int>();
      const int t = j.at("t").get<int>();
      auto it = index.find(id);
      if (it == index.end()) {
        it = index.emplace(id, trajs.size()).first;
        trajs.emplace_back();
        trajs.back().episode_id = id;
      }
      Trajectory& traj = trajs[it->second];
      if (t != static_cast<int>(traj.steps.size())) {
        throw IoError(path.string() + " line " + std::to_string(line_no) + ": t must increase by one within an episode");
      }
      if (j.contains("episode")) {
        const Json& ep = j["episode"];
        traj.fell = ep.value("fell", false);
        traj.diverged = ep.value("diverged", false);
        traj.has_intermediates = ep.value("has_intermediates", false);
        traj.initial_state = take(ep, "initial_state");
        traj.initial_obs_noise = take(ep, "initial_obs_noise");
      }
      Transition s;
      s.obs = vec_from_json(j.at("obs"));
      s.action = vec_from_json(j.at("action"));
      s.next_obs = vec_from_json(j.at("next_obs"));
      check_dim(s.obs, h.obs_dim, "obs", line_no);
      check_dim(s.next_obs, h.obs_dim, "next_obs", line_no);
      check_dim(s.action, h.action_dim, "action", line_no);
      s.reward = j.value("reward", 0.0);
      s.done = j.at("done").get<bool>();
      s.state = take(j, "state");
      s.next_state = take(j, "next_state");
      if (j.contains("sampled_params")) {
        const Json& p = j["sampled_params"];
        s.param_input = take(p, "input");
        s.param_sample = take(p, "pre_squash");
        s.params = take(p, "values");
      }
      if (j.contains("log_probs")) {
        s.action_log_prob = j["log_probs"].value("action", 0.0);
        s.param_log_prob = j["log_probs"].value("params", 0.0);
      }
      s.action_sample = take(j, "action_sample");
      s.torque_noise = take(j, "torque_noise");
      s.next_obs_noise = take(j, "next_obs_noise");
      traj.steps.push_back(std::move(s));
    } catch (const Json::exception& e) {
      throw IoError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (header_out != nullptr) *header_out = h;
  return trajs;
}

void write_dataset(const fs::path& path, const EnvSpec& spec, const TargetDataset& data) {
  Json prov = data.provenance;
  prov["l_R"] = data.l_R;
  write_trajectories(path, header_for(spec, prov), data.trajectories);
}

TargetDataset read_dataset(const fs::path& path) {
  TrajectoryFileHeader h;
  TargetDataset data;
  data.trajectories = read_trajectories(path, &h);
  data.provenance = h.provenance;
  data.provenance.erase("l_R");
  data.finalize();
  return data;
}

void write_identify_metrics(const fs::path& path, const std::vector<IdentifyRow>& rows,
                            const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,mean_reward,mean_sim_score,mean_real_score,disc_loss,alive_bonus,mean_episode_length,kl,entropy";
  for (const auto& n : names) out << ",f_mean_" << n;
  out << '\n' << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.mean_reward << ',' << r.sim_score << ',' << r.real_score << ',' << r.disc_loss << ','
        << r.alive_bonus << ',' << r.sim_length << ',' << r.approx_kl << ',' << r.entropy;
    for (Eigen::Index i = 0; i < r.mean_params.size(); ++i) out << ',' << r.mean_params[i];
    out << '\n';
  }
}

void write_training_log(const fs::path& path, const std::vector<TrainingLogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "iteration,mean_return,mean_episode_length,episodes,kl,entropy,clip_fraction,value_loss\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.iteration << ',' << r.mean_return << ',' << r.mean_length << ',' << r.episodes << ',' << r.ppo.approx_kl
        << ',' << r.ppo.entropy << ',' << r.ppo.clip_fraction << ',' << r.ppo.value_loss << '\n';
  }
}

fs::path prepare_run_dir(const fs::path& dir, const RunConfig& config) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_json(dir / "config.json", config.to_json());
  return dir;
}

}  // namespace advsim
