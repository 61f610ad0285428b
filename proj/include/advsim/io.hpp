#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "advsim/baselines.hpp"
#include "advsim/identify.hpp"

namespace advsim {

inline constexpr int kTrajectorySchemaMajor = 1;
inline constexpr int kTrajectorySchemaMinor = 0;

// Everything an experiment needs; persisted verbatim as config.json in each
// run directory. Missing keys take the defaults below.
struct RunConfig {
  std::string env = "slider";
  std::string gap = "none";
  Json gap_overrides = Json::object();  // back_emf, motor_scale, mass_delta, deform_* keys
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0};
  int target_trajectories = 200;
  double exploration_std = 0.25;
  int eval_episodes = 30;
  bool observation_noise = true;
  bool torque_noise = true;
  bool deterministic_params = false;  // refine with f's mean instead of samples
  Json reward = Json::object();       // overrides of TaskRewardConfig fields

  PolicyTrainConfig policy;
  IdentifyConfig identify;
  RefineConfig refine;
  FinetuneConfig finetune;
  DrRanges dr;
  SysIdConfig sysid;
  std::string out = "runs/default";

  Json to_json() const;
  static RunConfig from_json(const Json& j);
  static RunConfig load(const std::filesystem::path& path);

  // Spec with noise toggles and reward overrides applied.
  EnvSpec make_spec() const;
  TargetGap make_gap(const EnvSpec& spec) const;
};

Json to_json(const PpoConfig& c);
PpoConfig ppo_config_from_json(const Json& j, PpoConfig base = {});
Json to_json(const PolicyTrainConfig& c);
PolicyTrainConfig policy_config_from_json(const Json& j, PolicyTrainConfig base = {});
Json to_json(const TaskRewardConfig& c);
TaskRewardConfig reward_from_json(const Json& j, TaskRewardConfig base = {});

struct TrajectoryFileHeader {
  int major = kTrajectorySchemaMajor;
  int minor = kTrajectorySchemaMinor;
  std::string env;
  int obs_dim = 0;
  int action_dim = 0;
  int state_dim = 0;
  int param_dim = 0;
  Json provenance = Json::object();
};

// JSON Lines: a header object, then one transition per line. Optional fields
// (state, sampled_params, log_probs) are written only when present.
void write_trajectories(const std::filesystem::path& path, const TrajectoryFileHeader& header,
                        const std::vector<Trajectory>& trajs);
std::vector<Trajectory> read_trajectories(const std::filesystem::path& path, TrajectoryFileHeader* header = nullptr);

TrajectoryFileHeader header_for(const EnvSpec& spec, const Json& provenance = Json::object());
void write_dataset(const std::filesystem::path& path, const EnvSpec& spec, const TargetDataset& data);
TargetDataset read_dataset(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const Json& j);
Json read_json(const std::filesystem::path& path);  // ConfigError naming the path when missing

void write_identify_metrics(const std::filesystem::path& path, const std::vector<IdentifyRow>& rows,
                            const std::vector<std::string>& param_names);
void write_training_log(const std::filesystem::path& path, const std::vector<TrainingLogRow>& rows);

// Creates the directory and writes config.json.
std::filesystem::path prepare_run_dir(const std::filesystem::path& dir, const RunConfig& config);

}  // namespace advsim
