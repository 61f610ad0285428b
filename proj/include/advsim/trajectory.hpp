#pragma once

#include <cstddef>
#include <vector>

#include "advsim/nn.hpp"

namespace advsim {

// (o_t, a_t, o_{t+1}): the unit the discriminator sees.
struct TransitionTuple {
  Vec obs;
  Vec action;
  Vec next_obs;
};

struct Transition {
  Vec obs;
  Vec action;  // executed (clipped) command
  Vec next_obs;
  double reward = 0.0;
  bool done = false;

  // Sampled intermediates; empty when not recorded.
  Vec state;
  Vec next_state;
  Vec action_sample;  // policy sample before clipping
  double action_log_prob = 0.0;
  Vec param_input;
  Vec param_sample;  // parameter-function sample before squashing
  Vec params;        // c_t
  double param_log_prob = 0.0;
  Vec torque_noise;
  Vec next_obs_noise;

  TransitionTuple tuple() const { return {obs, action, next_obs}; }
};

struct Trajectory {
  int episode_id = 0;
  Vec initial_state;
  Vec initial_obs_noise;
  std::vector<Transition> steps;
  bool fell = false;      // left the healthy bounds
  bool diverged = false;  // simulation produced a non-finite state
  bool has_intermediates = false;

  std::size_t length() const { return steps.size(); }
  double total_reward() const;
};

double mean_length(const std::vector<Trajectory>& trajs);
std::size_t total_steps(const std::vector<Trajectory>& trajs);
std::vector<TransitionTuple> tuples_of(const std::vector<Trajectory>& trajs);

}  // namespace advsim
