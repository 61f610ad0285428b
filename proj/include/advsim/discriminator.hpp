#pragma once

#include <vector>

#include "advsim/nn.hpp"
#include "advsim/trajectory.hpp"

namespace advsim {

inline constexpr double kScoreEpsilon = 1e-6;

double clamp_score(double d);
double sigmoid(double x);

struct DiscriminatorConfig {
  std::vector<int> hidden{64, 64};
  int epochs = 5;
  int minibatch = 256;  // half real, half simulated
  double learning_rate = 1e-3;
};

// D_w(o, a, o'): 1 = target domain, 0 = simulation. Inputs are standardized
// with statistics frozen from the target data.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int obs_dim, int action_dim, const std::vector<int>& hidden, Rng& rng);

  int input_dim() const { return net.input_dim(); }

  // Per-dimension mean/std of the real tuples; std guarded below by 1e-6.
  void fit_normalizer(const std::vector<TransitionTuple>& real);
  Vec features(const TransitionTuple& tuple) const;
  Mat features(const std::vector<TransitionTuple>& tuples) const;

  double logit(const TransitionTuple& tuple) const;
  double score(const TransitionTuple& tuple) const;
  Vec scores(const std::vector<TransitionTuple>& tuples) const;

  Json to_json() const;
  static Discriminator from_json(const Json& j);

  MlpNet net;
  Vec mean;
  Vec std;
  int obs_dim = 0;
  int action_dim = 0;
};

// Balanced cross entropy 0.5 * (mean_real -log D + mean_sim -log(1 - D)) from
// logits; ln 2 at zero logits.
double discriminator_loss(const Vec& real_logits, const Vec& sim_logits);

struct DiscriminatorGradient {
  double loss = 0.0;
  Vec grad;  // d loss / d net parameters
};

// Loss and parameter gradient on normalized features (one tuple per column).
DiscriminatorGradient discriminator_gradient(MlpNet& net, const Mat& real_x, const Mat& sim_x);

// Minibatch Adam on the balanced cross entropy. One epoch is one pass over
// min(|real|, |sim|) tuples of each class. Returns the mean loss per epoch.
std::vector<double> train_discriminator(Discriminator& d, const std::vector<TransitionTuple>& real,
                                        const std::vector<TransitionTuple>& sim, const DiscriminatorConfig& config,
                                        Rng& rng, Adam* optimizer = nullptr);

}  // namespace advsim
