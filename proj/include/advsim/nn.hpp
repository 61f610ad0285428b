#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "advsim/rng.hpp"

namespace advsim {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Json = nlohmann::json;

struct DenseLayer {
  Mat weight;  // rows = fan_out, cols = fan_in
  Vec bias;
};

// Gradients with the same layout as MlpNet::layers().
struct MlpGradients {
  std::vector<Mat> weight;
  std::vector<Vec> bias;

  Vec flatten() const;
};

// Feed-forward network: tanh on hidden layers, identity on the output.
//
// Batched calls take one sample per column. forward() caches activations for
// a following backward(); predict() is the cache-free const path used during
// rollouts.
class MlpNet {
 public:
  MlpNet() = default;

  // Fan-in uniform init: W ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), b = 0. The
  // last layer's weights are multiplied by output_gain.
  MlpNet(std::vector<int> layer_sizes, Rng& rng, double output_gain = 1.0);

  static MlpNet zeros(std::vector<int> layer_sizes);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }

  Vec forward(const Vec& x);
  Mat forward(const Mat& batch);
  Vec predict(const Vec& x) const;
  Mat predict(const Mat& batch) const;

  // Gradient of sum_j <output_grad_j, output_j> over the cached batch.
  MlpGradients backward(const Mat& output_grad) const;
  MlpGradients backward(const Vec& output_grad) const;
  bool has_cache() const { return cache_.has_value(); }
  void clear_cache() { cache_.reset(); }

  std::size_t num_params() const;
  Vec parameters() const;
  void set_parameters(const Vec& flat);

  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }

 private:
  void check_input(Eigen::Index rows) const;

  std::vector<int> sizes_;
  std::vector<DenseLayer> layers_;
  // activations[0] is the input, activations[k] the output of layer k.
  std::optional<std::vector<Mat>> cache_;
};

// Checkpoint schema: {"layer_sizes": [...], "layers": [{"weight": [row-major
// flat], "bias": [...]}, ...]}.
Json mlp_to_json(const MlpNet& net);
MlpNet mlp_from_json(const Json& j);

inline constexpr double kLogSigmaMin = -5.0;
inline constexpr double kLogSigmaMax = 2.0;

// Diagonal Gaussian with log_sigma clamped to [kLogSigmaMin, kLogSigmaMax].
struct GaussianHead {
  Vec mu;
  Vec log_sigma;

  GaussianHead() = default;
  GaussianHead(Vec mean, Vec log_std);

  Vec sigma() const { return log_sigma.array().exp(); }
  Eigen::Index dim() const { return mu.size(); }
};

struct GaussianDraw {
  Vec sample;
  Vec noise;  // z with sample = mu + sigma * z
  double log_prob = 0.0;
};

GaussianDraw gaussian_sample(const GaussianHead& head, Rng& rng);
double gaussian_log_prob(const GaussianHead& head, const Vec& x);
double gaussian_entropy(const GaussianHead& head);
double clamp_log_sigma(double log_sigma);

inline constexpr double kHalfLog2Pi = 0.91893853320467274178;

// Log-density of N(0, sigma^2) evaluated at x.
inline double normal_log_density(double x, double sigma) {
  const double z = x / sigma;
  return -kHalfLog2Pi - std::log(sigma) - 0.5 * z * z;
}

// Adam over a flat parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t num_params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double epsilon = 1e-8);

  void step(Vec& params, const Vec& grad);

  double learning_rate() const { return lr_; }
  void set_learning_rate(double lr) { lr_ = lr; }
  long steps() const { return t_; }
  const Vec& first_moment() const { return m_; }
  const Vec& second_moment() const { return v_; }

 private:
  double lr_ = 1e-3;
  double beta1_ = 0.9;
  double beta2_ = 0.999;
  double eps_ = 1e-8;
  long t_ = 0;
  Vec m_;
  Vec v_;
};

// Scales grad in place so its L2 norm is at most max_norm; returns the norm.
double clip_grad_norm(Vec& grad, double max_norm);

Json vec_to_json(const Vec& v);
Vec vec_from_json(const Json& j);

}  // namespace advsim
