#pragma once

#include <vector>

#include "advsim/nn.hpp"

namespace advsim {

enum class StdMode {
  Free,            // log_sigma is a learned vector shared by all inputs
  StateDependent,  // each branch also emits log_sigma for its slice
};

// Stochastic Gaussian model built from one MlpNet per output branch. All
// branches read the same input; branch k owns a contiguous slice of the
// output. The parameter function uses two branches (contact, actuator), the
// control policy one.
class GaussianMlp {
 public:
  GaussianMlp() = default;
  GaussianMlp(int input_dim, std::vector<int> branch_dims, std::vector<int> hidden, StdMode mode,
              double init_log_sigma, Rng& rng, double output_gain = 0.01);

  int input_dim() const { return input_dim_; }
  int output_dim() const { return output_dim_; }
  StdMode std_mode() const { return mode_; }
  const std::vector<int>& branch_dims() const { return branch_dims_; }
  const std::vector<int>& hidden() const { return hidden_; }

  GaussianHead head(const Vec& input) const;
  // Batched heads; columns are samples. log_sigma is clamped.
  void heads(const Mat& inputs, Mat& mu, Mat& log_sigma) const;

  // Caches the batch for log_prob_gradient().
  Vec log_prob(const Mat& inputs, const Mat& samples);
  // Mean entropy over the cached batch.
  double cached_entropy() const;
  // d/dparams of sum_i weight_i * log p(sample_i | input_i) + entropy_weight *
  // sum_i H_i over the cached batch.
  Vec log_prob_gradient(const Vec& weights, double entropy_weight = 0.0) const;

  std::size_t num_params() const;
  Vec parameters() const;
  void set_parameters(const Vec& flat);

  // Output-layer biases: used to start the mean (pre-squash) at a chosen point.
  void set_mean_bias(const Vec& bias);
  void set_log_sigma(double log_sigma);

  std::vector<MlpNet>& branches() { return branches_; }
  const std::vector<MlpNet>& branches() const { return branches_; }
  const Vec& free_log_sigma() const { return free_log_sigma_; }

  Json to_json() const;
  static GaussianMlp from_json(const Json& j);

 private:
  int branch_offset(std::size_t b) const;

  int input_dim_ = 0;
  int output_dim_ = 0;
  std::vector<int> branch_dims_;
  std::vector<int> hidden_;
  StdMode mode_ = StdMode::Free;
  std::vector<MlpNet> branches_;
  Vec free_log_sigma_;

  struct Cache {
    Mat samples;
    Mat mu;
    Mat raw_log_sigma;  // before clamping
  };
  std::optional<Cache> cache_;
};

}  // namespace advsim
