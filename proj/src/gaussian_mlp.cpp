#include "advsim/gaussian_mlp.hpp"

#include <numeric>

#include "advsim/errors.hpp"

namespace advsim {

namespace {

std::vector<int> branch_layers(int input_dim, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

bool clamped(double raw) { return raw < kLogSigmaMin || raw > kLogSigmaMax; }

}  // namespace

GaussianMlp::GaussianMlp(int input_dim, std::vector<int> branch_dims, std::vector<int> hidden,
                         StdMode mode, double init_log_sigma, Rng& rng, double output_gain)
    : input_dim_(input_dim),
      branch_dims_(std::move(branch_dims)),
      hidden_(std::move(hidden)),
      mode_(mode) {
  if (branch_dims_.empty()) throw ContractViolation("GaussianMlp needs at least one branch");
  output_dim_ = std::accumulate(branch_dims_.begin(), branch_dims_.end(), 0);
  for (int dim : branch_dims_) {
    if (dim <= 0) throw ContractViolation("GaussianMlp branch dims must be positive");
    const int out = mode_ == StdMode::StateDependent ? 2 * dim : dim;
    branches_.emplace_back(branch_layers(input_dim_, hidden_, out), rng, output_gain);
  }
  if (mode_ == StdMode::Free) {
    free_log_sigma_ = Vec::Constant(output_dim_, init_log_sigma);
  } else {
    set_log_sigma(init_log_sigma);
  }
}

int GaussianMlp::branch_offset(std::size_t b) const {
  return std::accumulate(branch_dims_.begin(), branch_dims_.begin() + static_cast<long>(b), 0);
}

GaussianHead GaussianMlp::head(const Vec& input) const {
  Mat mu, log_sigma;
  heads(Mat(input), mu, log_sigma);
  return GaussianHead(mu.col(0), log_sigma.col(0));
}

void GaussianMlp::heads(const Mat& inputs, Mat& mu, Mat& log_sigma) const {
  if (inputs.rows() != input_dim_) throw ContractViolation("GaussianMlp input dimension mismatch");
  mu.resize(output_dim_, inputs.cols());
  log_sigma.resize(output_dim_, inputs.cols());
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const int off = branch_offset(b);
    const int dim = branch_dims_[b];
    Mat out = branches_[b].predict(inputs);
    mu.middleRows(off, dim) = out.topRows(dim);
    if (mode_ == StdMode::StateDependent) {
      log_sigma.middleRows(off, dim) = out.bottomRows(dim);
    } else {
      log_sigma.middleRows(off, dim) = free_log_sigma_.segment(off, dim).replicate(1, inputs.cols());
    }
  }
  log_sigma = log_sigma.unaryExpr([](double v) { return clamp_log_sigma(v); });
}

Vec GaussianMlp::log_prob(const Mat& inputs, const Mat& samples) {
  if (inputs.rows() != input_dim_ || samples.rows() != output_dim_ || inputs.cols() != samples.cols()) {
    throw ContractViolation("GaussianMlp::log_prob shape mismatch");
  }
  Cache cache;
  cache.samples = samples;
  cache.mu.resize(output_dim_, inputs.cols());
  cache.raw_log_sigma.resize(output_dim_, inputs.cols());
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const int off = branch_offset(b);
    const int dim = branch_dims_[b];
    Mat out = branches_[b].forward(inputs);
    cache.mu.middleRows(off, dim) = out.topRows(dim);
    if (mode_ == StdMode::StateDependent) {
      cache.raw_log_sigma.middleRows(off, dim) = out.bottomRows(dim);
    } else {
      cache.raw_log_sigma.middleRows(off, dim) =
          free_log_sigma_.segment(off, dim).replicate(1, inputs.cols());
    }
  }
  const Mat ls = cache.raw_log_sigma.unaryExpr([](double v) { return clamp_log_sigma(v); });
  const Mat z = (samples - cache.mu).array() * (-ls.array()).exp();
  Vec lp = (-kHalfLog2Pi - ls.array() - 0.5 * z.array().square()).colwise().sum().transpose();
  cache_ = std::move(cache);
  return lp;
}

double GaussianMlp::cached_entropy() const {
  if (!cache_) throw ContractViolation("GaussianMlp::cached_entropy called before log_prob");
  const Mat ls = cache_->raw_log_sigma.unaryExpr([](double v) { return clamp_log_sigma(v); });
  const double n = static_cast<double>(ls.cols());
  return ls.sum() / n + static_cast<double>(output_dim_) * (0.5 + kHalfLog2Pi);
}

Vec GaussianMlp::log_prob_gradient(const Vec& weights, double entropy_weight) const {
  if (!cache_) throw ContractViolation("GaussianMlp::log_prob_gradient called before log_prob");
  const Cache& c = *cache_;
  if (weights.size() != c.samples.cols()) throw ContractViolation("log_prob_gradient weight count mismatch");

  const Mat ls = c.raw_log_sigma.unaryExpr([](double v) { return clamp_log_sigma(v); });
  const Mat inv_var = (-2.0 * ls.array()).exp();
  const Mat diff = c.samples - c.mu;
  // d logp / d mu = (x - mu) / sigma^2 ; d logp / d log_sigma = (x - mu)^2 / sigma^2 - 1
  Mat d_mu = diff.cwiseProduct(inv_var);
  Mat d_ls = diff.cwiseAbs2().cwiseProduct(inv_var).array() - 1.0;
  d_mu = d_mu * weights.asDiagonal();
  d_ls = d_ls * weights.asDiagonal();
  d_ls.array() += entropy_weight;
  for (Eigen::Index j = 0; j < d_ls.cols(); ++j) {
    for (Eigen::Index i = 0; i < d_ls.rows(); ++i) {
      if (clamped(c.raw_log_sigma(i, j))) d_ls(i, j) = 0.0;
    }
  }

  Vec grad(static_cast<Eigen::Index>(num_params()));
  Eigen::Index offset = 0;
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const int off = branch_offset(b);
    const int dim = branch_dims_[b];
    Mat out_grad;
    if (mode_ == StdMode::StateDependent) {
      out_grad.resize(2 * dim, d_mu.cols());
      out_grad.topRows(dim) = d_mu.middleRows(off, dim);
      out_grad.bottomRows(dim) = d_ls.middleRows(off, dim);
    } else {
      out_grad = d_mu.middleRows(off, dim);
    }
    const Vec g = branches_[b].backward(out_grad).flatten();
    grad.segment(offset, g.size()) = g;
    offset += g.size();
  }
  if (mode_ == StdMode::Free) grad.segment(offset, output_dim_) = d_ls.rowwise().sum();
  return grad;
}

std::size_t GaussianMlp::num_params() const {
  std::size_t n = 0;
  for (const auto& net : branches_) n += net.num_params();
  if (mode_ == StdMode::Free) n += static_cast<std::size_t>(output_dim_);
  return n;
}

Vec GaussianMlp::parameters() const {
  Vec flat(static_cast<Eigen::Index>(num_params()));
  Eigen::Index offset = 0;
  for (const auto& net : branches_) {
    const Vec p = net.parameters();
    flat.segment(offset, p.size()) = p;
    offset += p.size();
  }
  if (mode_ == StdMode::Free) flat.segment(offset, output_dim_) = free_log_sigma_;
  return flat;
}

void GaussianMlp::set_parameters(const Vec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(num_params())) {
    throw ContractViolation("GaussianMlp::set_parameters size mismatch");
  }
  Eigen::Index offset = 0;
  for (auto& net : branches_) {
    const auto n = static_cast<Eigen::Index>(net.num_params());
    net.set_parameters(flat.segment(offset, n));
    offset += n;
  }
  if (mode_ == StdMode::Free) free_log_sigma_ = flat.segment(offset, output_dim_);
  cache_.reset();
}

void GaussianMlp::set_mean_bias(const Vec& bias) {
  if (bias.size() != output_dim_) throw ContractViolation("set_mean_bias: size mismatch");
  for (std::size_t b = 0; b < branches_.size(); ++b) {
    const int dim = branch_dims_[b];
    branches_[b].layers().back().bias.head(dim) = bias.segment(branch_offset(b), dim);
  }
  cache_.reset();
}

void GaussianMlp::set_log_sigma(double log_sigma) {
  if (mode_ == StdMode::Free) {
    free_log_sigma_.setConstant(log_sigma);
  } else {
    for (std::size_t b = 0; b < branches_.size(); ++b) {
      const int dim = branch_dims_[b];
      branches_[b].layers().back().bias.tail(dim).setConstant(log_sigma);
    }
  }
  cache_.reset();
}

Json GaussianMlp::to_json() const {
  Json branches = Json::array();
  for (const auto& net : branches_) branches.push_back(mlp_to_json(net));
  Json j{{"input_dim", input_dim_},
         {"branch_dims", branch_dims_},
         {"hidden", hidden_},
         {"std_mode", mode_ == StdMode::Free ? "free" : "state_dependent"},
         {"branches", branches}};
  if (mode_ == StdMode::Free) j["log_sigma"] = vec_to_json(free_log_sigma_);
  return j;
}

GaussianMlp GaussianMlp::from_json(const Json& j) {
  GaussianMlp model;
  model.input_dim_ = j.at("input_dim").get<int>();
  model.branch_dims_ = j.at("branch_dims").get<std::vector<int>>();
  model.hidden_ = j.at("hidden").get<std::vector<int>>();
  model.mode_ = j.at("std_mode").get<std::string>() == "free" ? StdMode::Free : StdMode::StateDependent;
  model.output_dim_ = std::accumulate(model.branch_dims_.begin(), model.branch_dims_.end(), 0);
  for (const auto& b : j.at("branches")) model.branches_.push_back(mlp_from_json(b));
  if (model.branches_.size() != model.branch_dims_.size()) {
    throw ConfigError("GaussianMlp checkpoint: branch count mismatch");
  }
  if (model.mode_ == StdMode::Free) model.free_log_sigma_ = vec_from_json(j.at("log_sigma"));
  return model;
}

}  // namespace advsim
