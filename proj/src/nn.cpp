#include "advsim/nn.hpp"

#include <algorithm>
#include <string>

#include "advsim/errors.hpp"

namespace advsim {

Vec MlpGradients::flatten() const {
  Eigen::Index total = 0;
  for (std::size_t k = 0; k < weight.size(); ++k) total += weight[k].size() + bias[k].size();
  Vec flat(total);
  Eigen::Index offset = 0;
  for (std::size_t k = 0; k < weight.size(); ++k) {
    flat.segment(offset, weight[k].size()) = Eigen::Map<const Vec>(weight[k].data(), weight[k].size());
    offset += weight[k].size();
    flat.segment(offset, bias[k].size()) = bias[k];
    offset += bias[k].size();
  }
  return flat;
}

MlpNet::MlpNet(std::vector<int> layer_sizes, Rng& rng, double output_gain)
    : sizes_(std::move(layer_sizes)) {
  if (sizes_.size() < 2) throw ContractViolation("MlpNet needs at least input and output sizes");
  for (int s : sizes_) {
    if (s <= 0) throw ContractViolation("MlpNet layer sizes must be positive");
  }
  layers_.resize(sizes_.size() - 1);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const int fan_in = sizes_[k];
    const int fan_out = sizes_[k + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    const double gain = (k + 1 == layers_.size()) ? output_gain : 1.0;
    Mat w(fan_out, fan_in);
    // Column-major fill order is fixed, so a seed fully determines the weights.
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = gain * rng.uniform(-bound, bound);
    }
    layers_[k] = {std::move(w), Vec::Zero(fan_out)};
  }
}

MlpNet MlpNet::zeros(std::vector<int> layer_sizes) {
  Rng rng(0);
  MlpNet net(std::move(layer_sizes), rng);
  for (auto& layer : net.layers_) {
    layer.weight.setZero();
    layer.bias.setZero();
  }
  return net;
}

void MlpNet::check_input(Eigen::Index rows) const {
  if (sizes_.empty()) throw ContractViolation("MlpNet is empty");
  if (rows != sizes_.front()) {
    throw ContractViolation("MlpNet input dimension mismatch: expected " +
                            std::to_string(sizes_.front()) + ", got " + std::to_string(rows));
  }
}

Mat MlpNet::forward(const Mat& batch) {
  check_input(batch.rows());
  std::vector<Mat> acts;
  acts.reserve(layers_.size() + 1);
  acts.push_back(batch);
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Mat z = layers_[k].weight * acts.back();
    z.colwise() += layers_[k].bias;
    if (k + 1 < layers_.size()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  Mat out = acts.back();
  cache_ = std::move(acts);
  return out;
}

Vec MlpNet::forward(const Vec& x) {
  Mat out = forward(Mat(x));
  return out.col(0);
}

Mat MlpNet::predict(const Mat& batch) const {
  check_input(batch.rows());
  Mat a = batch;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Mat z = layers_[k].weight * a;
    z.colwise() += layers_[k].bias;
    if (k + 1 < layers_.size()) z = z.array().tanh().matrix();
    a = std::move(z);
  }
  return a;
}

Vec MlpNet::predict(const Vec& x) const {
  check_input(x.size());
  Vec a = x;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Vec z = layers_[k].weight * a + layers_[k].bias;
    if (k + 1 < layers_.size()) z = z.array().tanh().matrix();
    a = std::move(z);
  }
  return a;
}

MlpGradients MlpNet::backward(const Mat& output_grad) const {
  if (!cache_) throw ContractViolation("MlpNet::backward called before forward");
  const auto& acts = *cache_;
  if (output_grad.rows() != sizes_.back() || output_grad.cols() != acts.front().cols()) {
    throw ContractViolation("MlpNet::backward gradient shape does not match cached batch");
  }
  MlpGradients grads;
  grads.weight.resize(layers_.size());
  grads.bias.resize(layers_.size());
  Mat delta = output_grad;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    grads.weight[k] = delta * acts[k].transpose();
    grads.bias[k] = delta.rowwise().sum();
    if (k > 0) {
      Mat back = layers_[k].weight.transpose() * delta;
      // tanh'(z) = 1 - tanh(z)^2, and acts[k] holds tanh(z).
      delta = back.array() * (1.0 - acts[k].array().square());
    }
  }
  return grads;
}

MlpGradients MlpNet::backward(const Vec& output_grad) const { return backward(Mat(output_grad)); }

std::size_t MlpNet::num_params() const {
  std::size_t n = 0;
  for (const auto& layer : layers_) n += layer.weight.size() + layer.bias.size();
  return n;
}

Vec MlpNet::parameters() const {
  Vec flat(static_cast<Eigen::Index>(num_params()));
  Eigen::Index offset = 0;
  for (const auto& layer : layers_) {
    flat.segment(offset, layer.weight.size()) =
        Eigen::Map<const Vec>(layer.weight.data(), layer.weight.size());
    offset += layer.weight.size();
    flat.segment(offset, layer.bias.size()) = layer.bias;
    offset += layer.bias.size();
  }
  return flat;
}

void MlpNet::set_parameters(const Vec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(num_params())) {
    throw ContractViolation("MlpNet::set_parameters size mismatch");
  }
  Eigen::Index offset = 0;
  for (auto& layer : layers_) {
    Eigen::Map<Vec>(layer.weight.data(), layer.weight.size()) = flat.segment(offset, layer.weight.size());
    offset += layer.weight.size();
    layer.bias = flat.segment(offset, layer.bias.size());
    offset += layer.bias.size();
  }
  cache_.reset();
}

Json vec_to_json(const Vec& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Vec vec_from_json(const Json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(values.data(), static_cast<Eigen::Index>(values.size()));
}

Json mlp_to_json(const MlpNet& net) {
  Json layers = Json::array();
  for (const auto& layer : net.layers()) {
    std::vector<double> w;
    w.reserve(static_cast<std::size_t>(layer.weight.size()));
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) w.push_back(layer.weight(i, j));
    }
    layers.push_back({{"weight", w}, {"bias", vec_to_json(layer.bias)}});
  }
  return {{"layer_sizes", net.layer_sizes()}, {"activation", "tanh"}, {"layers", layers}};
}

MlpNet mlp_from_json(const Json& j) {
  MlpNet net = MlpNet::zeros(j.at("layer_sizes").get<std::vector<int>>());
  const auto& layers = j.at("layers");
  if (layers.size() != net.layers().size()) throw ConfigError("network checkpoint: layer count mismatch");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    auto& layer = net.layers()[k];
    const auto w = layers[k].at("weight").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(w.size()) != layer.weight.size()) {
      throw ConfigError("network checkpoint: weight size mismatch in layer " + std::to_string(k));
    }
    std::size_t idx = 0;
    for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = w[idx++];
    }
    layer.bias = vec_from_json(layers[k].at("bias"));
    if (layer.bias.size() != layer.weight.rows()) {
      throw ConfigError("network checkpoint: bias size mismatch in layer " + std::to_string(k));
    }
  }
  return net;
}

double clamp_log_sigma(double log_sigma) { return std::clamp(log_sigma, kLogSigmaMin, kLogSigmaMax); }

GaussianHead::GaussianHead(Vec mean, Vec log_std) : mu(std::move(mean)), log_sigma(std::move(log_std)) {
  if (mu.size() != log_sigma.size()) throw ContractViolation("GaussianHead: mu/log_sigma size mismatch");
  log_sigma = log_sigma.unaryExpr([](double v) { return clamp_log_sigma(v); });
}

GaussianDraw gaussian_sample(const GaussianHead& head, Rng& rng) {
  GaussianDraw draw;
  draw.noise = rng.normal_vector(head.dim());
  draw.sample = head.mu + head.sigma().cwiseProduct(draw.noise);
  draw.log_prob = gaussian_log_prob(head, draw.sample);
  return draw;
}

double gaussian_log_prob(const GaussianHead& head, const Vec& x) {
  if (x.size() != head.dim()) throw ContractViolation("gaussian_log_prob: dimension mismatch");
  double lp = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double z = (x[i] - head.mu[i]) * std::exp(-head.log_sigma[i]);
    lp += -kHalfLog2Pi - head.log_sigma[i] - 0.5 * z * z;
  }
  return lp;
}

double gaussian_entropy(const GaussianHead& head) {
  return head.log_sigma.sum() + static_cast<double>(head.dim()) * (0.5 + kHalfLog2Pi);
}

Adam::Adam(std::size_t num_params, double learning_rate, double beta1, double beta2, double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon),
      m_(Vec::Zero(static_cast<Eigen::Index>(num_params))),
      v_(Vec::Zero(static_cast<Eigen::Index>(num_params))) {}

void Adam::step(Vec& params, const Vec& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) {
    throw ContractViolation("Adam::step: parameter/gradient size mismatch");
  }
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_ + (1.0 - beta2_) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  params.array() -= lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

double clip_grad_norm(Vec& grad, double max_norm) {
  const double norm = grad.norm();
  if (max_norm > 0.0 && norm > max_norm) grad *= max_norm / norm;
  return norm;
}

}  // namespace advsim
