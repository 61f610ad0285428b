#include "advsim/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "advsim/errors.hpp"

namespace advsim {

namespace {

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamp_score(double d) { return std::clamp(d, kScoreEpsilon, 1.0 - kScoreEpsilon); }

Discriminator::Discriminator(int obs_dim_, int action_dim_, const std::vector<int>& hidden, Rng& rng)
    : obs_dim(obs_dim_), action_dim(action_dim_) {
  const int in = 2 * obs_dim + action_dim;
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  net = MlpNet(sizes, rng, 1.0);
  mean = Vec::Zero(in);
  std = Vec::Ones(in);
}

Vec Discriminator::features(const TransitionTuple& t) const {
  if (t.obs.size() != obs_dim || t.next_obs.size() != obs_dim || t.action.size() != action_dim) {
    throw ContractViolation("discriminator: tuple dimensions do not match");
  }
  Vec x(input_dim());
  x << t.obs, t.action, t.next_obs;
  return (x - mean).cwiseQuotient(std);
}

Mat Discriminator::features(const std::vector<TransitionTuple>& tuples) const {
  Mat x(input_dim(), static_cast<Eigen::Index>(tuples.size()));
  for (std::size_t i = 0; i < tuples.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = features(tuples[i]);
  return x;
}

void Discriminator::fit_normalizer(const std::vector<TransitionTuple>& real) {
  if (real.empty()) throw ContractViolation("discriminator: cannot fit a normalizer to no data");
  mean = Vec::Zero(input_dim());
  std = Vec::Ones(input_dim());
  const Mat x = features(real);
  mean = x.rowwise().mean();
  const Mat centered = x.colwise() - mean;
  std = (centered.rowwise().squaredNorm() / static_cast<double>(x.cols())).cwiseSqrt().cwiseMax(1e-6);
}

double Discriminator::logit(const TransitionTuple& t) const { return net.predict(features(t))[0]; }

double Discriminator::score(const TransitionTuple& t) const { return clamp_score(sigmoid(logit(t))); }

Vec Discriminator::scores(const std::vector<TransitionTuple>& tuples) const {
  if (tuples.empty()) return Vec();
  const Mat out = net.predict(features(tuples));
  Vec s(out.cols());
  for (Eigen::Index i = 0; i < s.size(); ++i) s[i] = clamp_score(sigmoid(out(0, i)));
  return s;
}

Json Discriminator::to_json() const {
  return {{"net", mlp_to_json(net)},
          {"obs_dim", obs_dim},
          {"action_dim", action_dim},
          {"normalizer", {{"mean", vec_to_json(mean)}, {"std", vec_to_json(std)}}}};
}

Discriminator Discriminator::from_json(const Json& j) {
  Discriminator d;
  d.net = mlp_from_json(j.at("net"));
  d.obs_dim = j.at("obs_dim").get<int>();
  d.action_dim = j.at("action_dim").get<int>();
  d.mean = vec_from_json(j.at("normalizer").at("mean"));
  d.std = vec_from_json(j.at("normalizer").at("std"));
  if (d.net.input_dim() != 2 * d.obs_dim + d.action_dim || d.mean.size() != d.net.input_dim() ||
      d.std.size() != d.net.input_dim()) {
    throw ConfigError("discriminator checkpoint: inconsistent dimensions");
  }
  return d;
}

double discriminator_loss(const Vec& real_logits, const Vec& sim_logits) {
  if (real_logits.size() == 0 || sim_logits.size() == 0) throw ContractViolation("discriminator_loss: empty batch");
  double real = 0.0;
  for (Eigen::Index i = 0; i < real_logits.size(); ++i) real += softplus(-real_logits[i]);
  double sim = 0.0;
  for (Eigen::Index i = 0; i < sim_logits.size(); ++i) sim += softplus(sim_logits[i]);
  return 0.5 * (real / static_cast<double>(real_logits.size()) + sim / static_cast<double>(sim_logits.size()));
}

DiscriminatorGradient discriminator_gradient(MlpNet& net, const Mat& real_x, const Mat& sim_x) {
  if (real_x.cols() == 0 || sim_x.cols() == 0) throw ContractViolation("discriminator_gradient: empty batch");
  const Eigen::Index nr = real_x.cols();
  const Eigen::Index ns = sim_x.cols();
  Mat x(real_x.rows(), nr + ns);
  x << real_x, sim_x;
  const Mat logits = net.forward(x);
  // d loss / d logit: (sigmoid - label) / (2 n_class).
  Mat grad(1, nr + ns);
  for (Eigen::Index k = 0; k < nr; ++k) grad(0, k) = (sigmoid(logits(0, k)) - 1.0) / static_cast<double>(2 * nr);
  for (Eigen::Index k = 0; k < ns; ++k) grad(0, nr + k) = sigmoid(logits(0, nr + k)) / static_cast<double>(2 * ns);
  DiscriminatorGradient out;
  out.loss = discriminator_loss(logits.row(0).head(nr).transpose(), logits.row(0).tail(ns).transpose());
  out.grad = net.backward(grad).flatten();
  return out;
}

std::vector<double> train_discriminator(Discriminator& d, const std::vector<TransitionTuple>& real,
                                        const std::vector<TransitionTuple>& sim, const DiscriminatorConfig& config,
                                        Rng& rng, Adam* optimizer) {
  if (real.empty() || sim.empty()) throw ContractViolation("train_discriminator: both batches must be non-empty");
  Adam local(d.net.num_params(), config.learning_rate);
  Adam& opt = optimizer != nullptr ? *optimizer : local;
  opt.set_learning_rate(config.learning_rate);

  const Mat real_x = d.features(real);
  const Mat sim_x = d.features(sim);
  const std::size_t per_class = std::min(real.size(), sim.size());
  const std::size_t half = static_cast<std::size_t>(std::max(1, config.minibatch / 2));

  std::vector<Eigen::Index> ri(real.size()), si(sim.size());
  std::vector<double> history;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(ri.begin(), ri.end(), 0);
    std::iota(si.begin(), si.end(), 0);
    std::shuffle(ri.begin(), ri.end(), rng.engine());
    std::shuffle(si.begin(), si.end(), rng.engine());
    double loss_sum = 0.0;
    int batches = 0;
    for (std::size_t begin = 0; begin < per_class; begin += half) {
      const auto n = static_cast<Eigen::Index>(std::min(per_class, begin + half) - begin);
      Mat rx(d.input_dim(), n);
      Mat sx(d.input_dim(), n);
      for (Eigen::Index k = 0; k < n; ++k) {
        rx.col(k) = real_x.col(ri[begin + static_cast<std::size_t>(k)]);
        sx.col(k) = sim_x.col(si[begin + static_cast<std::size_t>(k)]);
      }
      const DiscriminatorGradient g = discriminator_gradient(d.net, rx, sx);
      loss_sum += g.loss;
      ++batches;
      Vec params = d.net.parameters();
      opt.step(params, g.grad);
      d.net.set_parameters(params);
    }
    history.push_back(loss_sum / std::max(1, batches));
  }
  d.net.clear_cache();
  return history;
}

}  // namespace advsim
