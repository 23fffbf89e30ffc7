#pragma once

// Loss terms of the super-resolution objective
//
//   total = alpha * ndsm + content + adv_weight * adversarial
//
// All terms reduce by the mean over batch and pixels. Functions that take a
// Graph also seed d(weight * loss)/d(input) into it, so several terms can
// share a single reverse sweep.

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsmsr/autograd.hpp"
#include "dsmsr/error.hpp"

namespace dsmsr {

// Lower clamp applied to probabilities before logarithms.
inline constexpr double kScoreClamp = 1e-7;

struct LossWeights {
  double alpha = 0.01;        // ndsm term
  double adv_weight = 0.001;  // adversarial term
  std::optional<double> epsilon;  // Huber transition point; unset until chosen
  double label_smoothing = 0.2;

  void validate() const {
    if (alpha < 0) throw UsageError("alpha must be >= 0");
    if (adv_weight < 0) throw UsageError("adv_weight must be >= 0");
    if (epsilon && !(*epsilon > 0)) throw UsageError("epsilon must be > 0");
    if (!(label_smoothing >= 0 && label_smoothing < 0.5)) throw UsageError("label_smoothing must lie in [0, 0.5)");
  }
};

struct LossBreakdown {
  double content = 0;
  double ndsm = 0;
  double adversarial = 0;
  double total = 0;
};

// Per-element Huber value with the continuous linear branch eps*|a| - eps^2/2.
inline double huber_element(double a, double eps) {
  const double m = std::abs(a);
  return m <= eps ? 0.5 * a * a : eps * m - 0.5 * eps * eps;
}

inline double huber_element_grad(double a, double eps) {
  return std::abs(a) <= eps ? a : (a > 0 ? eps : -eps);
}

template <typename T>
double huber_content(const Tensor<T>& sr, const Tensor<T>& hr, double epsilon) {
  require_same_shape(sr.shape(), hr.shape(), "huber_content");
  if (!(epsilon > 0)) throw UsageError("epsilon must be > 0");
  double acc = 0;
  for (std::size_t i = 0; i < sr.size(); ++i) acc += huber_element(double(sr[i]) - double(hr[i]), epsilon);
  return acc / static_cast<double>(sr.size());
}

template <typename T>
double huber_content(Graph<T>& g, const Var<T>& sr, const Tensor<T>& hr, double epsilon, double weight = 1.0) {
  const double value = huber_content(sr->value, hr, epsilon);
  Tensor<T> seed(sr->value.shape());
  const double scale = weight / static_cast<double>(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) {
    seed[i] = static_cast<T>(scale * huber_element_grad(double(sr->value[i]) - double(hr[i]), epsilon));
  }
  g.accumulate_seed(sr, seed);
  return value;
}

template <typename T>
double mean_absolute_error(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "mean_absolute_error");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(double(a[i]) - double(b[i]));
  return acc / static_cast<double>(a.size());
}

// MAE with subgradient sign(a) (0 at a == 0).
template <typename T>
double mean_absolute_error(Graph<T>& g, const Var<T>& pred, const Tensor<T>& target, double weight = 1.0) {
  const double value = mean_absolute_error(pred->value, target);
  Tensor<T> seed(pred->value.shape());
  const double scale = weight / static_cast<double>(seed.size());
  for (std::size_t i = 0; i < seed.size(); ++i) {
    const double a = double(pred->value[i]) - double(target[i]);
    seed[i] = static_cast<T>(a > 0 ? scale : a < 0 ? -scale : 0.0);
  }
  g.accumulate_seed(pred, seed);
  return value;
}

enum class NdsmReduction {
  mean_square,  // mean over pixels of the squared height difference
  l2_norm,      // per-image Euclidean norm of the difference, mean over batch
};

namespace detail {
template <typename T>
double ndsm_reduce(const Tensor<T>& hs, const Tensor<T>& hh, NdsmReduction red, Tensor<T>* grad, double weight) {
  require_same_shape(hs.shape(), hh.shape(), "ndsm_loss heightmaps");
  const int n = hs.n();
  const std::size_t per = hs.size() / static_cast<std::size_t>(n);
  double total = 0;
  for (int b = 0; b < n; ++b) {
    const T* s = hs.sample(b);
    const T* h = hh.sample(b);
    double sq = 0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = double(s[i]) - double(h[i]);
      sq += d * d;
    }
    if (red == NdsmReduction::mean_square) {
      total += sq;
      if (grad) {
        const double k = 2.0 * weight / static_cast<double>(hs.size());
        T* gp = grad->sample(b);
        for (std::size_t i = 0; i < per; ++i) gp[i] = static_cast<T>(k * (double(s[i]) - double(h[i])));
      }
    } else {
      const double norm = std::sqrt(sq);
      total += norm;
      if (grad) {
        T* gp = grad->sample(b);
        const double k = norm > 0 ? weight / (n * norm) : 0.0;
        for (std::size_t i = 0; i < per; ++i) gp[i] = static_cast<T>(k * (double(s[i]) - double(h[i])));
      }
    }
  }
  return red == NdsmReduction::mean_square ? total / static_cast<double>(hs.size()) : total / n;
}
}  // namespace detail

// Height-map consistency through a frozen estimator `net` (anything with
// forward(Graph&, Var) -> Var).
template <typename T, typename Net>
double ndsm_loss(const Tensor<T>& sr, const Tensor<T>& hr, const Net& net,
                 NdsmReduction red = NdsmReduction::mean_square) {
  require_same_shape(sr.shape(), hr.shape(), "ndsm_loss");
  Graph<T> g(false);
  const auto hs = net.forward(g, g.input(sr));
  const auto hh = net.forward(g, g.input(hr));
  return detail::ndsm_reduce(hs->value, hh->value, red, static_cast<Tensor<T>*>(nullptr), 1.0);
}

// Graph form: the HR branch is evaluated without recording; gradients reach
// `sr` only.
template <typename T, typename Net>
double ndsm_loss(Graph<T>& g, const Var<T>& sr, const Tensor<T>& hr, const Net& net, double weight = 1.0,
                 NdsmReduction red = NdsmReduction::mean_square) {
  require_same_shape(sr->value.shape(), hr.shape(), "ndsm_loss");
  Graph<T> frozen(false);
  const auto hh = net.forward(frozen, frozen.input(hr));
  const auto hs = net.forward(g, sr);
  Tensor<T> seed(hs->value.shape());
  const double value = detail::ndsm_reduce(hs->value, hh->value, red, &seed, weight);
  g.accumulate_seed(hs, seed);
  return value;
}

// Non-saturating generator loss: mean of -log(score).
inline double adversarial_g_loss(std::span<const double> fake_scores) {
  if (fake_scores.empty()) throw UsageError("adversarial_g_loss needs at least one score");
  double acc = 0;
  for (double s : fake_scores) acc -= std::log(std::max(s, kScoreClamp));
  return acc / static_cast<double>(fake_scores.size());
}

inline double adversarial_g_loss_grad(double score, std::size_t batch) {
  return score > kScoreClamp ? -1.0 / (static_cast<double>(batch) * score) : 0.0;
}

namespace detail {
inline double clamp_prob(double s) { return std::clamp(s, kScoreClamp, 1.0 - kScoreClamp); }
inline double bce(double target, double s) {
  const double p = clamp_prob(s);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}
inline double bce_grad(double target, double s) {
  if (s <= kScoreClamp || s >= 1.0 - kScoreClamp) return 0.0;
  return -target / s + (1.0 - target) / (1.0 - s);
}
}  // namespace detail

// Sum of the mean binary cross-entropies of the real batch (target
// 1 - label_smoothing) and the fake batch (target 0).
inline double discriminator_loss(std::span<const double> real_scores, std::span<const double> fake_scores,
                                 double label_smoothing) {
  if (real_scores.empty() || fake_scores.empty()) throw UsageError("discriminator_loss needs scores");
  const double t = 1.0 - label_smoothing;
  double real = 0, fake = 0;
  for (double s : real_scores) real += detail::bce(t, s);
  for (double s : fake_scores) fake += detail::bce(0.0, s);
  return real / static_cast<double>(real_scores.size()) + fake / static_cast<double>(fake_scores.size());
}

inline double discriminator_loss_grad_real(double score, std::size_t batch, double label_smoothing) {
  return detail::bce_grad(1.0 - label_smoothing, score) / static_cast<double>(batch);
}
inline double discriminator_loss_grad_fake(double score, std::size_t batch) {
  return detail::bce_grad(0.0, score) / static_cast<double>(batch);
}

inline LossBreakdown combined_loss(double content, double ndsm, double adversarial, const LossWeights& w) {
  w.validate();
  return {content, ndsm, adversarial, w.alpha * ndsm + content + w.adv_weight * adversarial};
}

// Huber transition point from the MAE reached by generator pretraining.
inline double select_epsilon(double pretrain_mae) {
  if (!(pretrain_mae > 0)) {
    throw DataError("pretrain MAE must be > 0 to select epsilon (degenerate pretraining)");
  }
  return 2.0 * pretrain_mae;
}

template <typename T>
std::vector<double> scores_of(const Tensor<T>& probs) {
  return std::vector<double>(probs.values().begin(), probs.values().end());
}

}  // namespace dsmsr
