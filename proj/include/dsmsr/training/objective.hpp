#pragma once

// Generator objective of the GAN phase, shared by the trainer and the
// gradient checks:
//
//   total = alpha * ndsm + huber(sr - hr) + adv_weight * -log D(sr)
//
// The height network and the discriminator only pass gradients through.

#include "dsmsr/autograd.hpp"
#include "dsmsr/losses.hpp"
#include "dsmsr/models/discriminator.hpp"
#include "dsmsr/models/generator.hpp"
#include "dsmsr/models/ndsm_net.hpp"

namespace dsmsr {

// Records the objective in `g` and seeds its gradient; call
// g.run_backward() afterwards.
template <typename T>
LossBreakdown generator_objective(Graph<T>& g, const Generator<T>& gen, const Tensor<T>& lr, const Tensor<T>& hr,
                                  const NdsmNet<T>& ndsm, const Discriminator<T>& disc, const LossWeights& w,
                                  double epsilon, NdsmReduction red) {
  const auto sr = gen.forward(g, g.input(lr));
  const double content = huber_content(g, sr, hr, epsilon, 1.0);
  const double nd = ndsm_loss(g, sr, hr, ndsm, w.alpha, red);
  const auto gs = disc.forward(g, sr);
  const auto scores = scores_of(gs->value);
  const double adv = adversarial_g_loss(scores);
  Tensor<T> seed(gs->value.shape());
  const auto n = scores.size();
  for (std::size_t i = 0; i < n; ++i) seed[i] = static_cast<T>(w.adv_weight * adversarial_g_loss_grad(scores[i], n));
  g.accumulate_seed(gs, seed);
  return combined_loss(content, nd, adv, w);
}

// Value only, without recording a graph.
template <typename T>
LossBreakdown generator_objective_value(const Generator<T>& gen, const Tensor<T>& lr, const Tensor<T>& hr,
                                        const NdsmNet<T>& ndsm, const Discriminator<T>& disc, const LossWeights& w,
                                        double epsilon, NdsmReduction red) {
  const Tensor<T> sr = gen.infer(lr);
  const double content = huber_content(sr, hr, epsilon);
  const double nd = ndsm_loss(sr, hr, ndsm, red);
  const double adv = adversarial_g_loss(scores_of(disc.score(sr)));
  return combined_loss(content, nd, adv, w);
}

}  // namespace dsmsr
