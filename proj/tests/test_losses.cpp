#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "dsmsr/losses.hpp"
#include "dsmsr/models/ndsm_net.hpp"
#include "support.hpp"

namespace dsmsr {
namespace {

using testing::ChannelMeanNet;
using testing::random_tensor;

Tensor<double> scalar(double v) { return Tensor<double>({1, 1, 1, 1}, v); }

TEST(Huber, HandValues) {
  EXPECT_DOUBLE_EQ(huber_content(scalar(0.05), scalar(0.0), 0.1), 0.00125);
  EXPECT_DOUBLE_EQ(huber_content(scalar(0.3), scalar(0.0), 0.1), 0.025);
  const auto x = random_tensor<double>({2, 3, 4, 4}, 1);
  EXPECT_EQ(huber_content(x, x, 0.1), 0.0);
}

TEST(Huber, MatchesOracle) {
  const auto a = random_tensor<double>({2, 3, 5, 5}, 2);
  const auto b = random_tensor<double>({2, 3, 5, 5}, 3);
  const std::vector<double> va(a.values().begin(), a.values().end()), vb(b.values().begin(), b.values().end());
  for (double eps : {0.05, 0.2, 1.0}) EXPECT_NEAR(huber_content(a, b, eps), testing::oracle_huber(va, vb, eps), 1e-14);
}

TEST(Huber, ContinuousAtTransition) {
  for (double eps : {0.01, 0.1, 1.0}) {
    EXPECT_LT(std::abs(huber_element(eps + 1e-6, eps) - huber_element(eps - 1e-6, eps)), 1e-5);
    EXPECT_DOUBLE_EQ(huber_element_grad(eps, eps), eps);
    EXPECT_DOUBLE_EQ(huber_element_grad(eps + 1e-9, eps), eps);
    EXPECT_DOUBLE_EQ(huber_element_grad(-eps - 1e-9, eps), -eps);
  }
}

TEST(Huber, GradientBranches) {
  EXPECT_DOUBLE_EQ(huber_element_grad(0.03, 0.1), 0.03);
  EXPECT_DOUBLE_EQ(huber_element_grad(-0.03, 0.1), -0.03);
  EXPECT_DOUBLE_EQ(huber_element_grad(0.7, 0.1), 0.1);
  EXPECT_DOUBLE_EQ(huber_element_grad(-0.7, 0.1), -0.1);
}

TEST(Huber, BoundedByHalfSquare) {
  const double eps = 0.1;
  for (double a = -1.0; a <= 1.0; a += 0.0137) {
    const double h = huber_element(a, eps), q = 0.5 * a * a;
    EXPECT_LE(h, q + 1e-15);
    if (std::abs(a) <= eps) {
      EXPECT_DOUBLE_EQ(h, q);
    } else {
      EXPECT_LT(h, q);
    }
  }
}

TEST(Huber, GraphSeedMatchesFiniteDifference) {
  auto sr = random_tensor<double>({1, 1, 3, 3}, 4);
  const auto hr = random_tensor<double>({1, 1, 3, 3}, 5);
  Graph<double> g;
  const auto v = g.input(sr, true);
  huber_content(g, v, hr, 0.2, 2.0);
  for (std::size_t i = 0; i < sr.size(); ++i) {
    auto up = sr, down = sr;
    up[i] += 1e-7;
    down[i] -= 1e-7;
    const double fd = 2.0 * (huber_content(up, hr, 0.2) - huber_content(down, hr, 0.2)) / 2e-7;
    EXPECT_NEAR(v->grad[i], fd, 1e-7);
  }
}

TEST(Huber, Errors) {
  EXPECT_THROW(huber_content(scalar(0), Tensor<double>({1, 1, 1, 2}), 0.1), std::invalid_argument);
  EXPECT_THROW(huber_content(scalar(0), scalar(0), 0.0), UsageError);
}

TEST(NdsmLoss, IdenticalInputsGiveZero) {
  const auto x = random_tensor<double>({2, 3, 8, 8}, 6);
  EXPECT_EQ(ndsm_loss(x, x, ChannelMeanNet<double>{}), 0.0);
  NdsmNetConfig c;
  c.depth = 2;
  c.base_channels = 4;
  NdsmNet<double> net(c, 1);
  EXPECT_EQ(ndsm_loss(x, x, net), 0.0);
}

TEST(NdsmLoss, ConstantOffsetWithStub) {
  const auto hr = random_tensor<double>({1, 3, 4, 4}, 7);
  auto sr = hr;
  for (auto& v : sr.values()) v += 0.1;
  EXPECT_NEAR(ndsm_loss(sr, hr, ChannelMeanNet<double>{}), 0.01, 1e-12);
}

TEST(NdsmLoss, MatchesBruteForce) {
  const auto sr = random_tensor<double>({3, 3, 6, 6}, 8);
  const auto hr = random_tensor<double>({3, 3, 6, 6}, 9);
  EXPECT_NEAR(ndsm_loss(sr, hr, ChannelMeanNet<double>{}), testing::oracle_channel_mean_ndsm(sr, hr), 1e-14);
}

TEST(NdsmLoss, L2NormReduction) {
  const auto sr = random_tensor<double>({2, 3, 4, 4}, 10);
  const auto hr = random_tensor<double>({2, 3, 4, 4}, 11);
  double expect = 0;
  for (int n = 0; n < 2; ++n) {
    double s = 0;
    for (int r = 0; r < 4; ++r)
      for (int q = 0; q < 4; ++q) {
        double d = 0;
        for (int c = 0; c < 3; ++c) d += (sr.at(n, c, r, q) - hr.at(n, c, r, q)) / 3;
        s += d * d;
      }
    expect += std::sqrt(s) / 2;
  }
  EXPECT_NEAR(ndsm_loss(sr, hr, ChannelMeanNet<double>{}, NdsmReduction::l2_norm), expect, 1e-14);
}

TEST(NdsmLoss, GradientOpposesHeightError) {
  // 4x4 image whose channel mean sits above the target in one half and below
  // in the other; a descent step must move each pixel toward its target.
  const auto hr = random_tensor<double>({1, 3, 4, 4}, 12, 0.3, 0.7);
  auto sr = hr;
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 4; ++r)
      for (int q = 0; q < 4; ++q) sr.at(0, c, r, q) += r < 2 ? 0.05 : -0.05;
  Graph<double> g;
  const auto v = g.input(sr, true);
  ndsm_loss(g, v, hr, ChannelMeanNet<double>{});
  g.run_backward();
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < 4; ++r)
      for (int q = 0; q < 4; ++q) {
        const double grad = v->grad.at(0, c, r, q);
        if (r < 2) {
          EXPECT_GT(grad, 0);
        } else {
          EXPECT_LT(grad, 0);
        }
        auto up = sr, down = sr;
        up.at(0, c, r, q) += 1e-6;
        down.at(0, c, r, q) -= 1e-6;
        const double fd =
            (ndsm_loss(up, hr, ChannelMeanNet<double>{}) - ndsm_loss(down, hr, ChannelMeanNet<double>{})) / 2e-6;
        EXPECT_NEAR(grad, fd, 1e-8);
      }
}

TEST(NdsmLoss, FrozenNetworkGetsNoGradient) {
  NdsmNetConfig c;
  c.depth = 2;
  c.base_channels = 4;
  NdsmNet<double> net(c, 2);
  net.params().set_trainable(false);
  Graph<double> g;
  const auto v = g.input(random_tensor<double>({1, 3, 8, 8}, 13), true);
  ndsm_loss(g, v, random_tensor<double>({1, 3, 8, 8}, 14), net);
  g.run_backward();
  EXPECT_FALSE(v->grad.empty());
  for (const auto& e : net.params().entries()) EXPECT_TRUE(e.var->grad.empty()) << e.name;
}

TEST(Adversarial, HandValues) {
  EXPECT_EQ(adversarial_g_loss(std::vector<double>{1.0, 1.0}), 0.0);
  EXPECT_NEAR(adversarial_g_loss(std::vector<double>{0.5, 0.5, 0.5}), std::numbers::ln2, 1e-15);
  EXPECT_NEAR(adversarial_g_loss(std::vector<double>{0.0}), -std::log(1e-7), 1e-12);
  EXPECT_THROW(adversarial_g_loss(std::vector<double>{}), UsageError);
}

TEST(Adversarial, MatchesOracleAndDecreases) {
  const std::vector<double> s{0.1, 0.4, 0.93, 1e-9};
  EXPECT_NEAR(adversarial_g_loss(s), testing::oracle_adversarial(s), 1e-14);
  for (std::size_t i = 0; i < s.size(); ++i) {
    auto t = s;
    t[i] = std::min(1.0, t[i] + 0.05);
    EXPECT_LT(adversarial_g_loss(t), adversarial_g_loss(s));
  }
}

TEST(Discriminator, HandValues) {
  const double h08 = -(0.8 * std::log(0.8) + 0.2 * std::log(0.2));
  EXPECT_NEAR(discriminator_loss(std::vector<double>{0.8, 0.8}, std::vector<double>{0.0, 0.0}, 0.2), h08, 1e-6);
  EXPECT_NEAR(h08, 0.5004, 1e-4);
  EXPECT_LT(discriminator_loss(std::vector<double>{1.0}, std::vector<double>{1e-7}, 0.0), 1e-6);
  EXPECT_NEAR(discriminator_loss(std::vector<double>{0.5}, std::vector<double>{0.5}, 0.0), 2 * std::numbers::ln2,
              1e-15);
}

TEST(Discriminator, MatchesOracleAndGradients) {
  const std::vector<double> real{0.7, 0.2, 0.95}, fake{0.3, 0.6};
  EXPECT_NEAR(discriminator_loss(real, fake, 0.2), testing::oracle_discriminator(real, fake, 0.2), 1e-14);
  for (std::size_t i = 0; i < real.size(); ++i) {
    auto up = real, down = real;
    up[i] += 1e-7;
    down[i] -= 1e-7;
    const double fd = (discriminator_loss(up, fake, 0.2) - discriminator_loss(down, fake, 0.2)) / 2e-7;
    EXPECT_NEAR(discriminator_loss_grad_real(real[i], real.size(), 0.2), fd, 1e-6);
  }
  for (std::size_t i = 0; i < fake.size(); ++i) {
    auto up = fake, down = fake;
    up[i] += 1e-7;
    down[i] -= 1e-7;
    const double fd = (discriminator_loss(real, up, 0.2) - discriminator_loss(real, down, 0.2)) / 2e-7;
    EXPECT_NEAR(discriminator_loss_grad_fake(fake[i], fake.size()), fd, 1e-6);
  }
}

TEST(Combined, HandValues) {
  LossWeights w;
  w.alpha = 0.01;
  w.adv_weight = 0.001;
  EXPECT_NEAR(combined_loss(1, 1, 1, w).total, 1.011, 1e-15);
  EXPECT_EQ(combined_loss(0, 0, 0, w).total, 0.0);
  w.alpha = w.adv_weight = 0;
  EXPECT_EQ(combined_loss(0.3, 5, 7, w).total, 0.3);
}

TEST(Combined, LinearInEachComponent) {
  LossWeights w;
  const auto base = combined_loss(0.2, 1.5, 0.7, w);
  for (double c : {0.5, 2.0, 3.0}) {
    EXPECT_NEAR(combined_loss(0.2, 1.5 * c, 0.7, w).total - base.total, (c - 1) * 1.5 * w.alpha, 1e-15);
    EXPECT_NEAR(combined_loss(0.2, 1.5, 0.7 * c, w).total - base.total, (c - 1) * 0.7 * w.adv_weight, 1e-15);
  }
  w.alpha = -1;
  EXPECT_THROW(combined_loss(0, 0, 0, w), UsageError);
}

TEST(Epsilon, TwiceTheMae) {
  EXPECT_DOUBLE_EQ(select_epsilon(0.02), 0.04);
  EXPECT_DOUBLE_EQ(select_epsilon(0.5), 1.0);
  EXPECT_THROW(select_epsilon(0.0), DataError);
  EXPECT_THROW(select_epsilon(-0.1), DataError);
}

TEST(Mae, ValueAndSubgradient) {
  Tensor<double> a({1, 1, 1, 3}, std::vector<double>{0.1, 0.5, 0.5});
  Tensor<double> b({1, 1, 1, 3}, std::vector<double>{0.3, 0.2, 0.5});
  EXPECT_NEAR(mean_absolute_error(a, b), (0.2 + 0.3) / 3, 1e-15);
  Graph<double> g;
  const auto v = g.input(a, true);
  mean_absolute_error(g, v, b);
  g.run_backward();
  EXPECT_DOUBLE_EQ(v->grad[0], -1.0 / 3);
  EXPECT_DOUBLE_EQ(v->grad[1], 1.0 / 3);
  EXPECT_DOUBLE_EQ(v->grad[2], 0.0);
}

}  // namespace
}  // namespace dsmsr
