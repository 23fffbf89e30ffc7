#pragma once

#include <algorithm>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsmsr/autograd.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/kv.hpp"
#include "dsmsr/models/params.hpp"

namespace dsmsr {

// SRGAN-style classifier: pairs of (3x3 stride 1, 3x3 stride 2) convs with
// doubling widths, then two dense layers and a sigmoid.
struct DiscriminatorConfig {
  int input_px = 128;
  int base_channels = 16;
  int strided_stages = 4;
  int dense_units = 64;

  int total_stride() const { return 1 << strided_stages; }

  void validate() const {
    if (base_channels < 1 || dense_units < 1 || strided_stages < 1) {
      throw UsageError("discriminator counts must be >= 1");
    }
    if (input_px < total_stride() || input_px % total_stride() != 0) {
      throw UsageError("discriminator input_px " + std::to_string(input_px) + " is not divisible by total stride " +
                       std::to_string(total_stride()));
    }
  }

  KeyValues to_kv() const {
    return {{"input_px", std::to_string(input_px)},
            {"base_channels", std::to_string(base_channels)},
            {"strided_stages", std::to_string(strided_stages)},
            {"dense_units", std::to_string(dense_units)}};
  }

  static DiscriminatorConfig from_kv(const KeyValues& kv) {
    DiscriminatorConfig c;
    c.input_px = static_cast<int>(parse_int("input_px", kv.at("input_px")));
    c.base_channels = static_cast<int>(parse_int("base_channels", kv.at("base_channels")));
    c.strided_stages = static_cast<int>(parse_int("strided_stages", kv.at("strided_stages")));
    c.dense_units = static_cast<int>(parse_int("dense_units", kv.at("dense_units")));
    c.validate();
    return c;
  }

  bool operator==(const DiscriminatorConfig&) const = default;
};

template <typename T>
class Discriminator {
 public:
  explicit Discriminator(const DiscriminatorConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    int in = 3;
    for (int s = 0; s < config_.strided_stages; ++s) {
      const int width = config_.base_channels << std::min(s, 3);
      const std::string p = "stage" + std::to_string(s);
      convs_.push_back(Conv<T>::make(params_, p + ".conv", in, width, 3, rng));
      convs_.push_back(Conv<T>::make(params_, p + ".down", width, width, 3, rng, 1.0, 2));
      in = width;
    }
    const int side = config_.input_px / config_.total_stride();
    const int features = in * side * side;
    hidden_w_ = params_.add("dense0.weight", he_normal<T>(Shape{config_.dense_units, features, 1, 1}, rng));
    hidden_b_ = params_.add("dense0.bias", Tensor<T>(Shape{1, config_.dense_units, 1, 1}));
    out_w_ = params_.add("dense1.weight", he_normal<T>(Shape{1, config_.dense_units, 1, 1}, rng, 0.5));
    out_b_ = params_.add("dense1.bias", Tensor<T>(Shape{1, 1, 1, 1}));
  }

  Discriminator(const Discriminator&) = delete;
  Discriminator& operator=(const Discriminator&) = delete;
  Discriminator(Discriminator&&) noexcept = default;
  Discriminator& operator=(Discriminator&&) noexcept = default;

  const DiscriminatorConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  // images [N, 3, px, px] -> probabilities [N, 1, 1, 1] of "real HR".
  Var<T> forward(Graph<T>& g, const Var<T>& images) const {
    const Shape s = images->value.shape();
    if (s.c != 3 || s.h != config_.input_px || s.w != config_.input_px) {
      throw DataError("discriminator expects [N,3," + std::to_string(config_.input_px) + "," +
                      std::to_string(config_.input_px) + "], got " + s.str());
    }
    auto x = images;
    for (const auto& conv : convs_) x = leaky_relu(g, conv(g, x), T(0.2));
    x = leaky_relu(g, dense(g, x, hidden_w_, hidden_b_), T(0.2));
    return sigmoid(g, dense(g, x, out_w_, out_b_));
  }

  Tensor<T> score(const Tensor<T>& images) const {
    Graph<T> g(false);
    return forward(g, g.input(images))->value;
  }

 private:
  DiscriminatorConfig config_;
  ParamSet<T> params_;
  std::vector<Conv<T>> convs_;
  Var<T> hidden_w_, hidden_b_, out_w_, out_b_;
};

}  // namespace dsmsr
