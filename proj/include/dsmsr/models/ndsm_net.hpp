#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsmsr/autograd.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/kv.hpp"
#include "dsmsr/models/params.hpp"

namespace dsmsr {

enum class NdsmActivation { nonneg };

struct NdsmNetConfig {
  int depth = 3;  // encoder levels, including the full-resolution one
  int base_channels = 16;
  NdsmActivation output_activation = NdsmActivation::nonneg;

  int spatial_multiple() const { return 1 << (depth - 1); }

  void validate() const {
    if (depth < 2) throw UsageError("ndsm network depth must be >= 2");
    if (base_channels < 1) throw UsageError("ndsm network base_channels must be >= 1");
  }

  KeyValues to_kv() const {
    return {{"depth", std::to_string(depth)},
            {"base_channels", std::to_string(base_channels)},
            {"output_activation", "nonneg"}};
  }

  static NdsmNetConfig from_kv(const KeyValues& kv) {
    NdsmNetConfig c;
    c.depth = static_cast<int>(parse_int("depth", kv.at("depth")));
    c.base_channels = static_cast<int>(parse_int("base_channels", kv.at("base_channels")));
    if (kv.at("output_activation") != "nonneg") throw UsageError("unknown ndsm output_activation");
    c.validate();
    return c;
  }

  bool operator==(const NdsmNetConfig&) const = default;
};

// U-Net height estimator: RGB [N,3,H,W] -> heights [N,1,H,W] in meters,
// made non-negative by an absolute-value head. A saturating head (softplus)
// collapses under MAE: ground pixels dominate and drive it to zero output.
template <typename T>
class NdsmNet {
 public:
  explicit NdsmNet(const NdsmNetConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    int in = 3;
    for (int l = 0; l < config_.depth; ++l) {
      const int width = config_.base_channels << l;
      const std::string p = "enc" + std::to_string(l);
      encoder_.push_back({Conv<T>::make(params_, p + ".conv0", in, width, 3, rng),
                          Conv<T>::make(params_, p + ".conv1", width, width, 3, rng)});
      in = width;
    }
    for (int l = config_.depth - 2; l >= 0; --l) {
      const int width = config_.base_channels << l;
      const std::string p = "dec" + std::to_string(l);
      Decoder d;
      d.up = Conv<T>::make(params_, p + ".up", in, width, 3, rng);
      d.conv0 = Conv<T>::make(params_, p + ".conv0", 2 * width, width, 3, rng);
      d.conv1 = Conv<T>::make(params_, p + ".conv1", width, width, 3, rng);
      decoder_.push_back(d);
      in = width;
    }
    head_ = Conv<T>::make(params_, "head", in, 1, 1, rng, 0.1);
    head_.bias->value[0] = T(0.5);
  }

  NdsmNet(const NdsmNet&) = delete;
  NdsmNet& operator=(const NdsmNet&) = delete;
  NdsmNet(NdsmNet&&) noexcept = default;
  NdsmNet& operator=(NdsmNet&&) noexcept = default;

  const NdsmNetConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  Var<T> forward(Graph<T>& g, const Var<T>& rgb) const {
    const Shape s = rgb->value.shape();
    if (s.c != 3) throw DataError("ndsm network input must have 3 channels, got " + std::to_string(s.c));
    const int m = config_.spatial_multiple();
    if (s.h % m != 0 || s.w % m != 0) {
      throw DataError("ndsm network input dims must be divisible by " + std::to_string(m) + ", got " + s.str());
    }
    std::vector<Var<T>> skips;
    auto x = rgb;
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      if (l > 0) x = max_pool2(g, x);
      x = relu(g, encoder_[l].first(g, x));
      x = relu(g, encoder_[l].second(g, x));
      skips.push_back(x);
    }
    for (std::size_t i = 0; i < decoder_.size(); ++i) {
      const auto& d = decoder_[i];
      const auto& skip = skips[skips.size() - 2 - i];
      x = relu(g, d.up(g, upsample_nearest2(g, x)));
      x = concat_channels(g, std::vector<Var<T>>{skip, x});
      x = relu(g, d.conv0(g, x));
      x = relu(g, d.conv1(g, x));
    }
    return absolute(g, head_(g, x));
  }

  Tensor<T> infer(const Tensor<T>& rgb) const {
    Graph<T> g(false);
    return forward(g, g.input(rgb))->value;
  }

 private:
  struct Decoder {
    Conv<T> up, conv0, conv1;
  };

  NdsmNetConfig config_;
  ParamSet<T> params_;
  std::vector<std::pair<Conv<T>, Conv<T>>> encoder_;
  std::vector<Decoder> decoder_;
  Conv<T> head_;
};

}  // namespace dsmsr
