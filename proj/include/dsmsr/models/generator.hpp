#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dsmsr/autograd.hpp"
#include "dsmsr/data/resample.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/kv.hpp"
#include "dsmsr/models/params.hpp"

namespace dsmsr {

struct GeneratorConfig {
  int scale = 4;
  int num_blocks = 2;
  int rrdbs_per_block = 3;
  int base_channels = 32;
  int growth_channels = 16;
  double residual_scale = 0.2;
  // Two conv+PReLU layers after every x2 unit and two more after the last
  // one. Off reproduces the plain ESRGAN tail for comparisons.
  bool refinement_convs = true;
  // Adds atanh(2*bicubic(lr) - 1) to the output conv before the tanh, so the
  // network learns a correction to bicubic upsampling.
  bool bicubic_prior = false;

  void validate() const {
    if (scale != 4 && scale != 8) throw UsageError("generator scale must be 4 or 8, got " + std::to_string(scale));
    if (!(residual_scale > 0.0 && residual_scale <= 1.0)) throw UsageError("residual_scale must lie in (0, 1]");
    if (num_blocks < 1 || rrdbs_per_block < 1 || base_channels < 1 || growth_channels < 1) {
      throw UsageError("generator counts must be >= 1");
    }
  }

  int upsampling_units() const { return scale == 8 ? 3 : 2; }

  KeyValues to_kv() const {
    return {{"scale", std::to_string(scale)},
            {"num_blocks", std::to_string(num_blocks)},
            {"rrdbs_per_block", std::to_string(rrdbs_per_block)},
            {"base_channels", std::to_string(base_channels)},
            {"growth_channels", std::to_string(growth_channels)},
            {"residual_scale", format_double(residual_scale)},
            {"refinement_convs", refinement_convs ? "true" : "false"},
            {"bicubic_prior", bicubic_prior ? "true" : "false"}};
  }

  static GeneratorConfig from_kv(const KeyValues& kv) {
    GeneratorConfig c;
    c.scale = static_cast<int>(parse_int("scale", kv.at("scale")));
    c.num_blocks = static_cast<int>(parse_int("num_blocks", kv.at("num_blocks")));
    c.rrdbs_per_block = static_cast<int>(parse_int("rrdbs_per_block", kv.at("rrdbs_per_block")));
    c.base_channels = static_cast<int>(parse_int("base_channels", kv.at("base_channels")));
    c.growth_channels = static_cast<int>(parse_int("growth_channels", kv.at("growth_channels")));
    c.residual_scale = parse_double("residual_scale", kv.at("residual_scale"));
    c.refinement_convs = parse_bool("refinement_convs", kv.at("refinement_convs"));
    c.bicubic_prior = parse_bool("bicubic_prior", kv.at("bicubic_prior"));
    c.validate();
    return c;
  }

  bool operator==(const GeneratorConfig&) const = default;
};

// tanh output mapped from [-1, 1] onto [0, 1]; 0.5 * (x - 1) + 1 == 0.5x + 0.5.
inline double rescale_output(double x) { return 0.5 * x + 0.5; }

// Densely connected unit with a scaled residual: x + s * conv5(...).
template <typename T>
struct Rrdb {
  std::vector<Conv<T>> convs;  // 5 layers, inputs grow by growth_channels

  static Rrdb make(ParamSet<T>& ps, const std::string& name, int nf, int gc, std::mt19937_64& rng) {
    Rrdb r;
    for (int i = 0; i < 4; ++i) {
      r.convs.push_back(Conv<T>::make(ps, name + ".conv" + std::to_string(i + 1), nf + i * gc, gc, 3, rng));
    }
    r.convs.push_back(Conv<T>::make(ps, name + ".conv5", nf + 4 * gc, nf, 3, rng, 0.1));
    return r;
  }

  Var<T> operator()(Graph<T>& g, const Var<T>& x, T residual_scale) const {
    std::vector<Var<T>> feats{x};
    for (int i = 0; i < 4; ++i) {
      auto in = feats.size() == 1 ? x : concat_channels(g, feats);
      feats.push_back(leaky_relu(g, convs[i](g, in), T(0.2)));
    }
    auto out = convs[4](g, concat_channels(g, feats));
    return add_scaled(g, x, out, residual_scale);
  }
};

template <typename T>
class Generator {
 public:
  explicit Generator(const GeneratorConfig& config, std::uint64_t seed = 0) : config_(config) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const int nf = config_.base_channels;
    head_ = Conv<T>::make(params_, "head", 3, nf, 3, rng);
    for (int b = 0; b < config_.num_blocks; ++b) {
      std::vector<Rrdb<T>> block;
      for (int r = 0; r < config_.rrdbs_per_block; ++r) {
        block.push_back(Rrdb<T>::make(params_, "block" + std::to_string(b) + ".rrdb" + std::to_string(r), nf,
                                      config_.growth_channels, rng));
      }
      blocks_.push_back(std::move(block));
    }
    trunk_ = Conv<T>::make(params_, "trunk", nf, nf, 3, rng);
    for (int u = 0; u < config_.upsampling_units(); ++u) {
      const std::string p = "up" + std::to_string(u);
      Unit unit;
      unit.conv = Conv<T>::make(params_, p + ".conv", nf, 4 * nf, 3, rng);
      unit.act = prelu_param(p + ".act", nf);
      if (config_.refinement_convs) {
        for (int k = 0; k < 2; ++k) {
          unit.refine.push_back({Conv<T>::make(params_, p + ".refine" + std::to_string(k), nf, nf, 3, rng),
                                 prelu_param(p + ".refine" + std::to_string(k) + ".act", nf)});
        }
      }
      units_.push_back(std::move(unit));
    }
    if (config_.refinement_convs) {
      for (int k = 0; k < 2; ++k) {
        tail_.push_back({Conv<T>::make(params_, "tail" + std::to_string(k), nf, nf, 3, rng),
                         prelu_param("tail" + std::to_string(k) + ".act", nf)});
      }
    }
    out_ = Conv<T>::make(params_, "out", nf, 3, 3, rng, config_.bicubic_prior ? 0.01 : 0.1);
  }

  // Parameters are shared handles; copies would alias them.
  Generator(const Generator&) = delete;
  Generator& operator=(const Generator&) = delete;
  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  const GeneratorConfig& config() const { return config_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }
  int upsampling_units() const { return static_cast<int>(units_.size()); }

  // lr: [N, 3, H, W] in [0, 1] -> [N, 3, scale*H, scale*W] in [0, 1].
  Var<T> forward(Graph<T>& g, const Var<T>& lr) const {
    if (lr->value.c() != 3) {
      throw DataError("generator input must have 3 channels, got " + std::to_string(lr->value.c()));
    }
    const T rs = static_cast<T>(config_.residual_scale);
    auto fea = head_(g, lr);
    auto x = fea;
    for (const auto& block : blocks_) {
      auto y = x;
      for (const auto& rrdb : block) y = rrdb(g, y, rs);
      x = add_scaled(g, x, y, rs);
    }
    x = add(g, fea, trunk_(g, x));
    for (const auto& unit : units_) {
      x = prelu(g, pixel_shuffle(g, unit.conv(g, x), 2), unit.act);
      for (const auto& [conv, act] : unit.refine) x = prelu(g, conv(g, x), act);
    }
    for (const auto& [conv, act] : tail_) x = prelu(g, conv(g, x), act);
    auto logits = out_(g, x);
    if (config_.bicubic_prior) logits = add(g, logits, g.input(bicubic_logits(lr->value)));
    return affine(g, tanh(g, logits), T(0.5), T(0.5));
  }

  Tensor<T> infer(const Tensor<T>& lr) const {
    Graph<T> g(false);
    return forward(g, g.input(lr))->value;
  }

 private:
  Tensor<T> bicubic_logits(const Tensor<T>& lr) const {
    const int s = config_.scale;
    Tensor<T> out(Shape{lr.n(), 3, lr.h() * s, lr.w() * s});
    constexpr double kEdge = 1.0 - 1e-3;
    for (int n = 0; n < lr.n(); ++n) {
      const RasterGrid up = bicubic_upsample(from_batch(lr, n), s);
      T* dst = out.sample(n);
      for (std::size_t i = 0; i < up.values.size(); ++i) {
        dst[i] = static_cast<T>(std::atanh(std::clamp(2.0 * up.values[i] - 1.0, -kEdge, kEdge)));
      }
    }
    return out;
  }

  struct Unit {
    Conv<T> conv;
    Var<T> act;
    std::vector<std::pair<Conv<T>, Var<T>>> refine;
  };

  Var<T> prelu_param(const std::string& name, int channels) {
    return params_.add(name, Tensor<T>(Shape{1, channels, 1, 1}, T(0.25)));
  }

  GeneratorConfig config_;
  ParamSet<T> params_;
  Conv<T> head_;
  std::vector<std::vector<Rrdb<T>>> blocks_;
  Conv<T> trunk_;
  std::vector<Unit> units_;
  std::vector<std::pair<Conv<T>, Var<T>>> tail_;
  Conv<T> out_;
};

}  // namespace dsmsr
