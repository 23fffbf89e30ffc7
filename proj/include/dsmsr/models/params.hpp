#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dsmsr/autograd.hpp"

namespace dsmsr {

// Ordered, named collection of trainable tensors. Order is the construction
// order and is what serialization and the optimizer state rely on.
template <typename T>
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Var<T> var;
  };

  Var<T> add(std::string name, Tensor<T> init) {
    for (const auto& e : entries_)
      if (e.name == name) throw std::logic_error("duplicate parameter name: " + name);
    auto v = make_leaf(std::move(init), trainable_);
    entries_.push_back({std::move(name), v});
    return v;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& e : entries_) total += e.var->value.size();
    return total;
  }

  const Var<T>& find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.var;
    throw std::out_of_range("no parameter named " + name);
  }

  void zero_grad() {
    for (auto& e : entries_) e.var->grad = Tensor<T>();
  }

  // Frozen parameters never accumulate gradients, but gradients still flow
  // through them to upstream inputs.
  void set_trainable(bool trainable) {
    trainable_ = trainable;
    for (auto& e : entries_) {
      e.var->requires_grad = trainable;
      e.var->grad = Tensor<T>();
    }
  }
  bool trainable() const { return trainable_; }

  // FNV-1a over names, shapes and raw parameter bytes.
  std::uint64_t checksum() const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const auto* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 1099511628211ULL;
      }
    };
    for (const auto& e : entries_) {
      mix(e.name.data(), e.name.size());
      const Shape s = e.var->value.shape();
      mix(&s, sizeof(s));
      mix(e.var->value.data(), e.var->value.size() * sizeof(T));
    }
    return h;
  }

 private:
  std::vector<Entry> entries_;
  bool trainable_ = true;
};

// He-normal conv weight [out, in, k, k] with an extra multiplier.
template <typename T>
Tensor<T> he_normal(Shape shape, std::mt19937_64& rng, double gain = 1.0) {
  const double fan_in = static_cast<double>(shape.c) * shape.h * shape.w;
  std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / fan_in));
  Tensor<T> t(shape);
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

// Conv layer handle: weight plus bias inside a ParamSet.
template <typename T>
struct Conv {
  Var<T> weight;
  Var<T> bias;
  int stride = 1;
  int pad = 1;

  static Conv make(ParamSet<T>& ps, const std::string& name, int in, int out, int kernel,
                   std::mt19937_64& rng, double gain = 1.0, int stride = 1) {
    Conv c;
    c.weight = ps.add(name + ".weight", he_normal<T>(Shape{out, in, kernel, kernel}, rng, gain));
    c.bias = ps.add(name + ".bias", Tensor<T>(Shape{1, out, 1, 1}));
    c.stride = stride;
    c.pad = kernel / 2;
    return c;
  }

  Var<T> operator()(Graph<T>& g, const Var<T>& x) const { return conv2d(g, x, weight, bias, stride, pad); }
};

}  // namespace dsmsr
