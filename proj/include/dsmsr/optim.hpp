#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dsmsr/error.hpp"
#include "dsmsr/kv.hpp"
#include "dsmsr/models/bundle.hpp"
#include "dsmsr/models/params.hpp"

namespace dsmsr {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam without weight decay. Parameters whose gradient buffer is empty are
// skipped for that step; frozen sets are never touched.
template <typename T>
class Adam {
 public:
  Adam(ParamSet<T>& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
    for (const auto& e : params.entries()) {
      m_.emplace_back(e.var->value.shape());
      v_.emplace_back(e.var->value.shape());
    }
  }

  void step() {
    if (!params_->trainable()) throw std::logic_error("optimizer step on a frozen parameter set");
    ++steps_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
    const T lr_t = static_cast<T>(cfg_.learning_rate / c1);
    const T inv_c2 = static_cast<T>(1.0 / c2);
    const T eps = static_cast<T>(cfg_.eps);
    const auto& entries = params_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      Node<T>& p = *entries[i].var;
      if (p.grad.empty()) continue;
      T* w = p.value.data();
      const T* g = p.grad.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        m[k] = b1 * m[k] + (T(1) - b1) * g[k];
        v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
        w[k] -= lr_t * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
      }
    }
  }

  std::int64_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

  // Moments go into `b` under "<prefix>.m.<param>" / "<prefix>.v.<param>".
  void save_state(ModelBundle& b, const std::string& prefix) const {
    b.meta[prefix + ".steps"] = std::to_string(steps_);
    const auto& entries = params_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      b.tensors.push_back(named_tensor(prefix + ".m." + entries[i].name, m_[i]));
      b.tensors.push_back(named_tensor(prefix + ".v." + entries[i].name, v_[i]));
    }
  }

  void load_state(const ModelBundle& b, const std::string& prefix) {
    const auto it = b.meta.find(prefix + ".steps");
    if (it == b.meta.end()) throw CheckpointError("optimizer state lacks " + prefix);
    steps_ = parse_int(prefix + ".steps", it->second);
    const auto& entries = params_->entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      for (auto [tag, dst] : {std::pair{".m.", &m_[i]}, std::pair{".v.", &v_[i]}}) {
        const NamedTensor* t = b.find(prefix + tag + entries[i].name);
        if (!t || !(t->shape() == dst->shape())) {
          throw CheckpointError("optimizer state for " + prefix + " does not match parameter " + entries[i].name);
        }
        *dst = tensor_of<T>(*t);
      }
    }
  }

 private:
  ParamSet<T>* params_;
  AdamConfig cfg_;
  std::vector<Tensor<T>> m_, v_;
  std::int64_t steps_ = 0;
};

}  // namespace dsmsr
