#pragma once

// Flat key-value training configuration. Keys mirror the field names; model
// sub-configs use "generator.", "discriminator." and "ndsm_net." prefixes.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <utility>

#include "dsmsr/error.hpp"
#include "dsmsr/kv.hpp"
#include "dsmsr/losses.hpp"
#include "dsmsr/models/discriminator.hpp"
#include "dsmsr/models/generator.hpp"
#include "dsmsr/models/ndsm_net.hpp"
#include "dsmsr/util/files.hpp"

namespace dsmsr {

struct TrainConfig {
  int scale = 4;
  int patch_px = 128;
  double learning_rate = 1e-4;
  double ndsm_learning_rate = 1e-3;
  double gan_learning_rate = 1e-4;  // generator and discriminator in the adversarial phase
  int batch_size = 4;
  int ndsm_steps = 500;
  int pretrain_steps = 500;
  int gan_steps = 500;
  LossWeights weights;
  NdsmReduction ndsm_reduction = NdsmReduction::mean_square;
  std::uint64_t seed = 0;
  int checkpoint_every = 100;
  std::pair<double, double> adam_betas{0.9, 0.999};
  GeneratorConfig generator;          // scale is taken from `scale`
  DiscriminatorConfig discriminator;  // input_px is taken from `patch_px`
  NdsmNetConfig ndsm_net;

  int lr_patch_px() const { return patch_px / scale; }

  // Copies the derived fields into the model configs.
  void sync() {
    generator.scale = scale;
    discriminator.input_px = patch_px;
  }

  void validate() const {
    if (scale != 4 && scale != 8) throw UsageError("scale must be 4 or 8, got " + std::to_string(scale));
    if (!(learning_rate > 0)) throw UsageError("learning_rate must be > 0");
    if (!(ndsm_learning_rate > 0)) throw UsageError("ndsm_learning_rate must be > 0");
    if (!(gan_learning_rate > 0)) throw UsageError("gan_learning_rate must be > 0");
    if (patch_px < 1 || patch_px % scale != 0) {
      throw UsageError("patch_px " + std::to_string(patch_px) + " is not divisible by scale " + std::to_string(scale));
    }
    if (batch_size < 1) throw UsageError("batch_size must be >= 1");
    if (ndsm_steps < 1 || pretrain_steps < 1 || gan_steps < 1) throw UsageError("step counts must be >= 1");
    if (checkpoint_every < 1) throw UsageError("checkpoint_every must be >= 1");
    const auto [b1, b2] = adam_betas;
    if (!(b1 >= 0 && b1 < 1 && b2 >= 0 && b2 < 1)) throw UsageError("adam_betas must lie in [0, 1)");
    weights.validate();
    generator.validate();
    discriminator.validate();
    ndsm_net.validate();
    if (generator.scale != scale || discriminator.input_px != patch_px) {
      throw UsageError("model configs are out of sync with scale/patch_px");
    }
    if (patch_px % ndsm_net.spatial_multiple() != 0) {
      throw UsageError("patch_px must be divisible by " + std::to_string(ndsm_net.spatial_multiple()) +
                       " for the ndsm network");
    }
  }

  KeyValues to_kv() const {
    KeyValues kv{{"scale", std::to_string(scale)},
                 {"patch_px", std::to_string(patch_px)},
                 {"learning_rate", format_double(learning_rate)},
                 {"ndsm_learning_rate", format_double(ndsm_learning_rate)},
                 {"gan_learning_rate", format_double(gan_learning_rate)},
                 {"batch_size", std::to_string(batch_size)},
                 {"ndsm_steps", std::to_string(ndsm_steps)},
                 {"pretrain_steps", std::to_string(pretrain_steps)},
                 {"gan_steps", std::to_string(gan_steps)},
                 {"weights.alpha", format_double(weights.alpha)},
                 {"weights.adv_weight", format_double(weights.adv_weight)},
                 {"weights.label_smoothing", format_double(weights.label_smoothing)},
                 {"weights.ndsm_reduction", ndsm_reduction == NdsmReduction::mean_square ? "mean_square" : "l2_norm"},
                 {"seed", std::to_string(seed)},
                 {"checkpoint_every", std::to_string(checkpoint_every)},
                 {"adam_betas", format_double(adam_betas.first) + ", " + format_double(adam_betas.second)}};
    if (weights.epsilon) kv["weights.epsilon"] = format_double(*weights.epsilon);
    for (const auto& [k, v] : generator.to_kv())
      if (k != "scale") kv["generator." + k] = v;
    for (const auto& [k, v] : discriminator.to_kv())
      if (k != "input_px") kv["discriminator." + k] = v;
    for (const auto& [k, v] : ndsm_net.to_kv()) kv["ndsm_net." + k] = v;
    return kv;
  }

  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = [] {
      std::set<std::string> k;
      TrainConfig c;
      c.weights.epsilon = 1.0;
      for (const auto& [key, v] : c.to_kv()) k.insert(key);
      return k;
    }();
    return keys;
  }

  // Missing keys keep their defaults; unknown keys are an error.
  static TrainConfig from_kv(const KeyValues& kv, const std::string& origin = "config") {
    reject_unknown_keys(kv, known_keys(), origin);
    TrainConfig c;
    auto get = [&kv](const std::string& key) -> const std::string* {
      const auto it = kv.find(key);
      return it == kv.end() ? nullptr : &it->second;
    };
    auto set_int = [&](const std::string& key, int& dst) {
      if (auto* v = get(key)) dst = static_cast<int>(parse_int(key, *v));
    };
    auto set_double = [&](const std::string& key, double& dst) {
      if (auto* v = get(key)) dst = parse_double(key, *v);
    };
    set_int("scale", c.scale);
    set_int("patch_px", c.patch_px);
    set_double("learning_rate", c.learning_rate);
    set_double("ndsm_learning_rate", c.ndsm_learning_rate);
    set_double("gan_learning_rate", c.gan_learning_rate);
    set_int("batch_size", c.batch_size);
    set_int("ndsm_steps", c.ndsm_steps);
    set_int("pretrain_steps", c.pretrain_steps);
    set_int("gan_steps", c.gan_steps);
    set_double("weights.alpha", c.weights.alpha);
    set_double("weights.adv_weight", c.weights.adv_weight);
    set_double("weights.label_smoothing", c.weights.label_smoothing);
    if (auto* v = get("weights.epsilon")) c.weights.epsilon = parse_double("weights.epsilon", *v);
    if (auto* v = get("weights.ndsm_reduction")) {
      if (*v == "mean_square") {
        c.ndsm_reduction = NdsmReduction::mean_square;
      } else if (*v == "l2_norm") {
        c.ndsm_reduction = NdsmReduction::l2_norm;
      } else {
        throw UsageError("weights.ndsm_reduction must be mean_square or l2_norm");
      }
    }
    if (auto* v = get("seed")) {
      const auto s = parse_int("seed", *v);
      if (s < 0) throw UsageError("seed must be >= 0");
      c.seed = static_cast<std::uint64_t>(s);
    }
    set_int("checkpoint_every", c.checkpoint_every);
    if (auto* v = get("adam_betas")) {
      const auto comma = v->find(',');
      if (comma == std::string::npos) throw UsageError("adam_betas must be 'beta1, beta2'");
      c.adam_betas = {parse_double("adam_betas", detail::trim(v->substr(0, comma))),
                      parse_double("adam_betas", detail::trim(v->substr(comma + 1)))};
    }
    auto sub = [&kv](const std::string& prefix, KeyValues base) {
      for (const auto& [k, v] : kv)
        if (k.rfind(prefix, 0) == 0) base[k.substr(prefix.size())] = v;
      return base;
    };
    KeyValues g = sub("generator.", c.generator.to_kv());
    g["scale"] = std::to_string(c.scale);
    c.generator = GeneratorConfig::from_kv(g);
    KeyValues d = sub("discriminator.", c.discriminator.to_kv());
    d["input_px"] = std::to_string(c.patch_px);
    c.discriminator = DiscriminatorConfig::from_kv(d);
    c.ndsm_net = NdsmNetConfig::from_kv(sub("ndsm_net.", c.ndsm_net.to_kv()));
    c.sync();
    c.validate();
    return c;
  }

  // Identity of a run for resume checks. Step budgets and the checkpoint
  // cadence are excluded so a run can be extended.
  std::string hash() const {
    KeyValues kv = to_kv();
    for (const char* k : {"ndsm_steps", "pretrain_steps", "gan_steps", "checkpoint_every"}) kv.erase(k);
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : format_kv(kv)) {
      h ^= ch;
      h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

inline TrainConfig load_train_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UsageError("config file '" + path.string() + "' does not exist");
  return TrainConfig::from_kv(parse_kv(read_file<UsageError>(path), path.string()), path.string());
}

}  // namespace dsmsr
