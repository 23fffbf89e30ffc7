#pragma once

// Three-phase training with checkpoint/resume.
//
//   ndsm         height network, MAE against ground-truth heights
//   sr-pretrain  generator, MAE against HR
//   gan          one discriminator step then one generator step per
//                iteration; the height network stays frozen
//
// A checkpoint directory holds generator.bundle, discriminator.bundle,
// ndsm.bundle, optimizer.state, history.log and manifest.txt. The manifest is
// written last and is the commit point: on resume, anything newer than the
// step counters it records is ignored.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/error.hpp"
#include "dsmsr/kv.hpp"
#include "dsmsr/losses.hpp"
#include "dsmsr/models/bundle.hpp"
#include "dsmsr/optim.hpp"
#include "dsmsr/training/batches.hpp"
#include "dsmsr/training/config.hpp"
#include "dsmsr/training/evaluation.hpp"
#include "dsmsr/training/history.hpp"
#include "dsmsr/training/objective.hpp"
#include "dsmsr/util/files.hpp"

namespace dsmsr {

inline constexpr const char* kCheckpointManifest = "manifest.txt";

// Trailing window used for pretrain_final_mae when no validation scenes exist.
inline constexpr int kMaeWindow = 50;

class Trainer {
 public:
  // An empty `dir` keeps everything in memory. Otherwise an existing
  // checkpoint in `dir` is resumed after checking it matches `config`.
  explicit Trainer(TrainConfig config, std::filesystem::path dir = {}) : cfg_(std::move(config)), dir_(std::move(dir)) {
    cfg_.sync();
    cfg_.validate();
    if (!dir_.empty()) {
      std::filesystem::create_directories(dir_);
      if (std::filesystem::exists(dir_ / kCheckpointManifest)) load_checkpoint();
    }
    manifest_["config_hash"] = cfg_.hash();
    manifest_["scale"] = std::to_string(cfg_.scale);
  }

  const TrainConfig& config() const { return cfg_; }
  const TrainHistory& history() const { return history_; }
  const KeyValues& manifest() const { return manifest_; }

  std::int64_t step_of(Phase p) const { return meta_int(std::string(phase_key(p)) + ".step"); }
  bool done(Phase p) const { return meta_flag(std::string(phase_key(p)) + ".done"); }

  bool has_generator() const { return gen_.has_value(); }
  bool has_ndsm_net() const { return ndsm_.has_value(); }
  bool has_discriminator() const { return disc_.has_value(); }
  Generator<float>& generator() { return require(gen_, "generator"); }
  NdsmNet<float>& ndsm_net() { return require(ndsm_, "ndsm network"); }
  Discriminator<float>& discriminator() { return require(disc_, "discriminator"); }

  std::optional<double> epsilon() const { return meta_double("epsilon"); }
  std::optional<double> pretrain_final_mae() const { return meta_double("sr_pretrain.final_mae"); }

  // Phase 1. `val` may be empty, in which case the training scenes are used
  // for the reported validation MAE.
  template <typename Source>
  void train_ndsm(const Source& src, const std::vector<const ScenePair*>& val,
                  const std::vector<const ScenePair*>& train_scenes = {}) {
    const Phase p = Phase::ndsm;
    if (!begin_phase(p, cfg_.ndsm_steps)) return;
    if (!ndsm_) ndsm_.emplace(cfg_.ndsm_net, model_seed(1));
    Adam<float> opt(ndsm_->params(), adam(cfg_.ndsm_learning_rate));
    resume_optimizer(p, {{"ndsm", &opt}});
    run_steps(p, cfg_.ndsm_steps, {{"ndsm", &opt}}, [&](std::int64_t step) {
      const Batch b = src.at(p, step);
      Graph<float> g;
      const auto pred = ndsm_->forward(g, g.input(b.hr));
      const double mae = mean_absolute_error(g, pred, b.ndsm);
      g.run_backward();
      opt.step();
      ndsm_->params().zero_grad();
      StepRecord r{p, step, {0.0, mae, 0.0, mae}, {}, {}, {}, b.fingerprint};
      return r;
    });
    const bool use_val = !val.empty();
    const auto v = validate_ndsm(*ndsm_, use_val ? val : train_scenes);
    manifest_["ndsm.val_mae"] = format_double(v.mae);
    manifest_["ndsm.zero_mae"] = format_double(v.zero_mae);
    manifest_["ndsm.val_source"] = use_val ? "val" : "train";
    finish_phase(p);
  }

  // Phase 2. pretrain_final_mae is the whole-scene MAE on `val`, or the mean
  // training MAE over the last kMaeWindow steps when `val` is empty.
  template <typename Source>
  void pretrain_generator(const Source& src, const std::vector<const ScenePair*>& val) {
    const Phase p = Phase::sr_pretrain;
    if (!begin_phase(p, cfg_.pretrain_steps)) return;
    if (!gen_) gen_.emplace(cfg_.generator, model_seed(2));
    Adam<float> opt(gen_->params(), adam(cfg_.learning_rate));
    resume_optimizer(p, {{"generator", &opt}});
    run_steps(p, cfg_.pretrain_steps, {{"generator", &opt}}, [&](std::int64_t step) {
      const Batch b = src.at(p, step);
      Graph<float> g;
      const auto sr = gen_->forward(g, g.input(b.lr));
      const double mae = mean_absolute_error(g, sr, b.hr);
      g.run_backward();
      opt.step();
      gen_->params().zero_grad();
      return StepRecord{p, step, {mae, 0.0, 0.0, mae}, {}, {}, {}, b.fingerprint};
    });
    double mae = 0;
    if (!val.empty()) {
      mae = generator_mae(*gen_, make_triples(val, cfg_.scale));
      manifest_["sr_pretrain.final_mae_source"] = "val";
    } else {
      const auto recs = history_.of(p);
      const std::size_t n = std::min<std::size_t>(kMaeWindow, recs.size());
      for (std::size_t i = recs.size() - n; i < recs.size(); ++i) mae += recs[i].loss.content;
      mae /= static_cast<double>(n);
      manifest_["sr_pretrain.final_mae_source"] = "train_window";
    }
    manifest_["sr_pretrain.final_mae"] = format_double(mae);
    history_.pretrain_final_mae = mae;
    if (cfg_.weights.epsilon) {
      manifest_["epsilon"] = format_double(*cfg_.weights.epsilon);
      manifest_["epsilon_source"] = "config";
    } else {
      manifest_["epsilon"] = format_double(select_epsilon(mae));
      manifest_["epsilon_source"] = "pretrain_mae";
    }
    finish_phase(p);
  }

  // Phase 3.
  template <typename Source>
  void train_gan(const Source& src) {
    const Phase p = Phase::gan;
    if (!gen_ || !done(Phase::sr_pretrain)) throw CheckpointError("generator pretrain bundle missing");
    if (!ndsm_ || !done(Phase::ndsm)) throw CheckpointError("ndsm pretrain bundle missing");
    const double eps = cfg_.weights.epsilon ? *cfg_.weights.epsilon : gan_epsilon();
    if (!begin_phase(p, cfg_.gan_steps)) return;
    if (!disc_) disc_.emplace(cfg_.discriminator, model_seed(3));
    if (step_of(p) == 0) manifest_["gan.ndsm_checksum_start"] = hex(ndsm_->params().checksum());
    manifest_["gan.epsilon"] = format_double(eps);

    ndsm_->params().set_trainable(false);
    Adam<float> opt_g(gen_->params(), adam(cfg_.gan_learning_rate));
    Adam<float> opt_d(disc_->params(), adam(cfg_.gan_learning_rate));
    resume_optimizer(p, {{"generator", &opt_g}, {"discriminator", &opt_d}});
    const LossWeights& w = cfg_.weights;
    run_steps(p, cfg_.gan_steps, {{"generator", &opt_g}, {"discriminator", &opt_d}}, [&](std::int64_t step) {
      const Batch b = src.at(p, step);
      const int n = b.hr.n();

      // Discriminator on real HR and detached generator output.
      const Tensor<float> fake = gen_->infer(b.lr);
      Graph<float> gd;
      const auto scores = disc_->forward(gd, gd.input(stack(b.hr, fake)));
      const auto s = scores_of(scores->value);
      const std::span<const double> real_s(s.data(), n), fake_s(s.data() + n, n);
      const double d_loss = discriminator_loss(real_s, fake_s, w.label_smoothing);
      Tensor<float> dseed(scores->value.shape());
      for (int i = 0; i < n; ++i) {
        dseed[i] = static_cast<float>(discriminator_loss_grad_real(s[i], n, w.label_smoothing));
        dseed[n + i] = static_cast<float>(discriminator_loss_grad_fake(s[n + i], n));
      }
      gd.backward(scores, dseed);
      opt_d.step();
      disc_->params().zero_grad();

      // Generator on the combined objective; the discriminator only passes
      // gradients through.
      disc_->params().set_trainable(false);
      Graph<float> gg;
      const LossBreakdown loss = generator_objective(gg, *gen_, b.lr, b.hr, *ndsm_, *disc_, w, eps, cfg_.ndsm_reduction);
      gg.run_backward();
      opt_g.step();
      gen_->params().zero_grad();
      disc_->params().set_trainable(true);

      double real_mean = 0, fake_mean = 0;
      for (int i = 0; i < n; ++i) {
        real_mean += s[i] / n;
        fake_mean += s[n + i] / n;
      }
      return StepRecord{p, step, loss, d_loss, real_mean, fake_mean, b.fingerprint};
    });
    ndsm_->params().set_trainable(true);
    manifest_["gan.ndsm_checksum_end"] = hex(ndsm_->params().checksum());
    manifest_["gan.generator_updates"] = std::to_string(opt_g.steps());
    manifest_["gan.discriminator_updates"] = std::to_string(opt_d.steps());
    finish_phase(p);
  }

 private:
  using Optimizers = std::vector<std::pair<std::string, Adam<float>*>>;

  template <typename M>
  static M& require(std::optional<M>& m, const char* what) {
    if (!m) throw CheckpointError(std::string(what) + " is not available");
    return *m;
  }

  static std::string hex(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
  }

  static Tensor<float> stack(const Tensor<float>& a, const Tensor<float>& b) {
    require_same_shape(Shape{1, a.c(), a.h(), a.w()}, Shape{1, b.c(), b.h(), b.w()}, "stack");
    Tensor<float> out(Shape{a.n() + b.n(), a.c(), a.h(), a.w()});
    std::copy(a.values().begin(), a.values().end(), out.data());
    std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
    return out;
  }

  std::uint64_t model_seed(int which) const { return splitmix64(cfg_.seed ^ (0xA11CE000ULL + which)); }

  AdamConfig adam(double lr) const { return {lr, cfg_.adam_betas.first, cfg_.adam_betas.second, 1e-8}; }

  std::int64_t meta_int(const std::string& key) const {
    const auto it = manifest_.find(key);
    return it == manifest_.end() ? 0 : parse_int(key, it->second);
  }
  bool meta_flag(const std::string& key) const {
    const auto it = manifest_.find(key);
    return it != manifest_.end() && it->second == "true";
  }
  std::optional<double> meta_double(const std::string& key) const {
    const auto it = manifest_.find(key);
    if (it == manifest_.end()) return std::nullopt;
    return parse_double(key, it->second);
  }

  double gan_epsilon() const {
    if (const auto e = meta_double("epsilon")) return *e;
    if (const auto m = pretrain_final_mae()) return select_epsilon(*m);
    throw UsageError("epsilon unset and pretrain MAE unavailable");
  }

  // False when the phase already reached its budget.
  bool begin_phase(Phase p, int target) {
    const std::int64_t cur = step_of(p);
    if (cur >= target) return false;
    if (cur > 0 && (!optimizer_state_ || optimizer_state_->meta["phase"] != phase_key(p))) {
      throw CheckpointError(std::string("cannot continue phase ") + to_string(p) +
                            ": its optimizer state was superseded by a later phase");
    }
    manifest_[std::string(phase_key(p)) + ".done"] = "false";
    return true;
  }

  void finish_phase(Phase p) {
    manifest_[std::string(phase_key(p)) + ".done"] = "true";
    write_checkpoint(p, {});
  }

  void resume_optimizer(Phase p, const Optimizers& opts) {
    if (step_of(p) == 0) return;
    for (const auto& [name, opt] : opts) opt->load_state(*optimizer_state_, std::string(phase_key(p)) + "." + name);
  }

  template <typename StepFn>
  void run_steps(Phase p, int target, const Optimizers& opts, StepFn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string key = std::string(phase_key(p)) + ".step";
    for (std::int64_t step = step_of(p) + 1; step <= target; ++step) {
      history_.records.push_back(fn(step));
      manifest_[key] = std::to_string(step);
      if (step % cfg_.checkpoint_every == 0 || step == target) write_checkpoint(p, opts);
    }
    history_.wall_time += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  void write_checkpoint(Phase p, const Optimizers& opts) {
    if (!opts.empty()) {
      ModelBundle st{BundleKind::optimizer, kBundleFormatVersion, {}, {{"phase", phase_key(p)}}, {}};
      for (const auto& [name, opt] : opts) opt->save_state(st, std::string(phase_key(p)) + "." + name);
      optimizer_state_ = std::move(st);
    }
    if (dir_.empty()) return;
    const KeyValues meta{{"config_hash", cfg_.hash()}};
    auto with_steps = [&](KeyValues m) {
      for (Phase q : {Phase::ndsm, Phase::sr_pretrain, Phase::gan})
        m[std::string(phase_key(q)) + ".step"] = std::to_string(step_of(q));
      if (auto mae = pretrain_final_mae()) m["pretrain_final_mae"] = format_double(*mae);
      if (auto e = meta_double("epsilon")) m["epsilon"] = format_double(*e);
      return m;
    };
    if (ndsm_) save_bundle(make_bundle(*ndsm_, with_steps(meta)), dir_ / "ndsm.bundle");
    if (gen_) save_bundle(make_bundle(*gen_, with_steps(meta)), dir_ / "generator.bundle");
    if (disc_) save_bundle(make_bundle(*disc_, with_steps(meta)), dir_ / "discriminator.bundle");
    if (optimizer_state_) save_bundle(*optimizer_state_, dir_ / "optimizer.state");
    atomic_write<CheckpointError>(dir_ / "history.log", format_history(history_));
    KeyValues m = manifest_;
    for (const auto& [k, v] : cfg_.to_kv()) m["config." + k] = v;
    atomic_write<CheckpointError>(dir_ / kCheckpointManifest, format_kv(m));
  }

  void load_checkpoint() {
    KeyValues m;
    try {
      m = parse_kv(read_file<CheckpointError>(dir_ / kCheckpointManifest), (dir_ / kCheckpointManifest).string());
    } catch (const UsageError& e) {
      throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
    }
    if (!m.count("scale") || !m.count("config_hash")) throw CheckpointError("corrupt checkpoint manifest");
    if (m["scale"] != std::to_string(cfg_.scale)) {
      throw CheckpointError("checkpoint was trained at scale " + m["scale"] + ", config asks for scale " +
                            std::to_string(cfg_.scale));
    }
    if (m["config_hash"] != cfg_.hash()) {
      throw CheckpointError("checkpoint config hash " + m["config_hash"] + " does not match config hash " +
                            cfg_.hash());
    }
    for (const auto& [k, v] : m)
      if (k.rfind("config.", 0) != 0) manifest_[k] = v;
    auto load_if = [&](const char* file, auto& slot, auto make) {
      const auto path = dir_ / file;
      if (std::filesystem::exists(path)) slot.emplace(make(load_bundle(path)));
    };
    if (step_of(Phase::ndsm) > 0) load_if("ndsm.bundle", ndsm_, [](const ModelBundle& b) { return ndsm_net_from(b); });
    if (step_of(Phase::sr_pretrain) > 0) {
      load_if("generator.bundle", gen_, [](const ModelBundle& b) { return generator_from(b); });
    }
    if (step_of(Phase::gan) > 0) {
      load_if("discriminator.bundle", disc_, [](const ModelBundle& b) { return discriminator_from(b); });
    }
    check_bundle_step(Phase::ndsm, "ndsm.bundle", ndsm_.has_value());
    check_bundle_step(Phase::sr_pretrain, "generator.bundle", gen_.has_value());
    check_bundle_step(Phase::gan, "discriminator.bundle", disc_.has_value());
    if (std::filesystem::exists(dir_ / "optimizer.state")) {
      optimizer_state_ = load_bundle(dir_ / "optimizer.state");
      require_kind(*optimizer_state_, BundleKind::optimizer);
    }
    if (std::filesystem::exists(dir_ / "history.log")) {
      for (auto& r : parse_history(read_file<CheckpointError>(dir_ / "history.log")))
        if (r.step <= step_of(r.phase)) history_.records.push_back(r);
    }
    for (Phase q : {Phase::ndsm, Phase::sr_pretrain, Phase::gan}) {
      if (history_.count(q) != static_cast<std::size_t>(step_of(q))) {
        throw CheckpointError(std::string("history.log is missing records for phase ") + to_string(q));
      }
    }
    history_.pretrain_final_mae = pretrain_final_mae();
  }

  void check_bundle_step(Phase p, const char* file, bool present) {
    if (step_of(p) > 0 && !present) throw CheckpointError(std::string("checkpoint lacks ") + file);
  }

  TrainConfig cfg_;
  std::filesystem::path dir_;
  KeyValues manifest_;
  TrainHistory history_;
  std::optional<NdsmNet<float>> ndsm_;
  std::optional<Generator<float>> gen_;
  std::optional<Discriminator<float>> disc_;
  std::optional<ModelBundle> optimizer_state_;
};

}  // namespace dsmsr
