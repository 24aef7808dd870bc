#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "desknmt/corpus.hpp"
#include "desknmt/error.hpp"
#include "desknmt/nnet.hpp"
#include "json.hpp"

namespace desknmt {

struct AdamState {
  ModelParams m, v;
  std::size_t t = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState adam_init(const ModelParams& params, double lr = 1e-3) {
  AdamState s;
  s.m = zero_params(params.config);
  s.v = zero_params(params.config);
  s.lr = lr;
  return s;
}

// Bias-corrected Adam. A non-finite gradient rejects the whole step.
inline void adam_step(AdamState& s, ModelParams& params, const ModelParams& grads) {
  auto p = params.named();
  const auto g = grads.named();
  auto m = s.m.named();
  auto v = s.v.named();
  if (p.size() != g.size() || p.size() != m.size())
    throw ShapeError("adam_step: parameter, gradient and moment layouts differ");
  for (std::size_t k = 0; k < p.size(); ++k) {
    if (!p[k].second->same_shape(*g[k].second) || !p[k].second->same_shape(*m[k].second))
      throw ShapeError("adam_step: shape mismatch for '" + p[k].first + "'");
    if (!g[k].second->all_finite())
      throw NumericError("non-finite gradient for '" + g[k].first + "'");
  }
  ++s.t;
  const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  for (std::size_t k = 0; k < p.size(); ++k) {
    auto w = p[k].second->values();
    auto gr = g[k].second->values();
    auto mm = m[k].second->values();
    auto vv = v[k].second->values();
    for (std::size_t i = 0; i < w.size(); ++i) {
      mm[i] = s.beta1 * mm[i] + (1.0 - s.beta1) * gr[i];
      vv[i] = s.beta2 * vv[i] + (1.0 - s.beta2) * gr[i] * gr[i];
      const double mh = mm[i] / c1;
      const double vh = vv[i] / c2;
      w[i] -= s.lr * mh / (std::sqrt(vh) + s.eps);
    }
  }
}

inline double global_norm(const ModelParams& g) {
  double s = 0.0;
  for (const auto& [name, t] : g.named())
    for (double x : t->values()) s += x * x;
  return std::sqrt(s);
}

// Rescales g so its global norm is at most max_norm. Returns the norm before clipping.
inline double clip_global_norm(ModelParams& g, double max_norm) {
  const double n = global_norm(g);
  if (n > max_norm && n > 0.0) {
    const double k = max_norm / n;
    for (auto& [name, t] : g.named())
      for (double& x : t->values()) x *= k;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Checkpoints: {format, config, tensors:{name:{shape, data}}}

inline const char* kCheckpointFormat = "desk-nmt v1";

inline nlohmann::json checkpoint_json(const ModelParams& params) {
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& [name, t] : params.named())
    tensors[name] = {{"shape", t->shape()}, {"data", t->raw()}};
  return {{"format", kCheckpointFormat}, {"config", to_json(params.config)}, {"tensors", tensors}};
}

inline ModelParams params_from_json(const nlohmann::json& j,
                                    const ModelConfig* expected = nullptr) {
  if (!j.is_object() || j.value("format", std::string()) != kCheckpointFormat)
    throw DataError("checkpoint format is not '" + std::string(kCheckpointFormat) + "'");
  const ModelConfig stored = model_config_from_json(j.at("config"));
  ModelParams p = zero_params(expected ? *expected : stored);
  const auto& tensors = j.at("tensors");
  std::size_t seen = 0;
  for (auto& [name, t] : p.named()) {
    if (!tensors.contains(name)) throw ShapeError("checkpoint lacks tensor '" + name + "'");
    const auto& e = tensors.at(name);
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape != t->shape())
      throw ShapeError("tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                       shape_string(t->shape()));
    *t = Tensor(shape, e.at("data").get<std::vector<double>>());
    ++seen;
  }
  if (seen != tensors.size())
    throw ShapeError("checkpoint has " + std::to_string(tensors.size()) +
                     " tensors, configuration expects " + std::to_string(seen));
  return p;
}

inline void save_checkpoint(const ModelParams& params, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out << checkpoint_json(params).dump() << '\n';
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

// With `expected`, tensors must match that configuration's shapes.
inline ModelParams load_checkpoint(const std::string& path, const ModelConfig* expected = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path + "' is not valid JSON: " + e.what());
  }
  try {
    return params_from_json(j, expected);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint '" + path + "' is malformed: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Training loop

struct TrainConfig {
  std::size_t epochs = 8;
  std::size_t batch_size = 16;
  std::uint64_t seed = 1;
  double lr = 1e-3;
  double clip_norm = 0.0;  // 0 disables clipping
  std::string checkpoint;  // written after every epoch when nonempty

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (clip_norm < 0.0) throw ConfigError("clip_norm must be >= 0");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;  // mean per-pair loss over the epoch
  double seconds = 0.0;
};

inline std::string format_epoch_log(const EpochLog& e) {
  std::ostringstream s;
  s.precision(10);
  s << e.epoch << '\t' << e.mean_loss << '\t' << e.seconds;
  return s.str();
}

inline std::vector<EpochLog> train(ModelParams& params, const std::vector<Example>& data,
                                   const TrainConfig& config,
                                   const std::function<void(const EpochLog&)>& on_epoch = {}) {
  config.validate();
  if (data.empty()) throw DataError("training data is empty");
  AdamState adam = adam_init(params, config.lr);
  ModelParams grads = zero_params(params.config);
  std::vector<EpochLog> log;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batches =
        batch_indices(data.size(), config.batch_size, mix_seed(config.seed, epoch));
    double total = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      std::vector<const Example*> batch;
      for (std::size_t i : batches[b]) batch.push_back(&data[i]);
      const auto loss =
          batch_loss(params, batch, Mode::Train, mix_seed(mix_seed(config.seed, epoch), b), &grads);
      if (!std::isfinite(loss.mean_loss))
        throw NumericError("loss became non-finite at epoch " + std::to_string(epoch) +
                           ", batch " + std::to_string(b + 1));
      if (config.clip_norm > 0.0) clip_global_norm(grads, config.clip_norm);
      adam_step(adam, params, grads);
      total += loss.total_loss;
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochLog e{epoch, total / static_cast<double>(data.size()), secs};
    log.push_back(e);
    if (!config.checkpoint.empty()) save_checkpoint(params, config.checkpoint);
    if (on_epoch) on_epoch(e);
  }
  return log;
}

}  // namespace desknmt
