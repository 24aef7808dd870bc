#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "desknmt/nnet.hpp"

namespace desknmt {

struct GradCheckResult {
  double max_rel_error = 0.0;       // max over tensors of ||a - n|| / max(||a||, ||n||)
  std::string worst_tensor;
  double max_coord_error = 0.0;     // max over coordinates of relative_error(a, n, floor)
  std::string worst_coord_tensor;
  std::size_t worst_coord_index = 0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

// Five-point central differences, (-f(+2h) + 8f(+h) - 8f(-h) + f(-2h)) / 12h,
// on every coordinate (or `max_per_tensor` sampled ones) of the batch-mean
// loss in Eval mode. The headline error is tensor-wise: the relative error of
// the gradient vector of each parameter tensor.
inline GradCheckResult grad_check(const ModelParams& params, const std::vector<Example>& batch,
                                  double eps = 3e-3, std::size_t max_per_tensor = 0,
                                  std::uint64_t seed = 0, double floor = 1e-8) {
  std::vector<const Example*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  ModelParams analytic = zero_params(params.config);
  batch_loss(params, ptrs, Mode::Eval, 0, &analytic);
  ModelParams probe = params;
  auto probe_named = probe.named();
  auto grad_named = analytic.named();
  std::mt19937_64 rng(seed);
  GradCheckResult res;
  for (std::size_t t = 0; t < probe_named.size(); ++t) {
    Tensor& w = *probe_named[t].second;
    std::vector<std::size_t> idx(w.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (max_per_tensor > 0 && idx.size() > max_per_tensor) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(max_per_tensor);
      std::sort(idx.begin(), idx.end());
    }
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    for (std::size_t i : idx) {
      const double orig = w[i];
      auto at = [&](double step) {
        w[i] = orig + step;
        return batch_loss(probe, ptrs, Mode::Eval, 0, nullptr).mean_loss;
      };
      const double numeric =
          (-at(2 * eps) + 8 * at(eps) - 8 * at(-eps) + at(-2 * eps)) / (12.0 * eps);
      w[i] = orig;
      const double a = (*grad_named[t].second)[i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      const double err = relative_error(a, numeric, floor);
      ++res.checked;
      if (res.checked == 1 || err > res.max_coord_error) {
        res.max_coord_error = err;
        res.worst_coord_tensor = probe_named[t].first;
        res.worst_coord_index = i;
      }
    }
    const double tensor_err =
        std::sqrt(diff2) / std::max({std::sqrt(a2), std::sqrt(n2), floor});
    if (res.worst_tensor.empty() || tensor_err > res.max_rel_error) {
      res.max_rel_error = tensor_err;
      res.worst_tensor = probe_named[t].first;
    }
  }
  return res;
}

// Random tiny model and batch for checks.
struct TinyProblem {
  ModelParams params;
  std::vector<Example> batch;
};

inline TinyProblem random_tiny_problem(std::uint64_t seed, bool factored, std::size_t n_layers = 1,
                                       std::size_t batch_size = 2) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  ModelConfig c;
  c.src_vocab = pick(6, 12);
  c.tgt_vocab = pick(6, 12);
  c.d_word = pick(2, 8);
  c.d_hidden = pick(2, 8);
  c.n_layers = n_layers;
  c.factored = factored;
  if (factored) {
    c.factor_vocab = pick(1, 4);
    c.d_lang = pick(1, 3);
  }
  TinyProblem p;
  p.params = init_params(c, rng());
  // Larger weights than the default init so gradients are not all tiny.
  std::uniform_real_distribution<double> w(-1.0, 1.0);
  for (auto& [name, t] : p.params.named())
    for (double& v : t->values()) v = w(rng);
  auto id = [&](std::size_t v) { return static_cast<int>(pick(kNumSpecials, v - 1)); };
  auto fid = [&] { return static_cast<int>(pick(0, c.factor_vocab - 1)); };
  for (std::size_t b = 0; b < batch_size; ++b) {
    Example ex;
    const std::size_t I = pick(2, 4), J = pick(1, 3);
    for (std::size_t i = 0; i < I; ++i) {
      ex.source.words.push_back(id(c.src_vocab));
      if (factored) {
        ex.source.word_langs.push_back(fid());
        ex.source.tgt_langs.push_back(fid());
      }
    }
    if (factored) ex.source.target_factor = fid();
    for (std::size_t j = 0; j + 1 < J; ++j) {
      ex.target.words.push_back(id(c.tgt_vocab));
      if (factored) ex.target.langs.push_back(fid());
    }
    ex.target.words.push_back(kEos);
    if (factored) ex.target.langs.push_back(fid());
    p.batch.push_back(std::move(ex));
  }
  return p;
}

}  // namespace desknmt
