#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "desknmt/corpus.hpp"
#include "desknmt/error.hpp"
#include "desknmt/nnet.hpp"
#include "desknmt/vocab.hpp"

namespace desknmt {

struct Hypothesis {
  std::vector<int> tokens;
  double score = 0.0;  // sum of chosen log-probabilities
  DecoderState state;
  std::vector<Vec> feature_trace;  // per-step language-factor log-distributions
  bool finished = false;
};

struct DecodeConfig {
  std::size_t beam = 15;
  std::size_t max_len = 50;
  std::optional<LanguageCode> filter;  // resolved to a mask by the caller
  bool length_norm = false;
  bool record_features = true;

  void validate() const {
    if (beam < 1) throw ConfigError("beam must be at least 1");
    if (max_len < 1) throw ConfigError("max_len must be at least 1");
  }
};

namespace detail {

inline void check_mask(const ModelParams& p, const Mask* mask) {
  if (!mask) return;
  if (mask->size() != p.config.tgt_vocab)
    throw ShapeError("mask covers " + std::to_string(mask->size()) + " ids, vocabulary has " +
                     std::to_string(p.config.tgt_vocab));
  for (int s = 0; s < kNumSpecials; ++s)
    if (!(*mask)[static_cast<std::size_t>(s)])
      throw ConfigError("target mask must allow every special token");
}

inline double final_score(const Hypothesis& h, bool length_norm) {
  return length_norm ? h.score / static_cast<double>(std::max<std::size_t>(1, h.tokens.size()))
                     : h.score;
}

// Highest score first; ties by lexicographically smaller token sequence.
inline bool better_final(const Hypothesis& a, const Hypothesis& b, bool length_norm) {
  const double sa = final_score(a, length_norm), sb = final_score(b, length_norm);
  if (sa != sb) return sa > sb;
  return a.tokens < b.tokens;
}

}  // namespace detail

// Beam search over the (optionally masked) output distribution. Each step
// expands every live hypothesis and keeps the `beam` best candidates by
// (score desc, token id asc, parent order asc); candidates ending in </s> are
// set aside as finished. Without length normalization the search stops as
// soon as the best finished score is >= every live score.
inline Hypothesis beam_search(const ModelParams& p, const SourceInput& src,
                              const DecodeConfig& config, const Mask* mask = nullptr) {
  config.validate();
  detail::check_mask(p, mask);
  const EncodedSource enc = prepare_source(p, src);
  const bool factored = p.config.factored && config.record_features;

  std::vector<Hypothesis> live(1);
  live[0].state = initial_state(p, enc.enc);
  std::vector<Hypothesis> finished;

  struct Candidate {
    double score;
    int token;
    std::size_t parent;
  };
  for (std::size_t step = 0; step < config.max_len && !live.empty(); ++step) {
    std::vector<DecoderState> next_states(live.size());
    std::vector<Vec> feats(live.size());
    std::vector<Candidate> cands;
    for (std::size_t h = 0; h < live.size(); ++h) {
      const int prev = live[h].tokens.empty() ? kBos : live[h].tokens.back();
      auto [state, z] = advance(p, enc, live[h].state, prev);
      const Vec logp = output_distribution(p, z, mask);
      if (factored) feats[h] = factor_distributions(p, z);
      next_states[h] = std::move(state);
      for (std::size_t v = 0; v < logp.size(); ++v)
        if (std::isfinite(logp[v]))
          cands.push_back({live[h].score + logp[v], static_cast<int>(v), h});
    }
    const std::size_t keep = std::min(config.beam, cands.size());
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep),
                      cands.end(), [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.token != b.token) return a.token < b.token;
                        return a.parent < b.parent;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t k = 0; k < keep; ++k) {
      const auto& c = cands[k];
      Hypothesis h;
      h.tokens = live[c.parent].tokens;
      h.tokens.push_back(c.token);
      h.score = c.score;
      h.state = next_states[c.parent];
      h.feature_trace = live[c.parent].feature_trace;
      if (factored) h.feature_trace.push_back(feats[c.parent]);
      h.finished = c.token == kEos;
      (h.finished ? finished : next).push_back(std::move(h));
    }
    live = std::move(next);
    if (!config.length_norm && !finished.empty() && !live.empty()) {
      double best_finished = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_finished = std::max(best_finished, f.score);
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) best_live = std::max(best_live, l.score);
      if (best_finished >= best_live) break;
    }
  }
  const auto& pool = finished.empty() ? live : finished;
  if (pool.empty()) throw NumericError("beam search produced no hypothesis");
  const Hypothesis* best = &pool[0];
  for (const auto& h : pool)
    if (detail::better_final(h, *best, config.length_norm)) best = &h;
  return *best;
}

// Argmax at every step, lowest id on ties, until </s> or max_len.
inline Hypothesis greedy_decode(const ModelParams& p, const SourceInput& src,
                                const DecodeConfig& config, const Mask* mask = nullptr) {
  config.validate();
  detail::check_mask(p, mask);
  const EncodedSource enc = prepare_source(p, src);
  Hypothesis h;
  h.state = initial_state(p, enc.enc);
  for (std::size_t step = 0; step < config.max_len; ++step) {
    const int prev = h.tokens.empty() ? kBos : h.tokens.back();
    auto [state, z] = advance(p, enc, h.state, prev);
    const Vec logp = output_distribution(p, z, mask);
    std::size_t best = 0;
    for (std::size_t v = 1; v < logp.size(); ++v)
      if (logp[v] > logp[best]) best = v;
    h.tokens.push_back(static_cast<int>(best));
    h.score += logp[best];
    h.state = std::move(state);
    if (p.config.factored && config.record_features)
      h.feature_trace.push_back(factor_distributions(p, z));
    if (static_cast<int>(best) == kEos) {
      h.finished = true;
      break;
    }
  }
  return h;
}

// Sum of log P(tokens[j] | tokens[<j], src) under the word head.
inline double score_tokens(const ModelParams& p, const SourceInput& src,
                           const std::vector<int>& tokens, const Mask* mask = nullptr) {
  detail::check_mask(p, mask);
  const EncodedSource enc = prepare_source(p, src);
  DecoderState s = initial_state(p, enc.enc);
  double score = 0.0;
  int prev = kBos;
  for (int t : tokens) {
    auto [state, z] = advance(p, enc, s, prev);
    score += output_distribution(p, z, mask).at(static_cast<std::size_t>(t));
    s = std::move(state);
    prev = t;
  }
  return score;
}

// Argmax language factor per emitted step (lowest id on ties). Factor id k
// is the k-th registered language.
inline std::vector<std::string> readout_features(const Hypothesis& h,
                                                 const LanguageRegistry& langs) {
  if (h.feature_trace.empty() || h.feature_trace.size() != h.tokens.size())
    throw ConfigError("hypothesis carries no language-factor trace");
  std::vector<std::string> out;
  for (const auto& d : h.feature_trace) {
    if (d.size() != langs.size())
      throw ShapeError("factor distribution does not match the language registry");
    const auto it = std::max_element(d.begin(), d.end());
    out.push_back(langs.codes()[static_cast<std::size_t>(it - d.begin())].str());
  }
  return out;
}

// All sequences over the vocabulary of length <= max_len that end in </s>
// (and contain no earlier </s>); returns the best by score, ties by smaller
// sequence. Exponential; intended as a test oracle.
inline Hypothesis exhaustive_search(const ModelParams& p, const SourceInput& src,
                                    std::size_t max_len, const Mask* mask = nullptr) {
  detail::check_mask(p, mask);
  const EncodedSource enc = prepare_source(p, src);
  Hypothesis best;
  best.score = -std::numeric_limits<double>::infinity();
  bool found = false;
  std::vector<int> prefix;
  std::function<void(const DecoderState&, double)> rec = [&](const DecoderState& s, double sc) {
    const int prev = prefix.empty() ? kBos : prefix.back();
    auto [state, z] = advance(p, enc, s, prev);
    const Vec logp = output_distribution(p, z, mask);
    for (std::size_t v = 0; v < logp.size(); ++v) {
      if (!std::isfinite(logp[v])) continue;
      prefix.push_back(static_cast<int>(v));
      const double total = sc + logp[v];
      if (static_cast<int>(v) == kEos) {
        if (!found || total > best.score || (total == best.score && prefix < best.tokens)) {
          best.tokens = prefix;
          best.score = total;
          best.finished = true;
          found = true;
        }
      } else if (prefix.size() < max_len) {
        rec(state, total);
      }
      prefix.pop_back();
    }
  };
  rec(initial_state(p, enc.enc), 0.0);
  if (!found) throw NumericError("no finished sequence within max_len");
  return best;
}

}  // namespace desknmt
