#pragma once

// Fixtures shared by the unit suites and the acceptance runner.

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "desknmt/desknmt.hpp"

namespace desknmt::testing {

inline SynthSpec small_spec(std::size_t pairs = 60, std::uint64_t seed = 7) {
  SynthSpec s;
  s.languages = {{LanguageCode("aa"), "ka"}, {LanguageCode("pp"), "po"}, {LanguageCode("bb"), "bu"}};
  s.concepts = 10;
  s.min_len = 2;
  s.max_len = 5;
  s.pairs_per_direction = pairs;
  s.seed = seed;
  return s;
}

inline LanguageRegistry registry_of(const SynthSpec& s) {
  LanguageRegistry r;
  for (const auto& l : s.languages) r.add(l.code);
  return r;
}

inline MixtureRoles small_roles() {
  return {LanguageCode("aa"), LanguageCode("pp"), LanguageCode("bb")};
}

// Random mask over the target vocabulary: specials always allowed, every
// other id with probability 1/2, at least one non-special id.
inline Mask random_mask(std::size_t vocab, std::mt19937_64& rng) {
  Mask m(vocab, false);
  for (int s = 0; s < kNumSpecials; ++s) m[static_cast<std::size_t>(s)] = true;
  std::bernoulli_distribution coin(0.5);
  bool any = false;
  for (std::size_t v = kNumSpecials; v < vocab; ++v) {
    m[v] = coin(rng);
    any = any || m[v];
  }
  if (!any) m[kNumSpecials] = true;
  return m;
}

// Same model with every disallowed output bias set to -inf.
inline ModelParams mask_into_bias(const ModelParams& p, const Mask& mask) {
  ModelParams q = p;
  for (std::size_t v = 0; v < mask.size(); ++v)
    if (!mask[v]) q.out_b.raw()[v] = -std::numeric_limits<double>::infinity();
  return q;
}

struct AdversarialToy {
  System sys;
  SyntheticLexicon lexicon;
  std::vector<Tokens> sources;  // aa sentences to translate into bb
  LanguageCode src{"aa"}, tgt{"bb"};
};

// Language-coded zero-shot system whose output layer is biased toward the
// pivot language: every pp-coded unit gets +bias. Unfiltered decoding then
// drifts into the pivot language while the bb units stay reachable.
inline AdversarialToy adversarial_toy(double bias = 3.0, std::uint64_t seed = 11) {
  const SynthSpec spec = small_spec(40, seed);
  const auto parts = synth_corpus(spec, spec.seed);
  const auto mixture = build_mixture(parts, MixtureStrategy::Zero6L, small_roles());
  ModelShape shape;
  shape.d_word = 8;
  shape.d_hidden = 8;
  shape.init_scale = 0.5;
  AdversarialToy toy{build_system(mixture, PreprocScheme::LangCodedForced, registry_of(spec), 3,
                                  shape, seed),
                     SyntheticLexicon(spec),
                     {}};
  const auto part = toy.sys.partition();
  for (int id : part.by_lang.at(LanguageCode("pp"))) toy.sys.params.out_b.raw()[id] += bias;
  for (const auto& p : parts.at("aa-bb").pairs) toy.sources.push_back(p.source);
  return toy;
}

// Wrong-language rate over the emitted units, by the language partition of
// the target vocabulary.
inline LangReport decode_purity(const AdversarialToy& toy, bool filter, std::size_t beam = 3) {
  DecodeConfig dc;
  dc.beam = beam;
  dc.max_len = 12;
  if (filter) dc.filter = toy.tgt;
  std::vector<std::vector<int>> outs;
  for (const auto& s : toy.sources)
    outs.push_back(translate(toy.sys, s, toy.src, toy.tgt, dc).hyp.tokens);
  return wrong_language_rate(outs, toy.sys.partition(), toy.tgt);
}

// Largest max_len with vocab^max_len <= limit.
inline std::size_t exhaustive_len(std::size_t vocab, std::size_t limit = 512) {
  std::size_t len = 0, total = 1;
  while (total * vocab <= limit) {
    total *= vocab;
    ++len;
  }
  return len;
}

inline std::size_t ipow(std::size_t b, std::size_t e) {
  std::size_t r = 1;
  while (e--) r *= b;
  return r;
}

}  // namespace desknmt::testing
