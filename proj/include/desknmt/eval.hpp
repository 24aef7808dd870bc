#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "desknmt/corpus.hpp"
#include "desknmt/error.hpp"
#include "desknmt/vocab.hpp"

namespace desknmt {

struct BleuReport {
  double bleu = 0.0;  // percentage
  std::vector<double> precisions;
  std::vector<std::size_t> matches, totals;
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

// Corpus BLEU, single reference, clipped n-gram precision, no smoothing.
inline BleuReport bleu(const std::vector<Tokens>& hyps, const std::vector<Tokens>& refs,
                       std::size_t max_n = 4) {
  if (hyps.size() != refs.size())
    throw DataError("BLEU needs one reference per hypothesis (" + std::to_string(hyps.size()) +
                    " vs " + std::to_string(refs.size()) + ")");
  if (max_n < 1) throw ConfigError("BLEU max_n must be at least 1");
  BleuReport r;
  r.matches.assign(max_n, 0);
  r.totals.assign(max_n, 0);
  for (std::size_t s = 0; s < hyps.size(); ++s) {
    const auto& h = hyps[s];
    const auto& ref = refs[s];
    r.hyp_length += h.size();
    r.ref_length += ref.size();
    for (std::size_t n = 1; n <= max_n; ++n) {
      std::map<Tokens, std::size_t> ref_counts, hyp_counts;
      for (std::size_t i = 0; i + n <= ref.size(); ++i)
        ++ref_counts[Tokens(ref.begin() + static_cast<std::ptrdiff_t>(i),
                            ref.begin() + static_cast<std::ptrdiff_t>(i + n))];
      for (std::size_t i = 0; i + n <= h.size(); ++i)
        ++hyp_counts[Tokens(h.begin() + static_cast<std::ptrdiff_t>(i),
                            h.begin() + static_cast<std::ptrdiff_t>(i + n))];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) r.matches[n - 1] += std::min(c, it->second);
        r.totals[n - 1] += c;
      }
    }
  }
  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t n = 0; n < max_n; ++n) {
    const double p = r.totals[n] == 0 ? 0.0
                                      : static_cast<double>(r.matches[n]) /
                                            static_cast<double>(r.totals[n]);
    r.precisions.push_back(p);
    if (p == 0.0) zero = true;
    else log_sum += std::log(p);
  }
  if (r.hyp_length == 0) {
    r.brevity_penalty = 0.0;
  } else if (r.hyp_length > r.ref_length) {
    r.brevity_penalty = 1.0;
  } else {
    r.brevity_penalty = std::exp(1.0 - static_cast<double>(r.ref_length) /
                                           static_cast<double>(r.hyp_length));
  }
  r.bleu = zero ? 0.0 : 100.0 * r.brevity_penalty * std::exp(log_sum / static_cast<double>(max_n));
  return r;
}

struct LangReport {
  double token_rate = 0.0;     // wrong tokens / language-bearing tokens
  double sentence_rate = 0.0;  // sentences with at least one wrong token / sentences
  double majority_rate = 0.0;  // sentences where wrong tokens are > half of the counted ones
  std::size_t tokens = 0, wrong_tokens = 0;
  std::size_t sentences = 0, wrong_sentences = 0, majority_sentences = 0;
};

using LanguageOf = std::function<std::optional<LanguageCode>(const std::string&)>;

// Tokens for which lang_of gives nullopt (specials, neutral entries) are not
// counted at all.
inline LangReport wrong_language_rate(const std::vector<Tokens>& hyps, const LanguageOf& lang_of,
                                      const LanguageCode& tgt) {
  LangReport r;
  r.sentences = hyps.size();
  for (const auto& h : hyps) {
    std::size_t counted = 0, wrong = 0;
    for (const auto& t : h) {
      const auto l = lang_of(t);
      if (!l) continue;
      ++counted;
      if (*l != tgt) ++wrong;
    }
    r.tokens += counted;
    r.wrong_tokens += wrong;
    if (wrong > 0) ++r.wrong_sentences;
    if (2 * wrong > counted) ++r.majority_sentences;
  }
  if (r.tokens) r.token_rate = static_cast<double>(r.wrong_tokens) / static_cast<double>(r.tokens);
  if (r.sentences) {
    r.sentence_rate =
        static_cast<double>(r.wrong_sentences) / static_cast<double>(r.sentences);
    r.majority_rate =
        static_cast<double>(r.majority_sentences) / static_cast<double>(r.sentences);
  }
  return r;
}

// Id-level variant over a vocabulary partition.
inline LangReport wrong_language_rate(const std::vector<std::vector<int>>& hyps,
                                      const LanguagePartition& partition,
                                      const LanguageCode& tgt) {
  std::vector<Tokens> as_text;
  for (const auto& h : hyps) {
    Tokens t;
    for (int id : h) t.push_back(std::to_string(id));
    as_text.push_back(std::move(t));
  }
  return wrong_language_rate(
      as_text,
      [&](const std::string& s) -> std::optional<LanguageCode> {
        const int id = std::stoi(s);
        if (is_special(id) || partition.neutral.count(id)) return std::nullopt;
        return partition.language_of(id);
      },
      tgt);
}

}  // namespace desknmt
