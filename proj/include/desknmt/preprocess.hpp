#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "desknmt/corpus.hpp"
#include "desknmt/error.hpp"
#include "desknmt/subword.hpp"

namespace desknmt {

// Multilingual preprocessing schemes:
//   LangCodedForced - every word prefixed "de_", source wrapped in "<en>" tokens,
//                     target opened with the pseudo word "en__".
//   TargetTokenOnly - a single "2en" token in front of the source.
//   Factored        - plain surfaces; languages travel as word factors.
enum class PreprocScheme { LangCodedForced, TargetTokenOnly, Factored };

inline std::string to_string(PreprocScheme s) {
  switch (s) {
    case PreprocScheme::LangCodedForced: return "langcoded";
    case PreprocScheme::TargetTokenOnly: return "johnson";
    case PreprocScheme::Factored: return "factored";
  }
  return "?";
}

inline PreprocScheme parse_scheme(std::string_view s) {
  if (s == "langcoded") return PreprocScheme::LangCodedForced;
  if (s == "johnson") return PreprocScheme::TargetTokenOnly;
  if (s == "factored") return PreprocScheme::Factored;
  throw ConfigError("unknown preprocessing scheme '" + std::string(s) + "'");
}

struct WordFactors {
  LanguageCode word_lang;
  LanguageCode tgt_lang;

  friend bool operator==(const WordFactors&, const WordFactors&) = default;
};

struct TaggedToken {
  std::string surface;
  std::optional<LanguageCode> lang;
  std::optional<WordFactors> factors;

  friend bool operator==(const TaggedToken&, const TaggedToken&) = default;
};

inline std::string forcing_token(const LanguageCode& tgt) { return "<" + tgt.str() + ">"; }

inline std::string make_target_start(const LanguageCode& tgt) { return tgt.str() + "__"; }

inline std::string johnson_token(const LanguageCode& tgt) { return "2" + tgt.str(); }

// Registered language whose "<code>_" prefixes the token, if any.
inline std::optional<LanguageCode> coded_prefix(std::string_view token,
                                                const LanguageRegistry& langs) {
  const auto pos = token.find('_');
  if (pos == std::string_view::npos || pos + 1 >= token.size()) return std::nullopt;
  const auto code = token.substr(0, pos);
  if (!langs.contains(code)) return std::nullopt;
  return LanguageCode(std::string(code));
}

inline bool is_target_start(std::string_view token, const LanguageRegistry& langs) {
  return token.size() > 2 && token.substr(token.size() - 2) == "__" &&
         langs.contains(token.substr(0, token.size() - 2));
}

inline bool is_forcing_token(std::string_view token, const LanguageRegistry& langs) {
  return token.size() > 2 && token.front() == '<' && token.back() == '>' &&
         langs.contains(token.substr(1, token.size() - 2));
}

inline bool is_johnson_token(std::string_view token, const LanguageRegistry& langs) {
  return token.size() > 1 && token.front() == '2' && langs.contains(token.substr(1));
}

inline Tokens apply_language_coding(const Tokens& tokens, const LanguageCode& lang,
                                    const LanguageRegistry& langs) {
  Tokens out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) {
    if (coded_prefix(t, langs))
      throw DataError("token '" + t + "' already carries a language prefix");
    out.push_back(lang.str() + "_" + t);
  }
  return out;
}

inline Tokens apply_target_forcing(const Tokens& tokens, const LanguageCode& tgt,
                                   std::size_t repeat = 2, bool both_ends = true) {
  if (repeat < 1) throw ConfigError("forcing repeat must be at least 1");
  const std::string tag = forcing_token(tgt);
  Tokens out(repeat, tag);
  out.insert(out.end(), tokens.begin(), tokens.end());
  if (both_ends) out.insert(out.end(), repeat, tag);
  return out;
}

inline Tokens apply_johnson(const Tokens& tokens, const LanguageCode& tgt) {
  Tokens out{johnson_token(tgt)};
  out.insert(out.end(), tokens.begin(), tokens.end());
  return out;
}

inline std::vector<TaggedToken> annotate_factors(const Tokens& tokens,
                                                 const std::vector<LanguageCode>& word_langs,
                                                 const LanguageCode& tgt_lang,
                                                 const LanguageRegistry& langs) {
  if (word_langs.size() != tokens.size())
    throw DataError("per-token language list has " + std::to_string(word_langs.size()) +
                    " entries for " + std::to_string(tokens.size()) + " tokens");
  langs.require(tgt_lang);
  std::vector<TaggedToken> out;
  out.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    langs.require(word_langs[i]);
    out.push_back({tokens[i], word_langs[i], WordFactors{word_langs[i], tgt_lang}});
  }
  return out;
}

inline std::vector<TaggedToken> annotate_factors(const Tokens& tokens,
                                                 const LanguageCode& word_lang,
                                                 const LanguageCode& tgt_lang,
                                                 const LanguageRegistry& langs) {
  return annotate_factors(tokens, std::vector<LanguageCode>(tokens.size(), word_lang),
                          tgt_lang, langs);
}

inline Tokens surfaces(const std::vector<TaggedToken>& tokens) {
  Tokens out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(t.surface);
  return out;
}

// Factored text format: "surface|word_lang|tgt_lang" per token.
inline std::string format_factored(const std::vector<TaggedToken>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    const auto& t = tokens[i];
    if (!t.factors) throw DataError("token '" + t.surface + "' has no factors");
    out += t.surface + "|" + t.factors->word_lang.str() + "|" + t.factors->tgt_lang.str();
  }
  return out;
}

inline std::vector<TaggedToken> parse_factored(std::string_view line) {
  std::vector<TaggedToken> out;
  for (const auto& field : split_tokens(line)) {
    const auto b = field.rfind('|');
    const auto a = b == std::string::npos ? b : field.rfind('|', b - 1);
    if (a == std::string::npos || a == 0)
      throw DataError("factored token '" + field + "' is not surface|lang|lang");
    LanguageCode wl(field.substr(a + 1, b - a - 1));
    LanguageCode tl(field.substr(b + 1));
    out.push_back({field.substr(0, a), wl, WordFactors{wl, tl}});
  }
  return out;
}

struct PostprocessStats {
  std::size_t unknown_prefix = 0;    // LangCoded tokens without a registered prefix
  std::size_t dangling_marker = 0;   // BPE markers with nothing to join
};

// Inverse of the scheme encodings: drops control tokens, strips language
// prefixes, then undoes BPE.
inline Tokens postprocess(const Tokens& tokens, PreprocScheme scheme,
                          const LanguageRegistry& langs, std::string_view marker = "@@",
                          PostprocessStats* stats = nullptr) {
  Tokens kept;
  for (const auto& t : tokens) {
    if (is_target_start(t, langs)) continue;
    if (scheme == PreprocScheme::LangCodedForced) {
      if (is_forcing_token(t, langs)) continue;
      if (auto code = coded_prefix(t, langs)) {
        kept.push_back(t.substr(code->str().size() + 1));
      } else {
        if (stats) ++stats->unknown_prefix;
        kept.push_back(t);
      }
    } else if (scheme == PreprocScheme::TargetTokenOnly) {
      if (is_johnson_token(t, langs)) continue;
      kept.push_back(t);
    } else {
      kept.push_back(t);
    }
  }
  return bpe_undo(kept, marker, stats ? &stats->dangling_marker : nullptr);
}

}  // namespace desknmt
