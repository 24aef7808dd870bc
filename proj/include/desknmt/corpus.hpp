#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "desknmt/error.hpp"
#include "json.hpp"

namespace desknmt {

using Tokens = std::vector<std::string>;

// ---------------------------------------------------------------------------
// Languages

class LanguageCode {
 public:
  LanguageCode() = default;
  explicit LanguageCode(std::string code) : code_(std::move(code)) {
    if (!valid(code_)) throw DataError("invalid language code '" + code_ + "'");
  }

  static bool valid(std::string_view s) {
    if (s.size() < 2 || s.size() > 8) return false;
    return std::all_of(s.begin(), s.end(),
                       [](char c) { return c >= 'a' && c <= 'z'; });
  }

  const std::string& str() const { return code_; }
  friend auto operator<=>(const LanguageCode&, const LanguageCode&) = default;

 private:
  std::string code_;
};

// Ordered set of languages known to a pipeline run. Position in the registry
// is stable and is used as the language's index.
class LanguageRegistry {
 public:
  LanguageRegistry() = default;
  explicit LanguageRegistry(std::vector<LanguageCode> codes) {
    for (auto& c : codes) add(c);
  }
  LanguageRegistry(std::initializer_list<const char*> codes) {
    for (const char* c : codes) add(LanguageCode(c));
  }

  void add(const LanguageCode& code) {
    if (contains(code))
      throw DataError("language '" + code.str() + "' registered twice");
    codes_.push_back(code);
  }

  bool contains(const LanguageCode& code) const {
    return std::find(codes_.begin(), codes_.end(), code) != codes_.end();
  }
  bool contains(std::string_view code) const {
    return std::any_of(codes_.begin(), codes_.end(),
                       [&](const LanguageCode& c) { return c.str() == code; });
  }

  void require(const LanguageCode& code) const {
    if (!contains(code))
      throw DataError("unregistered language '" + code.str() + "'");
  }

  std::size_t index_of(const LanguageCode& code) const {
    auto it = std::find(codes_.begin(), codes_.end(), code);
    if (it == codes_.end())
      throw DataError("unregistered language '" + code.str() + "'");
    return static_cast<std::size_t>(it - codes_.begin());
  }

  const std::vector<LanguageCode>& codes() const { return codes_; }
  std::size_t size() const { return codes_.size(); }

 private:
  std::vector<LanguageCode> codes_;
};

// ---------------------------------------------------------------------------
// Tokens and text

inline Tokens split_tokens(std::string_view line) {
  Tokens out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r'))
      ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r')
      ++j;
    if (j > i) out.emplace_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

inline std::string join_tokens(const Tokens& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

inline bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t extra = 0;
    if (c < 0x80) extra = 0;
    else if ((c >> 5) == 0x6) extra = 1;
    else if ((c >> 4) == 0xE) extra = 2;
    else if ((c >> 3) == 0x1E) extra = 3;
    else return false;
    if (i + extra >= s.size() && extra > 0) return false;
    for (std::size_t k = 1; k <= extra; ++k)
      if ((static_cast<unsigned char>(s[i + k]) >> 6) != 0x2) return false;
    i += extra + 1;
  }
  return true;
}

inline std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }
  return lines;
}

inline void write_lines(const std::string& path,
                        const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path + "'");
  for (const auto& l : lines) out << l << '\n';
}

// ---------------------------------------------------------------------------
// Parallel corpora

struct SentencePair {
  Tokens source;
  Tokens target;
  LanguageCode src_lang;
  LanguageCode tgt_lang;

  friend bool operator==(const SentencePair&, const SentencePair&) = default;
};

struct ParallelCorpus {
  std::vector<SentencePair> pairs;
  std::string provenance;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

inline std::string direction_label(const LanguageCode& src,
                                   const LanguageCode& tgt) {
  return src.str() + "-" + tgt.str();
}

struct LoadedCorpus {
  ParallelCorpus corpus;
  std::size_t dropped = 0;  // pairs with an empty side
};

// Pairs line i of both files. Lines empty on either side are dropped.
inline LoadedCorpus load_parallel(const std::string& src_path,
                                  const std::string& tgt_path,
                                  const LanguageCode& src_lang,
                                  const LanguageCode& tgt_lang) {
  const auto src = read_lines(src_path);
  const auto tgt = read_lines(tgt_path);
  if (src.size() != tgt.size()) {
    throw DataError("line count mismatch: '" + src_path + "' has " +
                    std::to_string(src.size()) + " lines, '" + tgt_path +
                    "' has " + std::to_string(tgt.size()));
  }
  LoadedCorpus out;
  out.corpus.provenance = direction_label(src_lang, tgt_lang);
  for (std::size_t i = 0; i < src.size(); ++i) {
    if (!valid_utf8(src[i]))
      throw DataError("invalid UTF-8 in '" + src_path + "' at line " +
                      std::to_string(i + 1));
    if (!valid_utf8(tgt[i]))
      throw DataError("invalid UTF-8 in '" + tgt_path + "' at line " +
                      std::to_string(i + 1));
    Tokens s = split_tokens(src[i]);
    Tokens t = split_tokens(tgt[i]);
    if (s.empty() || t.empty()) {
      ++out.dropped;
      continue;
    }
    out.corpus.pairs.push_back({std::move(s), std::move(t), src_lang, tgt_lang});
  }
  return out;
}

inline void write_parallel(const ParallelCorpus& corpus,
                           const std::string& src_path,
                           const std::string& tgt_path) {
  std::vector<std::string> src, tgt;
  for (const auto& p : corpus.pairs) {
    src.push_back(join_tokens(p.source));
    tgt.push_back(join_tokens(p.target));
  }
  write_lines(src_path, src);
  write_lines(tgt_path, tgt);
}

// A mixture keeps per-pair languages in a third file, one "src tgt" per line.
inline void write_mixture(const ParallelCorpus& corpus, const std::string& prefix) {
  write_parallel(corpus, prefix + ".src", prefix + ".tgt");
  std::vector<std::string> langs;
  for (const auto& p : corpus.pairs)
    langs.push_back(p.src_lang.str() + " " + p.tgt_lang.str());
  write_lines(prefix + ".langs", langs);
}

inline ParallelCorpus read_mixture(const std::string& prefix) {
  const auto src = read_lines(prefix + ".src");
  const auto tgt = read_lines(prefix + ".tgt");
  const auto langs = read_lines(prefix + ".langs");
  if (src.size() != tgt.size() || src.size() != langs.size())
    throw DataError("line count mismatch in mixture '" + prefix + "': " +
                    std::to_string(src.size()) + "/" + std::to_string(tgt.size()) +
                    "/" + std::to_string(langs.size()));
  ParallelCorpus out;
  out.provenance = prefix;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Tokens l = split_tokens(langs[i]);
    if (l.size() != 2)
      throw DataError("bad language line " + std::to_string(i + 1) + " in '" +
                      prefix + ".langs'");
    Tokens s = split_tokens(src[i]), t = split_tokens(tgt[i]);
    if (s.empty() || t.empty())
      throw DataError("empty side at line " + std::to_string(i + 1) +
                      " of mixture '" + prefix + "'");
    out.pairs.push_back({std::move(s), std::move(t), LanguageCode(l[0]),
                         LanguageCode(l[1])});
  }
  return out;
}

// Keeps pairs whose sides both have at most max_len tokens.
inline ParallelCorpus length_filter(const ParallelCorpus& corpus,
                                    std::size_t max_len = 50) {
  if (max_len < 1) throw ConfigError("max_len must be at least 1");
  ParallelCorpus out;
  out.provenance = corpus.provenance;
  for (const auto& p : corpus.pairs)
    if (p.source.size() <= max_len && p.target.size() <= max_len)
      out.pairs.push_back(p);
  return out;
}

// ---------------------------------------------------------------------------
// Mixtures

enum class MixtureStrategy { Direct, Zero2L, Zero4L, Zero6L, BackTransAugmented };

inline std::string to_string(MixtureStrategy s) {
  switch (s) {
    case MixtureStrategy::Direct: return "direct";
    case MixtureStrategy::Zero2L: return "zero2l";
    case MixtureStrategy::Zero4L: return "zero4l";
    case MixtureStrategy::Zero6L: return "zero6l";
    case MixtureStrategy::BackTransAugmented: return "backtrans";
  }
  return "?";
}

inline MixtureStrategy parse_strategy(std::string_view s) {
  if (s == "direct") return MixtureStrategy::Direct;
  if (s == "zero2l") return MixtureStrategy::Zero2L;
  if (s == "zero4l") return MixtureStrategy::Zero4L;
  if (s == "zero6l") return MixtureStrategy::Zero6L;
  if (s == "backtrans") return MixtureStrategy::BackTransAugmented;
  throw ConfigError("unknown mixture strategy '" + std::string(s) + "'");
}

struct MixtureRoles {
  LanguageCode source;
  LanguageCode pivot;
  LanguageCode target;
};

// Direction labels a strategy needs, in concatenation order.
inline std::vector<std::string> required_directions(MixtureStrategy strategy,
                                                    const MixtureRoles& r) {
  const auto& s = r.source;
  const auto& p = r.pivot;
  const auto& t = r.target;
  std::vector<std::string> dirs;
  if (strategy == MixtureStrategy::Direct) return {direction_label(s, t)};
  dirs = {direction_label(s, p), direction_label(p, t)};
  if (strategy == MixtureStrategy::Zero2L) return dirs;
  dirs.push_back(direction_label(p, s));
  dirs.push_back(direction_label(t, p));
  if (strategy == MixtureStrategy::Zero4L) return dirs;
  dirs.push_back(direction_label(p, p));
  dirs.push_back(direction_label(t, t));
  if (strategy == MixtureStrategy::Zero6L) return dirs;
  dirs.push_back(direction_label(s, t));
  dirs.push_back(direction_label(t, s));
  return dirs;
}

inline ParallelCorpus build_mixture(
    const std::map<std::string, ParallelCorpus>& parts,
    MixtureStrategy strategy, const MixtureRoles& roles) {
  ParallelCorpus out;
  out.provenance = to_string(strategy) + " mixture";
  for (const auto& dir : required_directions(strategy, roles)) {
    auto it = parts.find(dir);
    if (it == parts.end())
      throw DataError("mixture " + to_string(strategy) +
                      " is missing direction '" + dir + "'");
    out.pairs.insert(out.pairs.end(), it->second.pairs.begin(),
                     it->second.pairs.end());
  }
  return out;
}

// Autoencoding corpus: one side of `corpus` copied to both sides.
inline ParallelCorpus make_identity(const ParallelCorpus& corpus, bool target_side) {
  ParallelCorpus out;
  for (const auto& p : corpus.pairs) {
    const Tokens& side = target_side ? p.target : p.source;
    const LanguageCode& lang = target_side ? p.tgt_lang : p.src_lang;
    out.pairs.push_back({side, side, lang, lang});
  }
  out.provenance = out.pairs.empty()
                       ? "identity"
                       : direction_label(out.pairs[0].src_lang, out.pairs[0].tgt_lang);
  return out;
}

inline ParallelCorpus mirror(const ParallelCorpus& corpus) {
  ParallelCorpus out;
  out.provenance = corpus.provenance + " (reversed)";
  for (const auto& p : corpus.pairs)
    out.pairs.push_back({p.target, p.source, p.tgt_lang, p.src_lang});
  return out;
}

// ---------------------------------------------------------------------------
// Batching

// Deterministic shuffled partition of [0, n) into consecutive batches; the
// order inside each batch is shuffled again with a second stream.
inline std::vector<std::vector<std::size_t>> batch_indices(std::size_t n,
                                                           std::size_t batch_size,
                                                           std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    std::vector<std::size_t> batch(order.begin() + start, order.begin() + end);
    std::shuffle(batch.begin(), batch.end(), rng);
    batches.push_back(std::move(batch));
  }
  return batches;
}

inline std::vector<std::vector<SentencePair>> batch_iter(const ParallelCorpus& corpus,
                                                         std::size_t batch_size,
                                                         std::uint64_t seed) {
  std::vector<std::vector<SentencePair>> out;
  for (const auto& idx : batch_indices(corpus.size(), batch_size, seed)) {
    auto& batch = out.emplace_back();
    for (std::size_t i : idx) batch.push_back(corpus.pairs[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic languages
//
// Each language renders concept c as its stem followed by the decimal concept
// number ("ka17"). Stems are lowercase letters, so two languages share a word
// only if they share a stem; the spec parser rejects that. Translation between
// any two languages is token-wise through the concept id, which makes every
// reference translation exact.

struct SynthLanguage {
  LanguageCode code;
  std::string stem;
};

struct SynthSpec {
  std::vector<SynthLanguage> languages;
  int concepts = 20;
  int min_len = 3;
  int max_len = 8;
  std::size_t pairs_per_direction = 500;
  std::uint64_t seed = 1;
  double zipf = 0.0;  // concept frequency ~ 1/(rank+1)^zipf; 0 is uniform
};

inline SynthSpec parse_synth_spec(const nlohmann::json& j) {
  static const std::set<std::string> known = {
      "languages", "concepts", "sentence_len", "pairs_per_direction", "seed", "zipf"};
  if (!j.is_object()) throw ConfigError("synthetic spec must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown synthetic spec key '" + it.key() + "'");
  SynthSpec spec;
  if (!j.contains("languages") || !j["languages"].is_array() || j["languages"].empty())
    throw ConfigError("synthetic spec needs a nonempty 'languages' array");
  for (const auto& l : j["languages"]) {
    SynthLanguage lang;
    if (l.is_string()) {
      lang.code = LanguageCode(l.get<std::string>());
      lang.stem = lang.code.str();
    } else if (l.is_object()) {
      for (auto it = l.begin(); it != l.end(); ++it)
        if (it.key() != "code" && it.key() != "stem")
          throw ConfigError("unknown language key '" + it.key() + "'");
      lang.code = LanguageCode(l.at("code").get<std::string>());
      lang.stem = l.value("stem", lang.code.str());
    } else {
      throw ConfigError("language entries must be strings or objects");
    }
    spec.languages.push_back(std::move(lang));
  }
  spec.concepts = j.value("concepts", spec.concepts);
  if (j.contains("sentence_len")) {
    const auto& r = j["sentence_len"];
    if (!r.is_array() || r.size() != 2)
      throw ConfigError("'sentence_len' must be [min, max]");
    spec.min_len = r[0].get<int>();
    spec.max_len = r[1].get<int>();
  }
  spec.pairs_per_direction = j.value("pairs_per_direction", spec.pairs_per_direction);
  spec.seed = j.value("seed", spec.seed);
  spec.zipf = j.value("zipf", spec.zipf);
  return spec;
}

inline nlohmann::json to_json(const SynthSpec& spec) {
  nlohmann::json langs = nlohmann::json::array();
  for (const auto& l : spec.languages)
    langs.push_back({{"code", l.code.str()}, {"stem", l.stem}});
  return {{"languages", langs},
          {"concepts", spec.concepts},
          {"sentence_len", {spec.min_len, spec.max_len}},
          {"pairs_per_direction", spec.pairs_per_direction},
          {"seed", spec.seed},
          {"zipf", spec.zipf}};
}

class SyntheticLexicon {
 public:
  explicit SyntheticLexicon(const SynthSpec& spec) : spec_(spec) {
    if (spec.concepts < 1) throw ConfigError("concepts must be at least 1");
    if (spec.min_len < 1 || spec.max_len < spec.min_len)
      throw ConfigError("sentence_len must satisfy 1 <= min <= max");
    std::set<std::string> codes;
    for (const auto& l : spec.languages) {
      if (l.stem.empty() ||
          !std::all_of(l.stem.begin(), l.stem.end(),
                       [](char c) { return c >= 'a' && c <= 'z'; }))
        throw ConfigError("stem of '" + l.code.str() + "' must be lowercase letters");
      if (!codes.insert(l.code.str()).second)
        throw ConfigError("language '" + l.code.str() + "' listed twice");
    }
    for (std::size_t a = 0; a < spec.languages.size(); ++a) {
      std::set<std::string> words_a;
      for (int c = 0; c < spec.concepts; ++c) words_a.insert(word(a, c));
      for (std::size_t b = a + 1; b < spec.languages.size(); ++b)
        for (int c = 0; c < spec.concepts; ++c)
          if (words_a.count(word(b, c)))
            throw ConfigError("alphabets of '" + spec.languages[a].code.str() +
                              "' and '" + spec.languages[b].code.str() + "' overlap");
    }
  }

  std::string word(std::size_t lang, int concept_id) const {
    return spec_.languages[lang].stem + std::to_string(concept_id);
  }

  std::size_t lang_index(const LanguageCode& code) const {
    for (std::size_t i = 0; i < spec_.languages.size(); ++i)
      if (spec_.languages[i].code == code) return i;
    throw DataError("language '" + code.str() + "' not in synthetic spec");
  }

  // Concept id of a word in the given language, or nullopt.
  std::optional<int> concept_of(std::size_t lang, std::string_view token) const {
    const std::string& stem = spec_.languages[lang].stem;
    if (token.size() <= stem.size() || token.substr(0, stem.size()) != stem)
      return std::nullopt;
    const auto digits = token.substr(stem.size());
    if (!std::all_of(digits.begin(), digits.end(),
                     [](char c) { return c >= '0' && c <= '9'; }))
      return std::nullopt;
    if (digits.size() > 1 && digits[0] == '0') return std::nullopt;
    const int c = std::stoi(std::string(digits));
    if (c >= spec_.concepts) return std::nullopt;
    return c;
  }

  std::optional<LanguageCode> language_of(std::string_view token) const {
    for (std::size_t i = 0; i < spec_.languages.size(); ++i)
      if (concept_of(i, token)) return spec_.languages[i].code;
    return std::nullopt;
  }

  Tokens render(std::size_t lang, const std::vector<int>& concept_ids) const {
    Tokens out;
    for (int c : concept_ids) out.push_back(word(lang, c));
    return out;
  }

  // Exact reference translation; unknown tokens pass through.
  Tokens translate(const Tokens& tokens, const LanguageCode& from,
                   const LanguageCode& to) const {
    const std::size_t a = lang_index(from), b = lang_index(to);
    Tokens out;
    for (const auto& t : tokens) {
      auto c = concept_of(a, t);
      out.push_back(c ? word(b, *c) : t);
    }
    return out;
  }

  std::vector<std::string> words(std::size_t lang) const {
    std::vector<std::string> out;
    for (int c = 0; c < spec_.concepts; ++c) out.push_back(word(lang, c));
    return out;
  }

  const SynthSpec& spec() const { return spec_; }

 private:
  SynthSpec spec_;
};

// Direction label -> corpus. For each unordered language pair {X, Y} one set
// of concept sentences yields both X-Y and its mirror Y-X; each language also
// gets an X-X identity corpus drawn from fresh sentences.
inline std::map<std::string, ParallelCorpus> synth_corpus(const SynthSpec& spec,
                                                          std::uint64_t seed) {
  const SyntheticLexicon lex(spec);
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(spec.min_len, spec.max_len);
  std::vector<double> weights(static_cast<std::size_t>(spec.concepts));
  for (std::size_t c = 0; c < weights.size(); ++c)
    weights[c] = 1.0 / std::pow(static_cast<double>(c + 1), spec.zipf);
  std::discrete_distribution<int> concept_dist(weights.begin(), weights.end());

  auto sentence = [&] {
    std::vector<int> s(static_cast<std::size_t>(len_dist(rng)));
    for (auto& c : s) c = concept_dist(rng);
    return s;
  };

  std::map<std::string, ParallelCorpus> out;
  const auto& langs = spec.languages;
  for (std::size_t a = 0; a < langs.size(); ++a) {
    for (std::size_t b = a + 1; b < langs.size(); ++b) {
      ParallelCorpus fwd;
      fwd.provenance = "synthetic " + direction_label(langs[a].code, langs[b].code);
      for (std::size_t n = 0; n < spec.pairs_per_direction; ++n) {
        const auto s = sentence();
        fwd.pairs.push_back(
            {lex.render(a, s), lex.render(b, s), langs[a].code, langs[b].code});
      }
      out[direction_label(langs[b].code, langs[a].code)] = mirror(fwd);
      out[direction_label(langs[b].code, langs[a].code)].provenance =
          "synthetic " + direction_label(langs[b].code, langs[a].code);
      out[direction_label(langs[a].code, langs[b].code)] = std::move(fwd);
    }
  }
  for (std::size_t a = 0; a < langs.size(); ++a) {
    ParallelCorpus id;
    id.provenance = "synthetic " + direction_label(langs[a].code, langs[a].code);
    for (std::size_t n = 0; n < spec.pairs_per_direction; ++n) {
      const auto w = lex.render(a, sentence());
      id.pairs.push_back({w, w, langs[a].code, langs[a].code});
    }
    out[direction_label(langs[a].code, langs[a].code)] = std::move(id);
  }
  return out;
}

}  // namespace desknmt
