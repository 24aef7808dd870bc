#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "desknmt/corpus.hpp"
#include "desknmt/error.hpp"
#include "desknmt/preprocess.hpp"

namespace desknmt {

inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBos = 2;
inline constexpr int kEos = 3;
inline constexpr int kNumSpecials = 4;

inline const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s{"<pad>", "<unk>", "<s>", "</s>"};
  return s;
}

inline bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

class Vocabulary {
 public:
  Vocabulary() {
    for (const auto& s : special_tokens()) push(s);
  }

  // Entries must start with the four specials in order.
  explicit Vocabulary(const std::vector<std::string>& entries) {
    if (entries.size() < kNumSpecials ||
        !std::equal(special_tokens().begin(), special_tokens().end(), entries.begin()))
      throw DataError("vocabulary must start with <pad> <unk> <s> </s>");
    for (const auto& e : entries) {
      if (index_.count(e)) throw DataError("duplicate vocabulary entry '" + e + "'");
      push(e);
    }
  }

  int id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= entries_.size())
      throw DataError("vocabulary id " + std::to_string(id) + " out of range");
    return entries_[static_cast<std::size_t>(id)];
  }

  std::vector<int> ids(const Tokens& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  Tokens tokens(const std::vector<int>& ids) const {
    Tokens out;
    for (int i : ids) out.push_back(token(i));
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  const std::vector<std::string>& entries() const { return entries_; }

  void add(const std::string& token) {
    if (!index_.count(token)) push(token);
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.entries_ == b.entries_;
  }

 private:
  void push(const std::string& e) {
    index_.emplace(e, static_cast<int>(entries_.size()));
    entries_.push_back(e);
  }

  std::vector<std::string> entries_;
  std::unordered_map<std::string, int> index_;
};

// Entries with frequency >= min_count, by descending frequency then
// lexicographically, after the specials.
inline Vocabulary build_vocab(const std::vector<Tokens>& stream, std::size_t min_count = 1) {
  std::map<std::string, std::size_t> freq;
  for (const auto& s : stream)
    for (const auto& t : s) ++freq[t];
  if (freq.empty()) throw DataError("cannot build a vocabulary from an empty stream");
  std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, f] : items)
    if (f >= min_count) v.add(tok);
  return v;
}

inline void save_vocab(const Vocabulary& v, const std::string& path) {
  write_lines(path, v.entries());
}

inline Vocabulary load_vocab(const std::string& path) {
  return Vocabulary(read_lines(path));
}

// ---------------------------------------------------------------------------
// Language partitions and target filter masks

struct LanguagePartition {
  std::map<LanguageCode, std::set<int>> by_lang;
  std::set<int> neutral;
  std::size_t warnings = 0;  // entries whose prefix named no registered language

  std::optional<LanguageCode> language_of(int id) const {
    for (const auto& [lang, ids] : by_lang)
      if (ids.count(id)) return lang;
    return std::nullopt;
  }
};

// token -> languages whose corpora contain it
using OccurrenceMap = std::map<std::string, std::set<LanguageCode>>;

inline void record_occurrences(OccurrenceMap& occ, const Tokens& tokens,
                               const LanguageCode& lang) {
  for (const auto& t : tokens) occ[t].insert(lang);
}

// LangCoded vocabularies are partitioned by prefix. Other schemes need the
// occurrence map: an entry belongs to L iff it occurs only in L's text.
// Specials, forcing tokens and pseudo start words are always neutral.
inline LanguagePartition language_partition(const Vocabulary& vocab, PreprocScheme scheme,
                                            const LanguageRegistry& langs,
                                            const OccurrenceMap* occurrence = nullptr) {
  if (scheme != PreprocScheme::LangCodedForced && occurrence == nullptr)
    throw ConfigError("scheme '" + to_string(scheme) +
                      "' needs an occurrence map to partition its vocabulary");
  LanguagePartition part;
  for (const auto& c : langs.codes()) part.by_lang[c];
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    const int id = static_cast<int>(i);
    const std::string& tok = vocab.token(id);
    if (is_special(id) || is_forcing_token(tok, langs) || is_target_start(tok, langs) ||
        is_johnson_token(tok, langs)) {
      part.neutral.insert(id);
      continue;
    }
    if (scheme == PreprocScheme::LangCodedForced) {
      if (auto code = coded_prefix(tok, langs)) {
        part.by_lang[*code].insert(id);
      } else {
        part.neutral.insert(id);
        ++part.warnings;
      }
      continue;
    }
    auto it = occurrence->find(tok);
    if (it != occurrence->end() && it->second.size() == 1 &&
        langs.contains(*it->second.begin()))
      part.by_lang[*it->second.begin()].insert(id);
    else
      part.neutral.insert(id);
  }
  return part;
}

using Mask = std::vector<bool>;

inline Mask filter_mask(const Vocabulary& vocab, const LanguagePartition& partition,
                        const LanguageCode& tgt) {
  auto it = partition.by_lang.find(tgt);
  if (it == partition.by_lang.end() || it->second.empty())
    throw DataError("no vocabulary entries for target language '" + tgt.str() + "'");
  Mask mask(vocab.size(), false);
  for (int i = 0; i < kNumSpecials; ++i) mask[static_cast<std::size_t>(i)] = true;
  for (int id : it->second) mask[static_cast<std::size_t>(id)] = true;
  const std::string start = make_target_start(tgt);
  if (vocab.contains(start)) mask[static_cast<std::size_t>(vocab.id(start))] = true;
  return mask;
}

inline std::size_t count_allowed(const Mask& m) {
  return static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
}

}  // namespace desknmt
