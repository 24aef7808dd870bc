#pragma once

#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "desknmt/corpus.hpp"
#include "desknmt/error.hpp"

namespace desknmt {

// Byte-pair encoding with a continuation marker suffixed to every non-final
// unit of a word ("low@@ er").
struct BpeModel {
  std::vector<std::pair<std::string, std::string>> merges;  // priority order
  std::string marker = "@@";

  friend bool operator==(const BpeModel&, const BpeModel&) = default;
};

// Splits a word into UTF-8 code points.
inline std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const auto c = static_cast<unsigned char>(word[i]);
    std::size_t len = 1;
    if ((c >> 5) == 0x6) len = 2;
    else if ((c >> 4) == 0xE) len = 3;
    else if ((c >> 3) == 0x1E) len = 4;
    len = std::min(len, word.size() - i);
    out.emplace_back(word.substr(i, len));
    i += len;
  }
  return out;
}

namespace detail {

inline void merge_pair(std::vector<std::string>& symbols, const std::string& left,
                       const std::string& right) {
  std::vector<std::string> out;
  out.reserve(symbols.size());
  for (std::size_t i = 0; i < symbols.size(); ++i) {
    if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(symbols[i]);
    }
  }
  symbols = std::move(out);
}

}  // namespace detail

// Greedy most-frequent-pair merging over word-internal symbols. Among pairs of
// equal frequency the lexicographically smallest (left, right) wins. Stops
// early when no pair occurs at least twice.
inline BpeModel bpe_train(const std::vector<Tokens>& sentences, std::size_t n_merges,
                          std::string marker = "@@") {
  if (marker.empty()) throw ConfigError("BPE marker must be nonempty");
  std::map<std::string, std::size_t> word_freq;
  for (const auto& s : sentences)
    for (const auto& w : s) {
      if (w.find(marker) != std::string::npos)
        throw DataError("training token '" + w + "' contains the BPE marker");
      ++word_freq[w];
    }
  if (word_freq.empty()) throw DataError("BPE training corpus is empty");

  std::vector<std::pair<std::vector<std::string>, std::size_t>> words;
  for (const auto& [w, f] : word_freq) words.emplace_back(utf8_chars(w), f);

  BpeModel model;
  model.marker = std::move(marker);
  while (model.merges.size() < n_merges) {
    std::map<std::pair<std::string, std::string>, std::size_t> counts;
    for (const auto& [symbols, f] : words)
      for (std::size_t i = 0; i + 1 < symbols.size(); ++i)
        counts[{symbols[i], symbols[i + 1]}] += f;
    // std::map iterates in lexicographic order, so the first maximum wins ties.
    const std::pair<std::string, std::string>* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& [pair, c] : counts)
      if (c > best_count) {
        best = &pair;
        best_count = c;
      }
    if (best == nullptr || best_count < 2) break;
    const auto chosen = *best;
    for (auto& [symbols, f] : words) detail::merge_pair(symbols, chosen.first, chosen.second);
    model.merges.push_back(chosen);
  }
  return model;
}

using BpeRanks = std::map<std::pair<std::string, std::string>, std::size_t>;

inline BpeRanks bpe_ranks(const BpeModel& model) {
  BpeRanks rank;
  for (std::size_t i = 0; i < model.merges.size(); ++i) rank.emplace(model.merges[i], i);
  return rank;
}

inline std::vector<std::string> bpe_segment_word(const BpeModel& model,
                                                 const BpeRanks& rank,
                                                 std::string_view word) {
  std::vector<std::string> symbols = utf8_chars(word);
  while (symbols.size() > 1) {
    std::size_t best = model.merges.size();
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      auto it = rank.find({symbols[i], symbols[i + 1]});
      if (it != rank.end() && it->second < best) best = it->second;
    }
    if (best == model.merges.size()) break;
    detail::merge_pair(symbols, model.merges[best].first, model.merges[best].second);
  }
  return symbols;
}

inline Tokens bpe_apply(const BpeModel& model, const Tokens& tokens) {
  const BpeRanks rank = bpe_ranks(model);
  Tokens out;
  for (const auto& w : tokens) {
    auto units = bpe_segment_word(model, rank, w);
    for (std::size_t i = 0; i + 1 < units.size(); ++i) units[i] += model.marker;
    out.insert(out.end(), units.begin(), units.end());
  }
  return out;
}

// Joins every marker-suffixed unit with its successor. A marker on the last
// token has no successor; that token is kept verbatim and counted.
inline Tokens bpe_undo(const Tokens& tokens, std::string_view marker = "@@",
                       std::size_t* dangling = nullptr) {
  Tokens out;
  std::string pending;
  auto ends_with_marker = [&](const std::string& t) {
    return t.size() > marker.size() &&
           std::string_view(t).substr(t.size() - marker.size()) == marker;
  };
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::string& t = tokens[i];
    if (ends_with_marker(t) && i + 1 < tokens.size()) {
      pending += t.substr(0, t.size() - marker.size());
      continue;
    }
    if (ends_with_marker(t) && dangling) ++*dangling;
    out.push_back(pending + t);
    pending.clear();
  }
  return out;
}

inline void save_bpe(const BpeModel& model, const std::string& path) {
  std::vector<std::string> lines{"#desk-bpe v1 marker=" + model.marker};
  for (const auto& [l, r] : model.merges) lines.push_back(l + " " + r);
  write_lines(path, lines);
}

inline BpeModel load_bpe(const std::string& path) {
  const auto lines = read_lines(path);
  const std::string header = "#desk-bpe v1 marker=";
  if (lines.empty() || lines[0].rfind(header, 0) != 0)
    throw DataError("'" + path + "' is not a desk-bpe v1 merges file");
  BpeModel model;
  model.marker = lines[0].substr(header.size());
  if (model.marker.empty()) throw DataError("empty BPE marker in '" + path + "'");
  std::set<std::pair<std::string, std::string>> seen;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].empty()) continue;
    const Tokens parts = split_tokens(lines[i]);
    if (parts.size() != 2)
      throw DataError("bad merge at line " + std::to_string(i + 1) + " of '" + path + "'");
    if (!seen.insert({parts[0], parts[1]}).second)
      throw DataError("duplicate merge at line " + std::to_string(i + 1));
    model.merges.emplace_back(parts[0], parts[1]);
  }
  return model;
}

}  // namespace desknmt
