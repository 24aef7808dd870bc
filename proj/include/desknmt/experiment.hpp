#pragma once

// Toy zero-shot comparison: trains each listed system on synthetic
// languages, decodes a held-out source->target test set and tabulates BLEU,
// wrong-language rates, parameter counts and vocabulary sizes.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "desknmt/corpus.hpp"
#include "desknmt/eval.hpp"
#include "desknmt/pipeline.hpp"
#include "desknmt/train.hpp"
#include "json.hpp"

namespace desknmt {

struct ExperimentConfig {
  SynthSpec synth;
  MixtureRoles roles;
  std::vector<std::string> systems;
  std::size_t bpe_merges = 40;
  ModelShape model;
  TrainConfig train;
  DecodeConfig decode;
  std::size_t test_sentences = 100;
  std::size_t max_len = 50;
  std::uint64_t seed = 1;
};

inline const std::vector<std::string>& known_systems() {
  static const std::vector<std::string> s{"direct",         "pivot",          "zero2l",
                                          "zero4l",         "zero6l",         "zero6l+filter",
                                          "zero6l+feature", "backtrans",      "backtrans+filter"};
  return s;
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& known,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError("'" + where + "' must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

}  // namespace detail

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"synth", "roles", "systems", "bpe_merges", "model", "train", "decode",
                          "test_sentences", "max_len", "seed"},
                         "experiment config");
  ExperimentConfig c;
  try {
    c.synth = parse_synth_spec(j.at("synth"));
    const auto& r = j.at("roles");
    detail::reject_unknown(r, {"source", "pivot", "target"}, "roles");
    c.roles = {LanguageCode(r.at("source").get<std::string>()),
               LanguageCode(r.at("pivot").get<std::string>()),
               LanguageCode(r.at("target").get<std::string>())};
    c.systems = j.value("systems", known_systems());
    for (const auto& s : c.systems)
      if (std::find(known_systems().begin(), known_systems().end(), s) == known_systems().end())
        throw ConfigError("unknown system '" + s + "'");
    c.bpe_merges = j.value("bpe_merges", c.bpe_merges);
    if (j.contains("model")) {
      const auto& m = j["model"];
      detail::reject_unknown(m, {"d_word", "d_lang", "d_hidden", "n_layers", "dropout", "init_scale"},
                             "model");
      c.model.d_word = m.value("d_word", c.model.d_word);
      c.model.d_lang = m.value("d_lang", c.model.d_lang);
      c.model.d_hidden = m.value("d_hidden", c.model.d_hidden);
      c.model.n_layers = m.value("n_layers", c.model.n_layers);
      c.model.dropout = m.value("dropout", c.model.dropout);
      c.model.init_scale = m.value("init_scale", c.model.init_scale);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      detail::reject_unknown(t, {"epochs", "batch_size", "lr", "clip_norm"}, "train");
      c.train.epochs = t.value("epochs", c.train.epochs);
      c.train.batch_size = t.value("batch_size", c.train.batch_size);
      c.train.lr = t.value("lr", c.train.lr);
      c.train.clip_norm = t.value("clip_norm", c.train.clip_norm);
    }
    if (j.contains("decode")) {
      const auto& d = j["decode"];
      detail::reject_unknown(d, {"beam", "max_len", "length_norm"}, "decode");
      c.decode.beam = d.value("beam", c.decode.beam);
      c.decode.max_len = d.value("max_len", c.decode.max_len);
      c.decode.length_norm = d.value("length_norm", c.decode.length_norm);
    }
    c.test_sentences = j.value("test_sentences", c.test_sentences);
    c.max_len = j.value("max_len", c.max_len);
    c.seed = j.value("seed", c.seed);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
  c.train.validate();
  c.decode.validate();
  if (c.test_sentences < 1) throw ConfigError("test_sentences must be at least 1");
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"synth", to_json(c.synth)},
          {"roles",
           {{"source", c.roles.source.str()},
            {"pivot", c.roles.pivot.str()},
            {"target", c.roles.target.str()}}},
          {"systems", c.systems},
          {"bpe_merges", c.bpe_merges},
          {"model",
           {{"d_word", c.model.d_word},
            {"d_lang", c.model.d_lang},
            {"d_hidden", c.model.d_hidden},
            {"n_layers", c.model.n_layers},
            {"dropout", c.model.dropout},
            {"init_scale", c.model.init_scale}}},
          {"train",
           {{"epochs", c.train.epochs},
            {"batch_size", c.train.batch_size},
            {"lr", c.train.lr},
            {"clip_norm", c.train.clip_norm}}},
          {"decode",
           {{"beam", c.decode.beam},
            {"max_len", c.decode.max_len},
            {"length_norm", c.decode.length_norm}}},
          {"test_sentences", c.test_sentences},
          {"max_len", c.max_len},
          {"seed", c.seed}};
}

struct SystemResult {
  std::string name;
  std::string strategy;
  std::string scheme;
  bool filter = false;
  double bleu = 0.0;
  LangReport lang;
  std::size_t parameters = 0;
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t train_pairs = 0;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_seconds;  // kept out of the deterministic tables
  std::size_t flagged = 0;            // empty pivot outputs / empty back-translations
  std::vector<Tokens> outputs;
};

struct ExperimentResult {
  std::vector<SystemResult> systems;

  const SystemResult& at(const std::string& name) const {
    for (const auto& s : systems)
      if (s.name == name) return s;
    throw DataError("no result for system '" + name + "'");
  }
  bool has(const std::string& name) const {
    return std::any_of(systems.begin(), systems.end(),
                       [&](const SystemResult& s) { return s.name == name; });
  }
};

namespace detail {

struct TrainedSystem {
  System sys;
  std::vector<EpochLog> log;
  std::size_t pairs = 0;
};

inline TrainedSystem train_system(const ParallelCorpus& mixture, PreprocScheme scheme,
                                  const ExperimentConfig& c, const LanguageRegistry& langs,
                                  std::uint64_t seed, std::ostream* progress,
                                  const std::string& label) {
  TrainedSystem t;
  const ParallelCorpus data = length_filter(mixture, c.max_len);
  t.pairs = data.size();
  t.sys = build_system(data, scheme, langs, c.bpe_merges, c.model, seed);
  TrainConfig tc = c.train;
  tc.seed = mix_seed(seed, 17);
  const auto examples = make_examples(t.sys, data);
  t.log = train(t.sys.params, examples, tc, [&](const EpochLog& e) {
    if (progress) *progress << label << '\t' << format_epoch_log(e) << std::endl;
  });
  return t;
}

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ULL;
  return h;
}

inline std::string fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

}  // namespace detail

inline ExperimentResult run_experiment(const ExperimentConfig& c, std::ostream* progress = nullptr) {
  const auto& r = c.roles;
  LanguageRegistry langs;
  for (const auto& l : c.synth.languages) langs.add(l.code);
  for (const auto* code : {&r.source, &r.pivot, &r.target})
    if (!langs.contains(*code))
      throw ConfigError("role language '" + code->str() + "' is not a synthetic language");
  if (r.source == r.pivot || r.pivot == r.target || r.source == r.target)
    throw ConfigError("source, pivot and target roles must be distinct");

  const SyntheticLexicon lexicon(c.synth);
  const auto parts = synth_corpus(c.synth, c.synth.seed);
  const auto held_out = synth_corpus(c.synth, mix_seed(c.synth.seed, 99));
  const auto& test_all = held_out.at(direction_label(r.source, r.target));
  const std::size_t n_test = std::min(c.test_sentences, test_all.size());
  std::vector<Tokens> test_src, test_ref;
  for (std::size_t i = 0; i < n_test; ++i) {
    test_src.push_back(test_all.pairs[i].source);
    test_ref.push_back(test_all.pairs[i].target);
  }
  const LanguageOf lang_of = [&](const std::string& t) { return lexicon.language_of(t); };

  std::map<std::string, detail::TrainedSystem> cache;
  auto get = [&](const std::string& key, MixtureStrategy strategy, PreprocScheme scheme,
                 const std::map<std::string, ParallelCorpus>& from,
                 const MixtureRoles& roles) -> detail::TrainedSystem& {
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    const auto mixture = build_mixture(from, strategy, roles);
    const std::uint64_t seed = mix_seed(c.seed, detail::fnv1a(key));
    return cache.emplace(key, detail::train_system(mixture, scheme, c, langs, seed, progress, key))
        .first->second;
  };

  auto evaluate = [&](SystemResult& res, std::vector<Tokens> outputs) {
    res.bleu = bleu(outputs, test_ref).bleu;
    res.lang = wrong_language_rate(outputs, lang_of, r.target);
    res.outputs = std::move(outputs);
  };
  auto describe = [&](SystemResult& res, const detail::TrainedSystem& t) {
    res.scheme = to_string(t.sys.scheme);
    res.parameters += parameter_count(t.sys.params.config);
    res.src_vocab += t.sys.src_vocab.size();
    res.tgt_vocab += t.sys.tgt_vocab.size();
    res.train_pairs += t.pairs;
    for (const auto& e : t.log) {
      res.epoch_loss.push_back(e.mean_loss);
      res.epoch_seconds.push_back(e.seconds);
    }
  };
  auto decode_all = [&](const System& sys, bool filter) {
    DecodeConfig dc = c.decode;
    if (filter) dc.filter = r.target;
    std::vector<Tokens> out;
    for (const auto& s : test_src) out.push_back(translate(sys, s, r.source, r.target, dc).tokens);
    return out;
  };

  ExperimentResult result;
  BackTranslateStats bt_stats;
  for (const auto& name : c.systems) {
    SystemResult res;
    res.name = name;
    const bool filter = name.size() > 7 && name.substr(name.size() - 7) == "+filter";
    res.filter = filter;
    if (name == "direct") {
      res.strategy = "direct";
      auto& t = get("direct", MixtureStrategy::Direct, PreprocScheme::LangCodedForced, parts, r);
      describe(res, t);
      evaluate(res, decode_all(t.sys, false));
    } else if (name == "pivot") {
      res.strategy = "pivot";
      auto& a = get("pivot.sp", MixtureStrategy::Direct, PreprocScheme::LangCodedForced, parts,
                    {r.source, r.pivot, r.pivot});
      auto& b = get("pivot.pt", MixtureStrategy::Direct, PreprocScheme::LangCodedForced, parts,
                    {r.pivot, r.pivot, r.target});
      describe(res, a);
      describe(res, b);
      std::vector<Tokens> out;
      for (const auto& s : test_src) {
        const auto pr = pivot_translate(a.sys, b.sys, s, r.source, r.pivot, r.target, c.decode,
                                        c.decode);
        if (pr.empty_pivot) ++res.flagged;
        out.push_back(pr.tokens);
      }
      evaluate(res, std::move(out));
    } else if (name == "zero2l" || name == "zero4l") {
      res.strategy = name;
      auto& t = get(name, parse_strategy(name), PreprocScheme::LangCodedForced, parts, r);
      describe(res, t);
      evaluate(res, decode_all(t.sys, false));
    } else if (name == "zero6l" || name == "zero6l+filter") {
      res.strategy = "zero6l";
      auto& t = get("zero6l", MixtureStrategy::Zero6L, PreprocScheme::LangCodedForced, parts, r);
      describe(res, t);
      evaluate(res, decode_all(t.sys, filter));
    } else if (name == "zero6l+feature") {
      res.strategy = "zero6l";
      auto& t = get("zero6l+feature", MixtureStrategy::Zero6L, PreprocScheme::Factored, parts, r);
      describe(res, t);
      evaluate(res, decode_all(t.sys, false));
    } else if (name == "backtrans" || name == "backtrans+filter") {
      res.strategy = "backtrans";
      if (!cache.count("backtrans")) {
        auto& base = get("zero6l", MixtureStrategy::Zero6L, PreprocScheme::LangCodedForced, parts, r);
        const auto synth = back_translate(base.sys, parts.at(direction_label(r.pivot, r.target)),
                                          r.source, c.decode, &bt_stats);
        auto aug = parts;
        aug[direction_label(r.source, r.target)] = synth;
        aug[direction_label(r.target, r.source)] = mirror(synth);
        get("backtrans", MixtureStrategy::BackTransAugmented, PreprocScheme::LangCodedForced, aug,
            r);
      }
      res.flagged = bt_stats.empty_outputs;
      auto& t = cache.at("backtrans");
      describe(res, t);
      evaluate(res, decode_all(t.sys, filter));
    }
    result.systems.push_back(std::move(res));
  }
  return result;
}

// Aligned plain-text comparison table. Contains no timing information, so it
// is byte-identical across reruns with the same configuration.
inline std::string format_table(const ExperimentResult& res) {
  const std::vector<std::string> head{"system", "scheme",    "filter",     "BLEU",
                                      "wrong_tok", "wrong_sent", "maj_sent", "params",
                                      "src_vocab", "tgt_vocab",  "pairs",      "final_loss"};
  std::vector<std::vector<std::string>> rows{head};
  for (const auto& s : res.systems) {
    rows.push_back({s.name, s.scheme, s.filter ? "yes" : "no", detail::fixed(s.bleu, 2),
                    detail::fixed(s.lang.token_rate, 4), detail::fixed(s.lang.sentence_rate, 4),
                    detail::fixed(s.lang.majority_rate, 4), std::to_string(s.parameters),
                    std::to_string(s.src_vocab), std::to_string(s.tgt_vocab),
                    std::to_string(s.train_pairs),
                    s.epoch_loss.empty() ? "-" : detail::fixed(s.epoch_loss.back(), 4)});
  }
  std::vector<std::size_t> width(head.size(), 0);
  for (const auto& row : rows)
    for (std::size_t k = 0; k < row.size(); ++k) width[k] = std::max(width[k], row[k].size());
  std::ostringstream out;
  for (const auto& row : rows) {
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (k) out << "  ";
      if (k == 0) out << std::left;
      else out << std::right;
      out << std::setw(static_cast<int>(width[k])) << row[k];
    }
    out << '\n';
  }
  return out.str();
}

inline nlohmann::json results_json(const ExperimentResult& res) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : res.systems) {
    arr.push_back({{"system", s.name},
                   {"strategy", s.strategy},
                   {"scheme", s.scheme},
                   {"filter", s.filter},
                   {"bleu", s.bleu},
                   {"wrong_token_rate", s.lang.token_rate},
                   {"wrong_sentence_rate", s.lang.sentence_rate},
                   {"majority_wrong_sentence_rate", s.lang.majority_rate},
                   {"parameters", s.parameters},
                   {"src_vocab", s.src_vocab},
                   {"tgt_vocab", s.tgt_vocab},
                   {"train_pairs", s.train_pairs},
                   {"epoch_loss", s.epoch_loss},
                   {"flagged", s.flagged}});
  }
  return arr;
}

// Wall time per epoch, one line per system and epoch.
inline std::string format_timings(const ExperimentResult& res) {
  std::ostringstream out;
  out << "system\tepoch\tseconds\n";
  for (const auto& s : res.systems)
    for (std::size_t e = 0; e < s.epoch_seconds.size(); ++e)
      out << s.name << '\t' << e + 1 << '\t' << detail::fixed(s.epoch_seconds[e], 3) << '\n';
  return out.str();
}

// Writes results.txt, results.json, timings.tsv and one output file per system.
inline void write_experiment(const ExperimentResult& res, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream(fs::path(dir) / "results.txt", std::ios::binary) << format_table(res);
  std::ofstream(fs::path(dir) / "results.json", std::ios::binary)
      << results_json(res).dump(2) << '\n';
  std::ofstream(fs::path(dir) / "timings.tsv", std::ios::binary) << format_timings(res);
  for (const auto& s : res.systems) {
    std::vector<std::string> lines;
    for (const auto& o : s.outputs) lines.push_back(join_tokens(o));
    write_lines((fs::path(dir) / ("out." + s.name + ".txt")).string(), lines);
  }
}

}  // namespace desknmt
