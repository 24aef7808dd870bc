#pragma once

// A trained translation system: scheme, BPE, vocabularies and parameters,
// plus sentence-level translate / pivot / back-translation built on it.

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "desknmt/corpus.hpp"
#include "desknmt/decode.hpp"
#include "desknmt/error.hpp"
#include "desknmt/nnet.hpp"
#include "desknmt/preprocess.hpp"
#include "desknmt/subword.hpp"
#include "desknmt/train.hpp"
#include "desknmt/vocab.hpp"
#include "json.hpp"

namespace desknmt {

struct System {
  PreprocScheme scheme = PreprocScheme::LangCodedForced;
  LanguageRegistry langs;
  BpeModel bpe;
  std::size_t forcing_repeat = 2;
  Vocabulary src_vocab, tgt_vocab;
  OccurrenceMap tgt_occurrence;  // target-side surface -> languages seen with it
  ModelParams params;

  LanguagePartition partition() const {
    return language_partition(tgt_vocab, scheme, langs,
                              scheme == PreprocScheme::LangCodedForced ? nullptr
                                                                       : &tgt_occurrence);
  }
  Mask mask_for(const LanguageCode& tgt) const {
    return filter_mask(tgt_vocab, partition(), tgt);
  }
  // Language factor id: position in the registry.
  int factor_id(const LanguageCode& lang) const {
    return static_cast<int>(langs.index_of(lang));
  }
};

// Scheme-encoded source surfaces (after BPE).
inline Tokens encode_source_tokens(const System& sys, const Tokens& raw, const LanguageCode& src,
                                   const LanguageCode& tgt) {
  sys.langs.require(src);
  sys.langs.require(tgt);
  const Tokens units = bpe_apply(sys.bpe, raw);
  switch (sys.scheme) {
    case PreprocScheme::LangCodedForced:
      return apply_target_forcing(apply_language_coding(units, src, sys.langs), tgt,
                                  sys.forcing_repeat);
    case PreprocScheme::TargetTokenOnly:
      return apply_johnson(units, tgt);
    case PreprocScheme::Factored:
      return units;
  }
  return units;
}

// Scheme-encoded target surfaces, without the closing </s>.
inline Tokens encode_target_tokens(const System& sys, const Tokens& raw, const LanguageCode& tgt) {
  sys.langs.require(tgt);
  const Tokens units = bpe_apply(sys.bpe, raw);
  Tokens out;
  switch (sys.scheme) {
    case PreprocScheme::LangCodedForced: {
      out.push_back(make_target_start(tgt));
      const Tokens coded = apply_language_coding(units, tgt, sys.langs);
      out.insert(out.end(), coded.begin(), coded.end());
      break;
    }
    case PreprocScheme::TargetTokenOnly:
      out = units;
      break;
    case PreprocScheme::Factored:
      out.push_back(make_target_start(tgt));
      out.insert(out.end(), units.begin(), units.end());
      break;
  }
  return out;
}

// Model input for a raw source sentence. An empty sentence becomes the
// sentinel pair <s> </s>.
inline SourceInput source_input(const System& sys, const Tokens& raw, const LanguageCode& src,
                                const LanguageCode& tgt) {
  SourceInput in;
  if (raw.empty()) {
    in.words = {kBos, kEos};
  } else {
    in.words = sys.src_vocab.ids(encode_source_tokens(sys, raw, src, tgt));
  }
  if (sys.scheme == PreprocScheme::Factored) {
    in.word_langs.assign(in.words.size(), sys.factor_id(src));
    in.tgt_langs.assign(in.words.size(), sys.factor_id(tgt));
    in.target_factor = sys.factor_id(tgt);
  }
  return in;
}

inline Example make_example(const System& sys, const SentencePair& pair) {
  Example ex;
  ex.source = source_input(sys, pair.source, pair.src_lang, pair.tgt_lang);
  ex.target.words = sys.tgt_vocab.ids(encode_target_tokens(sys, pair.target, pair.tgt_lang));
  ex.target.words.push_back(kEos);
  if (sys.scheme == PreprocScheme::Factored)
    ex.target.langs.assign(ex.target.words.size(), sys.factor_id(pair.tgt_lang));
  return ex;
}

inline std::vector<Example> make_examples(const System& sys, const ParallelCorpus& corpus) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (const auto& p : corpus.pairs) out.push_back(make_example(sys, p));
  return out;
}

struct ModelShape {
  std::size_t d_word = 32;
  std::size_t d_lang = 4;
  std::size_t d_hidden = 32;
  std::size_t n_layers = 1;
  double dropout = 0.0;
  double init_scale = 0.08;
};

// Joint BPE on both sides of the mixture, then scheme encoding, vocabularies
// and freshly initialized parameters.
inline System build_system(const ParallelCorpus& mixture, PreprocScheme scheme,
                           const LanguageRegistry& langs, std::size_t bpe_merges,
                           const ModelShape& shape, std::uint64_t seed,
                           std::size_t forcing_repeat = 2) {
  if (mixture.empty()) throw DataError("cannot build a system from an empty mixture");
  System sys;
  sys.scheme = scheme;
  sys.langs = langs;
  sys.forcing_repeat = forcing_repeat;
  std::vector<Tokens> raw;
  for (const auto& p : mixture.pairs) {
    raw.push_back(p.source);
    raw.push_back(p.target);
  }
  sys.bpe = bpe_train(raw, bpe_merges);
  std::vector<Tokens> src_stream, tgt_stream;
  for (const auto& p : mixture.pairs) {
    src_stream.push_back(encode_source_tokens(sys, p.source, p.src_lang, p.tgt_lang));
    Tokens t = encode_target_tokens(sys, p.target, p.tgt_lang);
    record_occurrences(sys.tgt_occurrence, t, p.tgt_lang);
    tgt_stream.push_back(std::move(t));
  }
  sys.src_vocab = build_vocab(src_stream);
  sys.tgt_vocab = build_vocab(tgt_stream);
  ModelConfig c;
  c.src_vocab = sys.src_vocab.size();
  c.tgt_vocab = sys.tgt_vocab.size();
  c.d_word = shape.d_word;
  c.d_hidden = shape.d_hidden;
  c.n_layers = shape.n_layers;
  c.dropout = shape.dropout;
  c.factored = scheme == PreprocScheme::Factored;
  if (c.factored) {
    c.d_lang = shape.d_lang;
    c.factor_vocab = langs.size();
  }
  sys.params = init_params(c, seed, shape.init_scale);
  return sys;
}

struct Translation {
  Tokens tokens;  // postprocessed
  Hypothesis hyp;
  std::vector<std::string> features;  // factored models only
  PostprocessStats stats;
};

inline Translation translate(const System& sys, const Tokens& raw, const LanguageCode& src,
                             const LanguageCode& tgt, const DecodeConfig& config) {
  const SourceInput in = source_input(sys, raw, src, tgt);
  std::optional<Mask> mask;
  if (config.filter) mask = sys.mask_for(*config.filter);
  Translation t;
  t.hyp = beam_search(sys.params, in, config, mask ? &*mask : nullptr);
  std::vector<int> ids = t.hyp.tokens;
  if (!ids.empty() && ids.back() == kEos) ids.pop_back();
  Tokens surf;
  for (int id : ids)
    if (!is_special(id)) surf.push_back(sys.tgt_vocab.token(id));
  t.tokens = postprocess(surf, sys.scheme, sys.langs, sys.bpe.marker, &t.stats);
  if (sys.params.config.factored && config.record_features)
    t.features = readout_features(t.hyp, sys.langs);
  return t;
}

struct PivotResult {
  Tokens tokens;
  Tokens pivot;
  bool empty_pivot = false;
};

inline PivotResult pivot_translate(const System& src_pivot, const System& pivot_tgt,
                                   const Tokens& raw, const LanguageCode& src,
                                   const LanguageCode& pivot, const LanguageCode& tgt,
                                   const DecodeConfig& first, const DecodeConfig& second) {
  PivotResult r;
  r.pivot = translate(src_pivot, raw, src, pivot, first).tokens;
  r.empty_pivot = r.pivot.empty();
  r.tokens = translate(pivot_tgt, r.pivot, pivot, tgt, second).tokens;
  return r;
}

struct BackTranslateStats {
  std::size_t empty_outputs = 0;     // replaced by "<unk>"
  std::size_t dangling_markers = 0;  // stripped from the synthetic side
};

// Translates the source side of every pair into `out_lang` and pairs it with
// the original target side. Dangling BPE markers are stripped so the
// synthetic text can be fed to BPE training again.
inline ParallelCorpus back_translate(const System& model, const ParallelCorpus& corpus,
                                     const LanguageCode& out_lang, const DecodeConfig& config,
                                     BackTranslateStats* stats = nullptr) {
  ParallelCorpus out;
  out.provenance = "back-translated " + corpus.provenance;
  for (const auto& p : corpus.pairs) {
    Tokens synth;
    for (auto& t : translate(model, p.source, p.src_lang, out_lang, config).tokens) {
      const auto& m = model.bpe.marker;
      if (t.size() >= m.size() && t.compare(t.size() - m.size(), m.size(), m) == 0) {
        t.resize(t.size() - m.size());
        if (stats) ++stats->dangling_markers;
      }
      if (!t.empty()) synth.push_back(std::move(t));
    }
    if (synth.empty()) {
      synth = {"<unk>"};
      if (stats) ++stats->empty_outputs;
    }
    out.pairs.push_back({std::move(synth), p.target, out_lang, p.tgt_lang});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Persistence: a directory with system.json, bpe.txt, *.vocab and model.json

inline void save_system(const System& sys, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "desk-nmt-system v1";
  meta["scheme"] = to_string(sys.scheme);
  std::vector<std::string> codes;
  for (const auto& c : sys.langs.codes()) codes.push_back(c.str());
  meta["languages"] = codes;
  meta["forcing_repeat"] = sys.forcing_repeat;
  nlohmann::json occ = nlohmann::json::object();
  for (const auto& [tok, ls] : sys.tgt_occurrence) {
    std::vector<std::string> v;
    for (const auto& l : ls) v.push_back(l.str());
    occ[tok] = v;
  }
  meta["target_occurrence"] = occ;
  std::ofstream(fs::path(dir) / "system.json") << meta.dump(1) << '\n';
  save_bpe(sys.bpe, (fs::path(dir) / "bpe.txt").string());
  save_vocab(sys.src_vocab, (fs::path(dir) / "src.vocab").string());
  save_vocab(sys.tgt_vocab, (fs::path(dir) / "tgt.vocab").string());
  save_checkpoint(sys.params, (fs::path(dir) / "model.json").string());
}

inline System load_system(const std::string& dir) {
  namespace fs = std::filesystem;
  const auto meta_path = fs::path(dir) / "system.json";
  std::ifstream in(meta_path);
  if (!in) throw DataError("no system.json in '" + dir + "'");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("'" + meta_path.string() + "' is not valid JSON: " + e.what());
  }
  if (meta.value("format", std::string()) != "desk-nmt-system v1")
    throw DataError("'" + meta_path.string() + "' is not a desk-nmt-system v1 file");
  System sys;
  sys.scheme = parse_scheme(meta.at("scheme").get<std::string>());
  for (const auto& c : meta.at("languages")) sys.langs.add(LanguageCode(c.get<std::string>()));
  sys.forcing_repeat = meta.value("forcing_repeat", std::size_t{2});
  for (auto it = meta.at("target_occurrence").begin(); it != meta.at("target_occurrence").end();
       ++it)
    for (const auto& l : it.value()) sys.tgt_occurrence[it.key()].insert(LanguageCode(l.get<std::string>()));
  sys.bpe = load_bpe((fs::path(dir) / "bpe.txt").string());
  sys.src_vocab = load_vocab((fs::path(dir) / "src.vocab").string());
  sys.tgt_vocab = load_vocab((fs::path(dir) / "tgt.vocab").string());
  sys.params = load_checkpoint((fs::path(dir) / "model.json").string());
  const auto& c = sys.params.config;
  if (c.src_vocab != sys.src_vocab.size() || c.tgt_vocab != sys.tgt_vocab.size() ||
      c.factored != (sys.scheme == PreprocScheme::Factored) ||
      (c.factored && c.factor_vocab != sys.langs.size()))
    throw ShapeError("model in '" + dir + "' does not match its vocabularies or scheme");
  return sys;
}

}  // namespace desknmt
