// desknmt command-line entry point.

#include <fcntl.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "desknmt/desknmt.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace desknmt;
using nlohmann::json;

namespace {

struct LockError : Error {
  explicit LockError(const std::string& what) : Error("lock", what) {}
};

// One run per output directory: <dir>/.desknmt.lock, created exclusively and
// removed when the run ends.
class DirLock {
 public:
  explicit DirLock(const fs::path& dir) : path_(dir / ".desknmt.lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0)
      throw LockError("output directory '" + dir.string() + "' is locked by another run (" +
                      path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    if (::write(fd, pid.data(), pid.size()) < 0) {
      ::close(fd);
      throw LockError("cannot write lock file '" + path_.string() + "'");
    }
    ::close(fd);
  }
  ~DirLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  fs::path path_;
};

fs::path dir_of(const std::string& file) {
  const fs::path p = fs::path(file).parent_path();
  return p.empty() ? fs::path(".") : p;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

// Flat config files: keys are long flag names ("beam", "filter-target-dict";
// underscores are accepted for dashes). Flags given on the command line win.
void apply_flat_config(CLI::App* sub, const std::string& path) {
  const json j = read_json_file(path);
  if (!j.is_object()) throw ConfigError("config '" + path + "' must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    std::string key = it.key();
    std::replace(key.begin(), key.end(), '_', '-');
    CLI::Option* opt = key == "config" || key == "help" ? nullptr
                                                        : sub->get_option_no_throw("--" + key);
    if (!opt) throw ConfigError("unknown key '" + it.key() + "' in '" + path + "'");
    if (opt->count() > 0) continue;
    auto as_text = [](const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); };
    if (it->is_array())
      for (const auto& v : *it) opt->add_result(as_text(v));
    else
      opt->add_result(as_text(*it));
    opt->run_callback();
  }
}

// Final option values of a subcommand, used to record the resolved config.
json resolved_options(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* o : sub->get_options()) {
    const std::string name = o->get_single_name();
    if (name == "help" || name == "config" || name.empty()) continue;
    std::vector<std::string> vals = o->count() > 0 ? o->results() : std::vector<std::string>{};
    if (vals.empty()) {
      const std::string d = o->get_default_str();
      if (!d.empty()) vals.push_back(d);
    }
    if (o->get_expected_max() > 1)
      j[name] = vals;
    else
      j[name] = vals.empty() ? json(nullptr) : json(vals.back());
  }
  return j;
}

void record_config(const CLI::App* sub, const fs::path& where) {
  json j = resolved_options(sub);
  j["subcommand"] = sub->get_name();
  write_text(where, j.dump(2) + "\n");
}

std::vector<Tokens> read_token_lines(const std::string& path) {
  std::vector<Tokens> out;
  for (const auto& line : read_lines(path)) {
    if (!valid_utf8(line)) throw DataError("invalid UTF-8 in '" + path + "'");
    out.push_back(split_tokens(line));
  }
  return out;
}

void write_token_lines(const std::string& path, const std::vector<Tokens>& lines) {
  std::vector<std::string> text;
  for (const auto& t : lines) text.push_back(join_tokens(t));
  write_lines(path, text);
}

LanguageRegistry registry_from(const std::vector<std::string>& codes) {
  LanguageRegistry r;
  for (const auto& c : codes) r.add(LanguageCode(c));
  return r;
}

// Pairs a-b found as <dir>/<a>-<b>.src / .tgt (the synth-gen layout).
std::map<std::string, ParallelCorpus> load_direction_dir(const std::string& dir) {
  std::map<std::string, ParallelCorpus> parts;
  if (!fs::is_directory(dir)) throw DataError("'" + dir + "' is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".src") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string label = f.stem().string();
    const auto dash = label.find('-');
    if (dash == std::string::npos) continue;
    fs::path tgt = f;
    tgt.replace_extension(".tgt");
    auto loaded = load_parallel(f.string(), tgt.string(), LanguageCode(label.substr(0, dash)),
                                LanguageCode(label.substr(dash + 1)));
    parts[label] = std::move(loaded.corpus);
  }
  if (parts.empty()) throw DataError("no <a>-<b>.src/.tgt pairs in '" + dir + "'");
  return parts;
}

// ---------------------------------------------------------------------------
// Subcommands. Each registers its options and returns the action to run.

using Action = std::function<void()>;

struct Registered {
  CLI::App* app;
  Action run;
  std::string* config;  // flat config path, if the subcommand takes one
};

Registered add_synth_gen(CLI::App& root) {
  auto* s = root.add_subcommand("synth-gen", "Generate a synthetic multilingual corpus");
  struct O {
    std::string spec, out = "synth";
    std::uint64_t seed = 1;
  };
  auto o = std::make_shared<O>();
  s->add_option("--spec", o->spec, "Synthetic language spec (JSON)")->required();
  s->add_option("--out", o->out, "Output directory")->capture_default_str();
  auto* seed = s->add_option("--seed", o->seed, "Overrides the spec's seed")->capture_default_str();
  return {s,
          [o, s, seed] {
            SynthSpec spec = parse_synth_spec(read_json_file(o->spec));
            if (seed->count() > 0) spec.seed = o->seed;
            DirLock lock(o->out);
            for (const auto& [label, corpus] : synth_corpus(spec, spec.seed))
              write_parallel(corpus, (fs::path(o->out) / (label + ".src")).string(),
                             (fs::path(o->out) / (label + ".tgt")).string());
            write_text(fs::path(o->out) / "spec.json", to_json(spec).dump(2) + "\n");
            record_config(s, fs::path(o->out) / "resolved_config.json");
          },
          nullptr};
}

Registered add_bpe_train(CLI::App& root) {
  auto* s = root.add_subcommand("bpe-train", "Learn BPE merges from tokenized text");
  struct O {
    std::vector<std::string> input;
    std::string out, config;
    std::size_t merges = 40;
  };
  auto o = std::make_shared<O>();
  s->add_option("--input", o->input, "Training text files")->required();
  s->add_option("--merges", o->merges, "Number of merges")->capture_default_str();
  s->add_option("--out", o->out, "Merges file")->required();
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(dir_of(o->out));
            std::vector<Tokens> text;
            for (const auto& f : o->input) {
              auto lines = read_token_lines(f);
              text.insert(text.end(), lines.begin(), lines.end());
            }
            save_bpe(bpe_train(text, o->merges), o->out);
            record_config(s, o->out + ".config.json");
          },
          &o->config};
}

Registered add_bpe_apply(CLI::App& root) {
  auto* s = root.add_subcommand("bpe-apply", "Segment text with learned merges (or undo it)");
  struct O {
    std::string bpe, input, output, config;
    bool undo = false;
  };
  auto o = std::make_shared<O>();
  s->add_option("--bpe", o->bpe, "Merges file (not needed with --undo)");
  s->add_option("--input", o->input, "Input text")->required();
  s->add_option("--output", o->output, "Output text")->required();
  s->add_flag("--undo", o->undo, "Join subword units instead (default: off)");
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(dir_of(o->output));
            const auto lines = read_token_lines(o->input);
            std::vector<Tokens> out;
            if (o->undo) {
              const std::string marker = o->bpe.empty() ? "@@" : load_bpe(o->bpe).marker;
              for (const auto& l : lines) out.push_back(bpe_undo(l, marker));
            } else {
              if (o->bpe.empty()) throw ConfigError("--bpe is required unless --undo is given");
              const BpeModel m = load_bpe(o->bpe);
              for (const auto& l : lines) out.push_back(bpe_apply(m, l));
            }
            write_token_lines(o->output, out);
            record_config(s, o->output + ".config.json");
          },
          &o->config};
}

Registered add_preprocess(CLI::App& root) {
  auto* s = root.add_subcommand("preprocess", "Apply a multilingual scheme to one side of a corpus");
  struct O {
    std::string input, output, scheme = "langcoded", side = "source", src_lang, tgt_lang, config;
    std::vector<std::string> langs;
    std::size_t repeat = 2;
    bool undo = false;
  };
  auto o = std::make_shared<O>();
  s->add_option("--input", o->input, "Input text (already BPE-segmented)")->required();
  s->add_option("--output", o->output, "Output text")->required();
  s->add_option("--scheme", o->scheme, "langcoded | johnson | factored")
      ->check(CLI::IsMember({"langcoded", "johnson", "factored"}))
      ->capture_default_str();
  s->add_option("--side", o->side, "source | target")
      ->check(CLI::IsMember({"source", "target"}))
      ->capture_default_str();
  s->add_option("--langs", o->langs, "Registered language codes")->required();
  s->add_option("--src-lang", o->src_lang, "Language of the input text")->required();
  s->add_option("--tgt-lang", o->tgt_lang, "Translation target language")->required();
  s->add_option("--repeat", o->repeat, "Forcing-token repeat count")->capture_default_str();
  s->add_flag("--undo", o->undo, "Postprocess decoder output instead (default: off)");
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(dir_of(o->output));
            const auto langs = registry_from(o->langs);
            const auto scheme = parse_scheme(o->scheme);
            const LanguageCode src(o->src_lang), tgt(o->tgt_lang);
            langs.require(src);
            langs.require(tgt);
            std::vector<std::string> out;
            for (const auto& line : read_lines(o->input)) {
              const Tokens t = split_tokens(line);
              if (o->undo) {
                out.push_back(join_tokens(postprocess(t, scheme, langs)));
                continue;
              }
              const bool source = o->side == "source";
              switch (scheme) {
                case PreprocScheme::LangCodedForced:
                  if (source)
                    out.push_back(join_tokens(apply_target_forcing(
                        apply_language_coding(t, src, langs), tgt, o->repeat)));
                  else {
                    Tokens c{make_target_start(tgt)};
                    const Tokens coded = apply_language_coding(t, src, langs);
                    c.insert(c.end(), coded.begin(), coded.end());
                    out.push_back(join_tokens(c));
                  }
                  break;
                case PreprocScheme::TargetTokenOnly:
                  out.push_back(join_tokens(source ? apply_johnson(t, tgt) : t));
                  break;
                case PreprocScheme::Factored:
                  out.push_back(format_factored(annotate_factors(t, src, tgt, langs)));
                  break;
              }
            }
            write_lines(o->output, out);
            record_config(s, o->output + ".config.json");
          },
          &o->config};
}

Registered add_build_mixture(CLI::App& root) {
  auto* s = root.add_subcommand("build-mixture", "Concatenate direction corpora for a strategy");
  struct O {
    std::string data, out, strategy = "zero6l", source, pivot, target, synthetic, config;
    std::size_t max_len = 50;
  };
  auto o = std::make_shared<O>();
  s->add_option("--data", o->data, "Directory with <a>-<b>.src/.tgt files")->required();
  s->add_option("--strategy", o->strategy, "direct | zero2l | zero4l | zero6l | backtrans")
      ->check(CLI::IsMember({"direct", "zero2l", "zero4l", "zero6l", "backtrans"}))
      ->capture_default_str();
  s->add_option("--source", o->source, "Source language")->required();
  s->add_option("--pivot", o->pivot, "Pivot language")->required();
  s->add_option("--target", o->target, "Target language")->required();
  s->add_option("--synthetic", o->synthetic,
                "backtrans only: prefix of a synthetic source-target corpus (.src/.tgt)");
  s->add_option("--max-len", o->max_len, "Drop pairs longer than this")->capture_default_str();
  s->add_option("--out", o->out, "Output prefix (.src/.tgt/.langs)")->required();
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(dir_of(o->out));
            auto parts = load_direction_dir(o->data);
            const MixtureRoles roles{LanguageCode(o->source), LanguageCode(o->pivot),
                                     LanguageCode(o->target)};
            const auto strategy = parse_strategy(o->strategy);
            if (strategy == MixtureStrategy::BackTransAugmented) {
              if (o->synthetic.empty()) throw ConfigError("backtrans needs --synthetic");
              auto syn = load_parallel(o->synthetic + ".src", o->synthetic + ".tgt", roles.source,
                                       roles.target)
                             .corpus;
              parts[direction_label(roles.target, roles.source)] = mirror(syn);
              parts[direction_label(roles.source, roles.target)] = std::move(syn);
            }
            write_mixture(length_filter(build_mixture(parts, strategy, roles), o->max_len),
                          o->out);
            record_config(s, o->out + ".config.json");
          },
          &o->config};
}

Registered add_build_vocab(CLI::App& root) {
  auto* s = root.add_subcommand("build-vocab", "Frequency-ordered vocabulary with specials");
  struct O {
    std::vector<std::string> input;
    std::string out, config;
    std::size_t min_count = 1;
  };
  auto o = std::make_shared<O>();
  s->add_option("--input", o->input, "Text files")->required();
  s->add_option("--min-count", o->min_count, "Minimum frequency")->capture_default_str();
  s->add_option("--out", o->out, "Vocabulary file")->required();
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(dir_of(o->out));
            std::vector<Tokens> text;
            for (const auto& f : o->input) {
              auto lines = read_token_lines(f);
              text.insert(text.end(), lines.begin(), lines.end());
            }
            save_vocab(build_vocab(text, o->min_count), o->out);
            record_config(s, o->out + ".config.json");
          },
          &o->config};
}

Registered add_train(CLI::App& root) {
  auto* s = root.add_subcommand("train", "Train a system on a mixture");
  struct O {
    std::string mixture, out, scheme = "langcoded", config;
    std::vector<std::string> langs;
    std::size_t merges = 40, max_len = 50, repeat = 2;
    ModelShape shape;
    TrainConfig train;
    std::uint64_t seed = 1;
    bool verbose = false;
  };
  auto o = std::make_shared<O>();
  s->add_option("--mixture", o->mixture, "Mixture prefix (.src/.tgt/.langs)")->required();
  s->add_option("--out", o->out, "System directory")->required();
  s->add_option("--scheme", o->scheme, "langcoded | johnson | factored")
      ->check(CLI::IsMember({"langcoded", "johnson", "factored"}))
      ->capture_default_str();
  s->add_option("--langs", o->langs, "Language registry order (default: sorted codes seen)");
  s->add_option("--merges", o->merges, "BPE merges")->capture_default_str();
  s->add_option("--max-len", o->max_len, "Drop pairs longer than this")->capture_default_str();
  s->add_option("--repeat", o->repeat, "Forcing-token repeat count")->capture_default_str();
  s->add_option("--d-word", o->shape.d_word, "Word embedding size")->capture_default_str();
  s->add_option("--d-lang", o->shape.d_lang, "Language factor embedding size")
      ->capture_default_str();
  s->add_option("--d-hidden", o->shape.d_hidden, "LSTM hidden size")->capture_default_str();
  s->add_option("--layers", o->shape.n_layers, "LSTM layers")->capture_default_str();
  s->add_option("--dropout", o->shape.dropout, "Dropout probability")->capture_default_str();
  s->add_option("--init-scale", o->shape.init_scale, "Uniform init half-width")
      ->capture_default_str();
  s->add_option("--epochs", o->train.epochs, "Training epochs")->capture_default_str();
  s->add_option("--batch", o->train.batch_size, "Batch size")->capture_default_str();
  s->add_option("--lr", o->train.lr, "Adam learning rate")->capture_default_str();
  s->add_option("--clip", o->train.clip_norm, "Global-norm clip (0 = off)")->capture_default_str();
  s->add_option("--seed", o->seed, "Random seed")->capture_default_str();
  s->add_flag("--verbose", o->verbose, "Echo the training log to stderr (default: off)");
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(o->out);
            const ParallelCorpus mixture = length_filter(read_mixture(o->mixture), o->max_len);
            std::vector<std::string> codes = o->langs;
            if (codes.empty()) {
              std::set<std::string> seen;
              for (const auto& p : mixture.pairs) {
                seen.insert(p.src_lang.str());
                seen.insert(p.tgt_lang.str());
              }
              codes.assign(seen.begin(), seen.end());
            }
            System sys = build_system(mixture, parse_scheme(o->scheme), registry_from(codes),
                                      o->merges, o->shape, mix_seed(o->seed, 1), o->repeat);
            TrainConfig tc = o->train;
            tc.seed = mix_seed(o->seed, 2);
            tc.checkpoint = (fs::path(o->out) / "checkpoint.json").string();
            std::ofstream log(fs::path(o->out) / "train.log", std::ios::binary);
            train(sys.params, make_examples(sys, mixture), tc, [&](const EpochLog& e) {
              log << format_epoch_log(e) << '\n' << std::flush;
              if (o->verbose) std::cerr << format_epoch_log(e) << '\n';
            });
            save_system(sys, o->out);
            record_config(s, fs::path(o->out) / "resolved_config.json");
          },
          &o->config};
}

void add_decode_options(CLI::App* s, DecodeConfig& d, std::string& filter) {
  s->add_option("--beam", d.beam, "Beam size")->capture_default_str();
  s->add_option("--max-len", d.max_len, "Maximum output length")->capture_default_str();
  s->add_flag("--length-norm", d.length_norm, "Length-normalize final scores (default: off)");
  s->add_option("--filter-target-dict", filter,
                "Restrict output to this language's vocabulary (default: off)");
}

Registered add_translate(CLI::App& root) {
  auto* s = root.add_subcommand("translate", "Beam-search translation");
  struct O {
    std::string model, input, output, src_lang, tgt_lang, filter, features, config;
    DecodeConfig decode;
  };
  auto o = std::make_shared<O>();
  s->add_option("--model", o->model, "System directory")->required();
  s->add_option("--input", o->input, "Raw source text")->required();
  s->add_option("--output", o->output, "Translations")->required();
  s->add_option("--src-lang", o->src_lang, "Source language")->required();
  s->add_option("--tgt-lang", o->tgt_lang, "Target language")->required();
  add_decode_options(s, o->decode, o->filter);
  s->add_option("--features", o->features, "Factored models: write the language readout here");
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(dir_of(o->output));
            const System sys = load_system(o->model);
            DecodeConfig dc = o->decode;
            if (!o->filter.empty()) dc.filter = LanguageCode(o->filter);
            dc.record_features = !o->features.empty();
            std::vector<std::string> out, feats;
            for (const auto& raw : read_token_lines(o->input)) {
              const auto t = translate(sys, raw, LanguageCode(o->src_lang),
                                       LanguageCode(o->tgt_lang), dc);
              out.push_back(join_tokens(t.tokens));
              feats.push_back(join_tokens(t.features));
            }
            write_lines(o->output, out);
            if (!o->features.empty()) write_lines(o->features, feats);
            record_config(s, o->output + ".config.json");
          },
          &o->config};
}

Registered add_pivot_translate(CLI::App& root) {
  auto* s = root.add_subcommand("pivot-translate", "Two-stage translation through a pivot");
  struct O {
    std::string model1, model2, input, output, pivot_output, src_lang, pivot_lang, tgt_lang,
        filter, config;
    DecodeConfig decode;
  };
  auto o = std::make_shared<O>();
  s->add_option("--model1", o->model1, "Source-to-pivot system")->required();
  s->add_option("--model2", o->model2, "Pivot-to-target system")->required();
  s->add_option("--input", o->input, "Raw source text")->required();
  s->add_option("--output", o->output, "Translations")->required();
  s->add_option("--pivot-output", o->pivot_output, "Also write the pivot sentences here");
  s->add_option("--src-lang", o->src_lang, "Source language")->required();
  s->add_option("--pivot-lang", o->pivot_lang, "Pivot language")->required();
  s->add_option("--tgt-lang", o->tgt_lang, "Target language")->required();
  add_decode_options(s, o->decode, o->filter);
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(dir_of(o->output));
            const System a = load_system(o->model1), b = load_system(o->model2);
            DecodeConfig first = o->decode, second = o->decode;
            first.record_features = second.record_features = false;
            if (!o->filter.empty()) second.filter = LanguageCode(o->filter);
            std::vector<std::string> out, piv;
            std::size_t empty = 0;
            for (const auto& raw : read_token_lines(o->input)) {
              const auto r = pivot_translate(a, b, raw, LanguageCode(o->src_lang),
                                             LanguageCode(o->pivot_lang), LanguageCode(o->tgt_lang),
                                             first, second);
              empty += r.empty_pivot;
              out.push_back(join_tokens(r.tokens));
              piv.push_back(join_tokens(r.pivot));
            }
            write_lines(o->output, out);
            if (!o->pivot_output.empty()) write_lines(o->pivot_output, piv);
            if (empty) std::cerr << "desknmt: warning: " << empty << " empty pivot sentence(s)\n";
            record_config(s, o->output + ".config.json");
          },
          &o->config};
}

Registered add_back_translate(CLI::App& root) {
  auto* s = root.add_subcommand("back-translate", "Build a synthetic parallel corpus");
  struct O {
    std::string model, src, tgt, src_lang, tgt_lang, out_lang, out, config;
    DecodeConfig decode;
  };
  auto o = std::make_shared<O>();
  s->add_option("--model", o->model, "System that translates src-lang into out-lang")->required();
  s->add_option("--src", o->src, "Source side of the real corpus")->required();
  s->add_option("--tgt", o->tgt, "Target side of the real corpus")->required();
  s->add_option("--src-lang", o->src_lang, "Language of --src")->required();
  s->add_option("--tgt-lang", o->tgt_lang, "Language of --tgt")->required();
  s->add_option("--out-lang", o->out_lang, "Language of the synthetic side")->required();
  s->add_option("--out", o->out, "Output prefix (.src synthetic, .tgt copied)")->required();
  s->add_option("--beam", o->decode.beam, "Beam size")->capture_default_str();
  s->add_option("--max-len", o->decode.max_len, "Maximum output length")->capture_default_str();
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            DirLock lock(dir_of(o->out));
            const System sys = load_system(o->model);
            const auto corpus = load_parallel(o->src, o->tgt, LanguageCode(o->src_lang),
                                              LanguageCode(o->tgt_lang))
                                    .corpus;
            DecodeConfig dc = o->decode;
            dc.record_features = false;
            BackTranslateStats st;
            const auto synth = back_translate(sys, corpus, LanguageCode(o->out_lang), dc, &st);
            write_parallel(synth, o->out + ".src", o->out + ".tgt");
            if (st.empty_outputs || st.dangling_markers)
              std::cerr << "desknmt: warning: " << st.empty_outputs << " empty output(s), "
                        << st.dangling_markers << " dangling marker(s) stripped\n";
            record_config(s, o->out + ".config.json");
          },
          &o->config};
}

Registered add_evaluate(CLI::App& root) {
  auto* s = root.add_subcommand("evaluate", "Corpus BLEU and wrong-language rates");
  struct O {
    std::string hyp, ref, tgt_lang, spec, out, config;
  };
  auto o = std::make_shared<O>();
  s->add_option("--hyp", o->hyp, "Hypotheses")->required();
  s->add_option("--ref", o->ref, "References")->required();
  s->add_option("--tgt-lang", o->tgt_lang, "Expected output language (needs --spec)");
  s->add_option("--spec", o->spec, "Synthetic spec used to identify word languages");
  s->add_option("--out", o->out, "Write the JSON report here (default: stdout)");
  s->add_option("--config", o->config, "JSON config; flags override its keys");
  return {s,
          [o, s] {
            std::optional<DirLock> lock;
            if (!o->out.empty()) lock.emplace(dir_of(o->out));
            const auto b = bleu(read_token_lines(o->hyp), read_token_lines(o->ref));
            json j{{"bleu", b.bleu},
                   {"precisions", b.precisions},
                   {"brevity_penalty", b.brevity_penalty},
                   {"hyp_length", b.hyp_length},
                   {"ref_length", b.ref_length}};
            if (!o->spec.empty() && !o->tgt_lang.empty()) {
              const SyntheticLexicon lex(parse_synth_spec(read_json_file(o->spec)));
              const auto r = wrong_language_rate(
                  read_token_lines(o->hyp), [&](const std::string& t) { return lex.language_of(t); },
                  LanguageCode(o->tgt_lang));
              j["wrong_token_rate"] = r.token_rate;
              j["wrong_sentence_rate"] = r.sentence_rate;
              j["majority_wrong_sentence_rate"] = r.majority_rate;
            }
            if (o->out.empty()) {
              std::cout << j.dump(2) << '\n';
            } else {
              write_text(o->out, j.dump(2) + "\n");
              record_config(s, o->out + ".config.json");
            }
          },
          &o->config};
}

Registered add_grad_check(CLI::App& root) {
  auto* s = root.add_subcommand(
      "grad-check", "Finite-difference gradient check; exit 0 iff max relative error < 1e-4");
  struct O {
    std::uint64_t seed = 1;
    std::size_t layers = 1;
    double eps = 3e-3, tol = 1e-4;
  };
  auto o = std::make_shared<O>();
  s->add_option("--seed", o->seed, "Seed of the tiny model and batch")->capture_default_str();
  s->add_option("--layers", o->layers, "LSTM layers")->capture_default_str();
  s->add_option("--eps", o->eps, "Finite-difference step (five-point stencil)")->capture_default_str();
  s->add_option("--tol", o->tol, "Pass threshold")->capture_default_str();
  return {s,
          [o] {
            double worst = 0.0;
            for (bool factored : {false, true}) {
              const auto p = random_tiny_problem(o->seed, factored, o->layers);
              const auto r = grad_check(p.params, p.batch, o->eps);
              std::cout << (factored ? "factored" : "plain") << "\tmax_rel_error=" << r.max_rel_error
                        << "\tworst_tensor=" << r.worst_tensor << "\tchecked=" << r.checked
                        << '\n';
              worst = std::max(worst, r.max_rel_error);
            }
            const bool ok = worst < o->tol;
            std::cout << (ok ? "PASS" : "FAIL") << " max_rel_error=" << worst << '\n';
            if (!ok) throw NumericError("gradient check failed: " + std::to_string(worst));
          },
          nullptr};
}

Registered add_experiment(CLI::App& root) {
  auto* s = root.add_subcommand("experiment", "Train and compare all systems on synthetic data");
  struct O {
    std::string config, out = "results";
    std::vector<std::string> systems;
    std::uint64_t seed = 1;
    std::size_t epochs = 8, batch = 16, beam = 15, max_len = 50, merges = 40;
    bool verbose = false;
  };
  auto o = std::make_shared<O>();
  s->add_option("--config", o->config, "Experiment config (JSON)")->required();
  s->add_option("--out", o->out, "Output directory")->capture_default_str();
  std::map<std::string, CLI::Option*> f;
  f["seed"] = s->add_option("--seed", o->seed, "Overrides config seed")->capture_default_str();
  f["epochs"] = s->add_option("--epochs", o->epochs, "Overrides train.epochs")->capture_default_str();
  f["batch"] = s->add_option("--batch", o->batch, "Overrides train.batch_size")->capture_default_str();
  f["beam"] = s->add_option("--beam", o->beam, "Overrides decode.beam")->capture_default_str();
  f["max-len"] = s->add_option("--max-len", o->max_len, "Overrides max_len (training filter)")
                     ->capture_default_str();
  f["merges"] = s->add_option("--merges", o->merges, "Overrides bpe_merges")->capture_default_str();
  f["systems"] = s->add_option("--systems", o->systems, "Overrides the system list");
  s->add_flag("--verbose", o->verbose, "Print per-epoch progress to stderr (default: off)");
  return {s,
          [o, f] {
            ExperimentConfig c = parse_experiment_config(read_json_file(o->config));
            if (f.at("seed")->count()) c.seed = o->seed;
            if (f.at("epochs")->count()) c.train.epochs = o->epochs;
            if (f.at("batch")->count()) c.train.batch_size = o->batch;
            if (f.at("beam")->count()) c.decode.beam = o->beam;
            if (f.at("max-len")->count()) c.max_len = o->max_len;
            if (f.at("merges")->count()) c.bpe_merges = o->merges;
            if (f.at("systems")->count()) c = parse_experiment_config([&] {
              json j = to_json(c);
              j["systems"] = o->systems;
              return j;
            }());
            DirLock lock(o->out);
            write_text(fs::path(o->out) / "resolved_config.json", to_json(c).dump(2) + "\n");
            const auto res = run_experiment(c, o->verbose ? &std::cerr : nullptr);
            write_experiment(res, o->out);
            std::cout << format_table(res);
          },
          nullptr};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("desknmt: multilingual zero-shot NMT toolkit", "desknmt");
  app.require_subcommand(1);
  std::vector<Registered> subs{add_synth_gen(app),    add_bpe_train(app),       add_bpe_apply(app),
                               add_preprocess(app),   add_build_mixture(app),   add_build_vocab(app),
                               add_train(app),        add_translate(app),       add_pivot_translate(app),
                               add_back_translate(app), add_evaluate(app),      add_grad_check(app),
                               add_experiment(app)};
  // Required options of config-aware subcommands may come from the config
  // file, so they are checked after it has been applied.
  std::map<CLI::App*, std::vector<CLI::Option*>> deferred;
  for (auto& r : subs) {
    if (!r.config) continue;
    for (CLI::Option* opt : r.app->get_options()) {
      if (!opt->get_required()) continue;
      opt->required(false);
      opt->description(opt->get_description() + " (required)");
      deferred[r.app].push_back(opt);
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    for (auto& r : subs) {
      if (!r.app->parsed()) continue;
      if (r.config && !r.config->empty()) apply_flat_config(r.app, *r.config);
      for (CLI::Option* opt : deferred[r.app])
        if (opt->count() == 0)
          throw ConfigError(opt->get_name() + " is required (flag or config key)");
      r.run();
    }
  } catch (const Error& e) {
    std::cerr << "desknmt: error: " << e.kind() << ": " << e.what() << '\n';
    return 1;
  } catch (const CLI::Error& e) {
    std::cerr << "desknmt: error: config: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "desknmt: error: internal: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
