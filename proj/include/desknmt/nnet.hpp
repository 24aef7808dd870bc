#pragma once

// Attention encoder-decoder with optional factored (language-feature)
// embeddings, and its hand-written reverse pass.
//
// Encoder: stacked bidirectional LSTM; layer l > 0 reads [fwd ; bwd] of the
// layer below. Row i of the top layer's [fwd_i ; bwd_i] is the annotation h_i.
// Decoder step j:
//   alpha = softmax_i( v . tanh(W_z z_{j-1} + W_h h_i) ),  c_j = sum_i alpha_i h_i
//   z_j   = LSTM stack over [t_{j-1} ; c_j]
//   log P(y_j) = log_softmax(W_out z_j + b_out)      (+ one language head if factored)
// z_0 (per layer) = tanh(W_init mean_i(h_i) + b_init); cell states start at 0.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "desknmt/error.hpp"
#include "desknmt/tensor.hpp"
#include "desknmt/vocab.hpp"
#include "json.hpp"

namespace desknmt {

struct ModelConfig {
  std::size_t src_vocab = 0;
  std::size_t tgt_vocab = 0;
  std::size_t factor_vocab = 0;  // number of language factor values (factored only)
  std::size_t d_word = 32;
  std::size_t d_lang = 4;
  std::size_t d_hidden = 32;
  std::size_t n_layers = 1;
  double dropout = 0.0;
  bool factored = false;

  std::size_t src_input_width() const { return d_word + (factored ? 2 * d_lang : 0); }
  std::size_t tgt_input_width() const { return d_word + (factored ? d_lang : 0); }

  void validate() const {
    if (src_vocab <= kNumSpecials || tgt_vocab <= kNumSpecials)
      throw ConfigError("vocabularies must hold more than the four specials");
    if (d_word < 1 || d_hidden < 1 || n_layers < 1)
      throw ConfigError("model widths and depth must be at least 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (factored && (d_lang < 1 || factor_vocab < 1))
      throw ConfigError("factored models need d_lang >= 1 and at least one language factor");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"src_vocab", c.src_vocab}, {"tgt_vocab", c.tgt_vocab},
          {"factor_vocab", c.factor_vocab}, {"d_word", c.d_word},
          {"d_lang", c.d_lang}, {"d_hidden", c.d_hidden},
          {"n_layers", c.n_layers}, {"dropout", c.dropout},
          {"factored", c.factored}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"src_vocab", "tgt_vocab", "factor_vocab",
                                              "d_word",    "d_lang",    "d_hidden",
                                              "n_layers",  "dropout",   "factored"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown model config key '" + it.key() + "'");
  ModelConfig c;
  c.src_vocab = j.value("src_vocab", c.src_vocab);
  c.tgt_vocab = j.value("tgt_vocab", c.tgt_vocab);
  c.factor_vocab = j.value("factor_vocab", c.factor_vocab);
  c.d_word = j.value("d_word", c.d_word);
  c.d_lang = j.value("d_lang", c.d_lang);
  c.d_hidden = j.value("d_hidden", c.d_hidden);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.dropout = j.value("dropout", c.dropout);
  c.factored = j.value("factored", c.factored);
  return c;
}

// Gate blocks of w and b are ordered input, forget, candidate, output.
struct LstmWeights {
  Tensor w;  // [4H x (in + H)]
  Tensor b;  // [4H]
};

struct ModelParams {
  ModelConfig config;
  Tensor src_embed;            // [V_src x d_word]
  Tensor tgt_embed;            // [V_tgt x d_word]
  Tensor src_word_lang_embed;  // [F x d_lang]  factored only
  Tensor src_tgt_lang_embed;   // [F x d_lang]  factored only
  Tensor tgt_lang_embed;       // [F x d_lang]  factored only
  std::vector<LstmWeights> enc_fwd, enc_bwd, dec;
  std::vector<Tensor> init_w, init_b;  // per decoder layer
  Tensor att_wz, att_wh, att_v;
  Tensor out_w, out_b;
  Tensor feat_w, feat_b;  // language head, factored only

  std::vector<std::pair<std::string, Tensor*>> named() {
    std::vector<std::pair<std::string, Tensor*>> out;
    collect(*this, out);
    return out;
  }
  std::vector<std::pair<std::string, const Tensor*>> named() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    collect(*this, out);
    return out;
  }

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named()) n += t->size();
    return n;
  }

 private:
  template <class Self, class Out>
  static void collect(Self& p, Out& out) {
    out.emplace_back("src_embed", &p.src_embed);
    out.emplace_back("tgt_embed", &p.tgt_embed);
    if (p.config.factored) {
      out.emplace_back("src_word_lang_embed", &p.src_word_lang_embed);
      out.emplace_back("src_tgt_lang_embed", &p.src_tgt_lang_embed);
      out.emplace_back("tgt_lang_embed", &p.tgt_lang_embed);
    }
    for (std::size_t l = 0; l < p.enc_fwd.size(); ++l) {
      const std::string s = std::to_string(l);
      out.emplace_back("enc.fwd." + s + ".w", &p.enc_fwd[l].w);
      out.emplace_back("enc.fwd." + s + ".b", &p.enc_fwd[l].b);
      out.emplace_back("enc.bwd." + s + ".w", &p.enc_bwd[l].w);
      out.emplace_back("enc.bwd." + s + ".b", &p.enc_bwd[l].b);
    }
    for (std::size_t l = 0; l < p.dec.size(); ++l) {
      const std::string s = std::to_string(l);
      out.emplace_back("init." + s + ".w", &p.init_w[l]);
      out.emplace_back("init." + s + ".b", &p.init_b[l]);
      out.emplace_back("dec." + s + ".w", &p.dec[l].w);
      out.emplace_back("dec." + s + ".b", &p.dec[l].b);
    }
    out.emplace_back("att.wz", &p.att_wz);
    out.emplace_back("att.wh", &p.att_wh);
    out.emplace_back("att.v", &p.att_v);
    out.emplace_back("out.w", &p.out_w);
    out.emplace_back("out.b", &p.out_b);
    if (p.config.factored) {
      out.emplace_back("feat.w", &p.feat_w);
      out.emplace_back("feat.b", &p.feat_b);
    }
  }
};

// All tensors at their configured shapes, filled with zeros.
inline ModelParams zero_params(const ModelConfig& c) {
  c.validate();
  const std::size_t H = c.d_hidden;
  ModelParams p;
  p.config = c;
  p.src_embed = Tensor::matrix(c.src_vocab, c.d_word);
  p.tgt_embed = Tensor::matrix(c.tgt_vocab, c.d_word);
  if (c.factored) {
    p.src_word_lang_embed = Tensor::matrix(c.factor_vocab, c.d_lang);
    p.src_tgt_lang_embed = Tensor::matrix(c.factor_vocab, c.d_lang);
    p.tgt_lang_embed = Tensor::matrix(c.factor_vocab, c.d_lang);
    p.feat_w = Tensor::matrix(c.factor_vocab, H);
    p.feat_b = Tensor::vector(c.factor_vocab);
  }
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::size_t in = l == 0 ? c.src_input_width() : 2 * H;
    p.enc_fwd.push_back({Tensor::matrix(4 * H, in + H), Tensor::vector(4 * H)});
    p.enc_bwd.push_back({Tensor::matrix(4 * H, in + H), Tensor::vector(4 * H)});
    const std::size_t din = l == 0 ? c.tgt_input_width() + 2 * H : H;
    p.dec.push_back({Tensor::matrix(4 * H, din + H), Tensor::vector(4 * H)});
    p.init_w.push_back(Tensor::matrix(H, 2 * H));
    p.init_b.push_back(Tensor::vector(H));
  }
  p.att_wz = Tensor::matrix(H, H);
  p.att_wh = Tensor::matrix(H, 2 * H);
  p.att_v = Tensor::vector(H);
  p.out_w = Tensor::matrix(c.tgt_vocab, H);
  p.out_b = Tensor::vector(c.tgt_vocab);
  return p;
}

// Uniform(-scale, scale) everywhere except LSTM forget-gate biases, which start at 1.
inline ModelParams init_params(const ModelConfig& c, std::uint64_t seed, double scale = 0.08) {
  if (!(scale > 0.0)) throw ConfigError("init scale must be positive");
  ModelParams p = zero_params(c);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& [name, t] : p.named())
    for (double& v : t->values()) v = dist(rng);
  auto forget_bias = [&](LstmWeights& lw) {
    const std::size_t H = c.d_hidden;
    for (std::size_t k = H; k < 2 * H; ++k) lw.b[k] = 1.0;
  };
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    forget_bias(p.enc_fwd[l]);
    forget_bias(p.enc_bwd[l]);
    forget_bias(p.dec[l]);
  }
  return p;
}

// Closed-form parameter count for a configuration.
inline std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t H = c.d_hidden;
  auto lstm = [&](std::size_t in) { return 4 * H * (in + H) + 4 * H; };
  std::size_t n = (c.src_vocab + c.tgt_vocab) * c.d_word;
  if (c.factored) n += 3 * c.factor_vocab * c.d_lang + c.factor_vocab * (H + 1);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    n += 2 * lstm(l == 0 ? c.src_input_width() : 2 * H);
    n += lstm(l == 0 ? c.tgt_input_width() + 2 * H : H);
    n += H * 2 * H + H;
  }
  n += H * H + H * 2 * H + H;
  n += c.tgt_vocab * (H + 1);
  return n;
}

// ---------------------------------------------------------------------------
// Model inputs (vocabulary ids)

struct SourceInput {
  std::vector<int> words;
  std::vector<int> word_langs;  // factored only, one per word
  std::vector<int> tgt_langs;   // factored only, one per word
  int target_factor = -1;       // factored only: language factor fed with every decoder input
};

struct TargetInput {
  std::vector<int> words;  // y_1 .. y_J, ending with </s>
  std::vector<int> langs;  // factored only: language factor to predict at each step
};

struct Example {
  SourceInput source;
  TargetInput target;
};

enum class Mode { Train, Eval };

// ---------------------------------------------------------------------------
// Primitive operations

inline Vec embed(const Tensor& e, int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= e.rows())
    throw ShapeError("embedding id " + std::to_string(id) + " outside [0, " +
                     std::to_string(e.rows()) + ")");
  auto r = e.row(static_cast<std::size_t>(id));
  return Vec(r.begin(), r.end());
}

// [E^1 x^1 ; E^2 x^2 ; ...]
inline Vec embed_factored(std::span<const Tensor* const> factor_embeddings,
                          std::span<const int> factor_ids) {
  if (factor_embeddings.size() != factor_ids.size())
    throw ShapeError("embed_factored got " + std::to_string(factor_embeddings.size()) +
                     " matrices for " + std::to_string(factor_ids.size()) + " ids");
  Vec out;
  for (std::size_t f = 0; f < factor_ids.size(); ++f) {
    const Vec part = embed(*factor_embeddings[f], factor_ids[f]);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// Inverted dropout mask: 0 with probability p, else 1/(1-p). Empty means identity.
inline Vec dropout_mask(std::size_t n, double p, bool training, std::mt19937_64* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
  if (!training || p == 0.0) return {};
  if (rng == nullptr) throw ConfigError("training-mode dropout needs a random generator");
  std::bernoulli_distribution keep(1.0 - p);
  Vec m(n);
  for (double& v : m) v = keep(*rng) ? 1.0 / (1.0 - p) : 0.0;
  return m;
}

inline Vec apply_mask(std::span<const double> x, const Vec& mask) {
  Vec out(x.begin(), x.end());
  if (!mask.empty())
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return out;
}

inline Vec dropout(std::span<const double> x, double p, bool training, std::mt19937_64& rng) {
  return apply_mask(x, dropout_mask(x.size(), p, training, &rng));
}

struct LstmState {
  Vec h, c;
};

struct LstmCache {
  Vec xh;  // [x ; h_prev]
  Vec i, f, g, o;
  Vec c_prev, c, tanh_c, h;
};

inline LstmCache lstm_forward(const LstmWeights& w, std::span<const double> x,
                              std::span<const double> h_prev, std::span<const double> c_prev) {
  const std::size_t H = w.b.size() / 4;
  if (h_prev.size() != H || c_prev.size() != H || x.size() + H != w.w.cols())
    throw ShapeError("lstm widths: input " + std::to_string(x.size()) + ", state " +
                     std::to_string(h_prev.size()) + " against weights " +
                     shape_string(w.w.shape()));
  LstmCache k;
  k.xh = concat(x, h_prev);
  Vec pre(w.b.raw());
  gemv_acc(w.w, k.xh, pre);
  k.i.resize(H), k.f.resize(H), k.g.resize(H), k.o.resize(H);
  k.c.resize(H), k.tanh_c.resize(H), k.h.resize(H);
  k.c_prev.assign(c_prev.begin(), c_prev.end());
  for (std::size_t u = 0; u < H; ++u) {
    k.i[u] = sigmoid(pre[u]);
    k.f[u] = sigmoid(pre[H + u]);
    k.g[u] = std::tanh(pre[2 * H + u]);
    k.o[u] = sigmoid(pre[3 * H + u]);
    k.c[u] = k.f[u] * c_prev[u] + k.i[u] * k.g[u];
    k.tanh_c[u] = std::tanh(k.c[u]);
    k.h[u] = k.o[u] * k.tanh_c[u];
  }
  return k;
}

// Given dL/dh and dL/dc at this step, accumulates weight gradients and
// returns dL/d[x ; h_prev] in dxh and dL/dc_prev in dc_prev.
inline void lstm_backward(const LstmWeights& w, const LstmCache& k, std::span<const double> dh,
                          std::span<const double> dc, LstmWeights& grad, Vec& dxh, Vec& dc_prev) {
  const std::size_t H = k.h.size();
  Vec dpre(4 * H);
  dc_prev.assign(H, 0.0);
  for (std::size_t u = 0; u < H; ++u) {
    const double d_o = dh[u] * k.tanh_c[u];
    const double d_c = dc[u] + dh[u] * k.o[u] * (1.0 - k.tanh_c[u] * k.tanh_c[u]);
    const double d_i = d_c * k.g[u];
    const double d_g = d_c * k.i[u];
    const double d_f = d_c * k.c_prev[u];
    dc_prev[u] = d_c * k.f[u];
    dpre[u] = d_i * k.i[u] * (1.0 - k.i[u]);
    dpre[H + u] = d_f * k.f[u] * (1.0 - k.f[u]);
    dpre[2 * H + u] = d_g * (1.0 - k.g[u] * k.g[u]);
    dpre[3 * H + u] = d_o * k.o[u] * (1.0 - k.o[u]);
  }
  outer_acc(grad.w, dpre, k.xh);
  add_to(grad.b.values(), dpre);
  dxh.assign(k.xh.size(), 0.0);
  gemv_t_acc(w.w, dpre, dxh);
}

inline LstmState lstm_step(const LstmWeights& w, std::span<const double> x, const LstmState& s) {
  LstmCache k = lstm_forward(w, x, s.h, s.c);
  return {std::move(k.h), std::move(k.c)};
}

// ---------------------------------------------------------------------------
// Encoder

struct EncoderOutput {
  Tensor annotations;  // [I x 2H]
};

namespace detail {

struct EncoderCache {
  std::vector<std::vector<LstmCache>> fwd, bwd;  // [layer][position]
  std::vector<std::vector<Vec>> masks;           // [layer][position], layer 0 unused
  Tensor annotations;
};

inline void check_source(const ModelParams& p, const SourceInput& src) {
  const auto& c = p.config;
  if (src.words.empty()) throw DataError("source sequence is empty");
  for (int w : src.words)
    if (w < 0 || static_cast<std::size_t>(w) >= c.src_vocab)
      throw ShapeError("source id " + std::to_string(w) + " out of range");
  if (c.factored) {
    if (src.word_langs.size() != src.words.size() || src.tgt_langs.size() != src.words.size())
      throw ShapeError("factored source needs two language factors per word");
    auto in_range = [&](int f) { return f >= 0 && static_cast<std::size_t>(f) < c.factor_vocab; };
    for (std::size_t i = 0; i < src.words.size(); ++i)
      if (!in_range(src.word_langs[i]) || !in_range(src.tgt_langs[i]))
        throw ShapeError("language factor id out of range");
    if (!in_range(src.target_factor)) throw ShapeError("target language factor out of range");
  }
}

inline Vec source_embedding(const ModelParams& p, const SourceInput& src, std::size_t i) {
  if (!p.config.factored) return embed(p.src_embed, src.words[i]);
  const Tensor* mats[] = {&p.src_embed, &p.src_word_lang_embed, &p.src_tgt_lang_embed};
  const int ids[] = {src.words[i], src.word_langs[i], src.tgt_langs[i]};
  return embed_factored(mats, ids);
}

inline Vec target_embedding(const ModelParams& p, int word, int lang_factor) {
  if (!p.config.factored) return embed(p.tgt_embed, word);
  const Tensor* mats[] = {&p.tgt_embed, &p.tgt_lang_embed};
  const int ids[] = {word, lang_factor};
  return embed_factored(mats, ids);
}

inline EncoderCache encode_forward(const ModelParams& p, const SourceInput& src, Mode mode,
                                   std::mt19937_64* rng) {
  check_source(p, src);
  const auto& c = p.config;
  const std::size_t I = src.words.size(), H = c.d_hidden, L = c.n_layers;
  EncoderCache k;
  k.fwd.resize(L), k.bwd.resize(L), k.masks.resize(L);
  std::vector<Vec> inputs(I);
  for (std::size_t i = 0; i < I; ++i) inputs[i] = source_embedding(p, src, i);
  const Vec zero(H, 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    if (l > 0) {
      k.masks[l].resize(I);
      for (std::size_t i = 0; i < I; ++i) {
        Vec x = concat(k.fwd[l - 1][i].h, k.bwd[l - 1][i].h);
        k.masks[l][i] = dropout_mask(x.size(), c.dropout, mode == Mode::Train, rng);
        inputs[i] = apply_mask(x, k.masks[l][i]);
      }
    }
    k.fwd[l].resize(I);
    k.bwd[l].resize(I);
    for (std::size_t i = 0; i < I; ++i) {
      const Vec& h = i == 0 ? zero : k.fwd[l][i - 1].h;
      const Vec& cc = i == 0 ? zero : k.fwd[l][i - 1].c;
      k.fwd[l][i] = lstm_forward(p.enc_fwd[l], inputs[i], h, cc);
    }
    for (std::size_t r = 0; r < I; ++r) {
      const std::size_t i = I - 1 - r;
      const Vec& h = r == 0 ? zero : k.bwd[l][i + 1].h;
      const Vec& cc = r == 0 ? zero : k.bwd[l][i + 1].c;
      k.bwd[l][i] = lstm_forward(p.enc_bwd[l], inputs[i], h, cc);
    }
  }
  k.annotations = Tensor::matrix(I, 2 * H);
  for (std::size_t i = 0; i < I; ++i) {
    auto row = k.annotations.row(i);
    std::copy(k.fwd[L - 1][i].h.begin(), k.fwd[L - 1][i].h.end(), row.begin());
    std::copy(k.bwd[L - 1][i].h.begin(), k.bwd[L - 1][i].h.end(), row.begin() + H);
  }
  return k;
}

inline void encode_backward(const ModelParams& p, const SourceInput& src, const EncoderCache& k,
                            const Tensor& d_annotations, ModelParams& g) {
  const auto& c = p.config;
  const std::size_t I = src.words.size(), H = c.d_hidden, L = c.n_layers;
  // d_out[i] = dL/d[fwd_i ; bwd_i] for the layer being processed.
  std::vector<Vec> d_out(I);
  for (std::size_t i = 0; i < I; ++i) {
    auto r = d_annotations.row(i);
    d_out[i].assign(r.begin(), r.end());
  }
  Vec dxh, dc_prev;
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t in = l == 0 ? c.src_input_width() : 2 * H;
    std::vector<Vec> d_in(I, Vec(in, 0.0));
    Vec dh_carry(H, 0.0), dc_carry(H, 0.0);
    for (std::size_t r = 0; r < I; ++r) {
      const std::size_t i = I - 1 - r;
      Vec dh(d_out[i].begin(), d_out[i].begin() + static_cast<std::ptrdiff_t>(H));
      add_to(dh, dh_carry);
      lstm_backward(p.enc_fwd[l], k.fwd[l][i], dh, dc_carry, g.enc_fwd[l], dxh, dc_prev);
      add_to(d_in[i], std::span<const double>(dxh).first(in));
      dh_carry.assign(dxh.begin() + static_cast<std::ptrdiff_t>(in), dxh.end());
      dc_carry = dc_prev;
    }
    std::fill(dh_carry.begin(), dh_carry.end(), 0.0);
    std::fill(dc_carry.begin(), dc_carry.end(), 0.0);
    for (std::size_t i = 0; i < I; ++i) {
      Vec dh(d_out[i].begin() + static_cast<std::ptrdiff_t>(H), d_out[i].end());
      add_to(dh, dh_carry);
      lstm_backward(p.enc_bwd[l], k.bwd[l][i], dh, dc_carry, g.enc_bwd[l], dxh, dc_prev);
      add_to(d_in[i], std::span<const double>(dxh).first(in));
      dh_carry.assign(dxh.begin() + static_cast<std::ptrdiff_t>(in), dxh.end());
      dc_carry = dc_prev;
    }
    if (l > 0) {
      for (std::size_t i = 0; i < I; ++i) d_out[i] = apply_mask(d_in[i], k.masks[l][i]);
    } else {
      for (std::size_t i = 0; i < I; ++i) {
        const auto& d = d_in[i];
        add_to(g.src_embed.row(static_cast<std::size_t>(src.words[i])),
               std::span<const double>(d).first(c.d_word));
        if (c.factored) {
          add_to(g.src_word_lang_embed.row(static_cast<std::size_t>(src.word_langs[i])),
                 std::span<const double>(d).subspan(c.d_word, c.d_lang));
          add_to(g.src_tgt_lang_embed.row(static_cast<std::size_t>(src.tgt_langs[i])),
                 std::span<const double>(d).subspan(c.d_word + c.d_lang, c.d_lang));
        }
      }
    }
  }
}

}  // namespace detail

// Inference-mode encoding (no dropout).
inline EncoderOutput encode(const ModelParams& p, const SourceInput& src) {
  return {detail::encode_forward(p, src, Mode::Eval, nullptr).annotations};
}

inline EncoderOutput encode(const ModelParams& p, const SourceInput& src, Mode mode,
                            std::mt19937_64& rng) {
  return {detail::encode_forward(p, src, mode, &rng).annotations};
}

// ---------------------------------------------------------------------------
// Attention

struct AttentionResult {
  Vec alpha;
  Vec context;
};

namespace detail {

struct AttentionCache {
  Vec z_prev;
  std::vector<Vec> u;  // tanh(W_z z + W_h h_i) per position
  Vec alpha;
  Vec context;
};

// projected[i] = W_h h_i
inline std::vector<Vec> project_annotations(const ModelParams& p, const Tensor& ann) {
  std::vector<Vec> out(ann.rows(), Vec(p.config.d_hidden, 0.0));
  for (std::size_t i = 0; i < ann.rows(); ++i) gemv_acc(p.att_wh, ann.row(i), out[i]);
  return out;
}

inline AttentionCache attention_forward(const ModelParams& p, std::span<const double> z_prev,
                                        const Tensor& ann, const std::vector<Vec>& projected) {
  const std::size_t I = ann.rows(), A = p.config.d_hidden;
  if (z_prev.size() != p.att_wz.cols()) throw ShapeError("attention state width mismatch");
  AttentionCache k;
  k.z_prev.assign(z_prev.begin(), z_prev.end());
  Vec wz(A, 0.0);
  gemv_acc(p.att_wz, z_prev, wz);
  k.u.resize(I);
  Vec scores(I, 0.0);
  for (std::size_t i = 0; i < I; ++i) {
    k.u[i].resize(A);
    double s = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      k.u[i][a] = std::tanh(wz[a] + projected[i][a]);
      s += p.att_v[a] * k.u[i][a];
    }
    scores[i] = s;
  }
  k.alpha = log_softmax(scores);
  for (double& a : k.alpha) a = std::exp(a);
  k.context.assign(ann.cols(), 0.0);
  for (std::size_t i = 0; i < I; ++i) {
    auto h = ann.row(i);
    for (std::size_t d = 0; d < h.size(); ++d) k.context[d] += k.alpha[i] * h[d];
  }
  return k;
}

// Accumulates into g (att_wz, att_v), d_ann, d_projected and d_zprev.
inline void attention_backward(const ModelParams& p, const AttentionCache& k, const Tensor& ann,
                               std::span<const double> d_context, ModelParams& g, Tensor& d_ann,
                               std::vector<Vec>& d_projected, Vec& d_zprev) {
  const std::size_t I = ann.rows(), A = p.config.d_hidden;
  Vec d_alpha(I, 0.0);
  for (std::size_t i = 0; i < I; ++i) {
    auto h = ann.row(i);
    auto dh = d_ann.row(i);
    double s = 0.0;
    for (std::size_t d = 0; d < h.size(); ++d) {
      dh[d] += k.alpha[i] * d_context[d];
      s += h[d] * d_context[d];
    }
    d_alpha[i] = s;
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < I; ++i) dot += k.alpha[i] * d_alpha[i];
  Vec d_wz(A, 0.0);
  for (std::size_t i = 0; i < I; ++i) {
    const double ds = k.alpha[i] * (d_alpha[i] - dot);
    for (std::size_t a = 0; a < A; ++a) {
      g.att_v[a] += ds * k.u[i][a];
      const double dpre = ds * p.att_v[a] * (1.0 - k.u[i][a] * k.u[i][a]);
      d_wz[a] += dpre;
      d_projected[i][a] += dpre;
    }
  }
  outer_acc(g.att_wz, d_wz, k.z_prev);
  gemv_t_acc(p.att_wz, d_wz, d_zprev);
}

}  // namespace detail

// Stand-alone attention over an encoder output; used for inspection and tests.
inline AttentionResult attention(const ModelParams& p, std::span<const double> z_prev,
                                 const EncoderOutput& enc) {
  const auto projected = detail::project_annotations(p, enc.annotations);
  auto k = detail::attention_forward(p, z_prev, enc.annotations, projected);
  return {std::move(k.alpha), std::move(k.context)};
}

// ---------------------------------------------------------------------------
// Decoder

struct DecoderState {
  std::vector<Vec> h, c;  // per layer
  std::size_t step = 0;

  const Vec& top() const { return h.back(); }
};

namespace detail {

struct InitCache {
  Vec mean;
  std::vector<Vec> h0;
};

inline InitCache init_forward(const ModelParams& p, const Tensor& ann) {
  const std::size_t I = ann.rows();
  InitCache k;
  k.mean.assign(ann.cols(), 0.0);
  for (std::size_t i = 0; i < I; ++i) add_to(k.mean, ann.row(i));
  for (double& v : k.mean) v /= static_cast<double>(I);
  for (std::size_t l = 0; l < p.config.n_layers; ++l) {
    Vec h(p.init_b[l].raw());
    gemv_acc(p.init_w[l], k.mean, h);
    for (double& v : h) v = std::tanh(v);
    k.h0.push_back(std::move(h));
  }
  return k;
}

struct DecoderStepCache {
  AttentionCache att;
  std::vector<LstmCache> layers;
  std::vector<Vec> masks;  // per layer, layer 0 unused
  Vec logp;
  Vec feat_logp;
};

}  // namespace detail

inline DecoderState initial_state(const ModelParams& p, const EncoderOutput& enc) {
  auto k = detail::init_forward(p, enc.annotations);
  DecoderState s;
  s.h = std::move(k.h0);
  s.c.assign(p.config.n_layers, Vec(p.config.d_hidden, 0.0));
  return s;
}

// One decoder recurrence: LSTM stack over [t_prev ; context]. Returns the new
// state and the top-layer output z.
inline std::pair<DecoderState, Vec> decoder_step(const ModelParams& p, const DecoderState& s,
                                                 std::span<const double> t_prev,
                                                 std::span<const double> context) {
  const auto& c = p.config;
  if (t_prev.size() != c.tgt_input_width() || context.size() != 2 * c.d_hidden)
    throw ShapeError("decoder input widths " + std::to_string(t_prev.size()) + "+" +
                     std::to_string(context.size()) + " do not match the model");
  DecoderState next;
  next.step = s.step + 1;
  Vec x = concat(t_prev, context);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    LstmCache k = lstm_forward(p.dec[l], x, s.h[l], s.c[l]);
    x = k.h;
    next.h.push_back(std::move(k.h));
    next.c.push_back(std::move(k.c));
  }
  return {std::move(next), x};
}

inline Vec output_logits(const ModelParams& p, std::span<const double> z) {
  Vec logits(p.out_b.raw());
  gemv_acc(p.out_w, z, logits);
  return logits;
}

// log P(y | z) over the target vocabulary; entries excluded by `mask` get -inf
// and the remainder is renormalized.
inline Vec output_distribution(const ModelParams& p, std::span<const double> z,
                               const Mask* mask = nullptr) {
  if (mask) {
    if (mask->size() != p.config.tgt_vocab)
      throw ShapeError("mask covers " + std::to_string(mask->size()) + " ids, vocabulary has " +
                       std::to_string(p.config.tgt_vocab));
    if (count_allowed(*mask) == 0) throw DataError("output mask allows no entries");
    return log_softmax(output_logits(p, z), *mask);
  }
  return log_softmax(output_logits(p, z));
}

inline Vec factor_distributions(const ModelParams& p, std::span<const double> z) {
  if (!p.config.factored) throw ConfigError("model has no language factor head");
  Vec logits(p.feat_b.raw());
  gemv_acc(p.feat_w, z, logits);
  return log_softmax(logits);
}

// Encoder output plus cached attention projections, for step-wise decoding.
struct EncodedSource {
  EncoderOutput enc;
  std::vector<Vec> projected;
  int target_factor = -1;
};

inline EncodedSource prepare_source(const ModelParams& p, const SourceInput& src) {
  EncodedSource e;
  e.enc = encode(p, src);
  e.projected = detail::project_annotations(p, e.enc.annotations);
  e.target_factor = src.target_factor;
  return e;
}

// Attention from the current state, embedding of prev_token, one decoder step.
inline std::pair<DecoderState, Vec> advance(const ModelParams& p, const EncodedSource& e,
                                            const DecoderState& s, int prev_token) {
  const auto att = detail::attention_forward(p, s.top(), e.enc.annotations, e.projected);
  const Vec t = detail::target_embedding(p, prev_token, e.target_factor);
  return decoder_step(p, s, t, att.context);
}

// ---------------------------------------------------------------------------
// Loss and gradients

struct LossValue {
  double loss = 0.0;      // summed over target steps (and language head when factored)
  std::size_t tokens = 0; // target steps
};

// -sum_j log P(y_j | y_<j, x) [- sum_j log P(lang_j | ...)]. When `grads` is
// given, dL/dtheta is added into it.
inline LossValue sequence_loss(const ModelParams& p, const Example& ex, Mode mode,
                               std::mt19937_64* rng, ModelParams* grads) {
  const auto& c = p.config;
  const auto& tgt = ex.target;
  if (tgt.words.empty()) throw DataError("target sequence is empty");
  for (int w : tgt.words)
    if (w < 0 || static_cast<std::size_t>(w) >= c.tgt_vocab)
      throw ShapeError("target id " + std::to_string(w) + " out of range");
  if (c.factored) {
    if (tgt.langs.size() != tgt.words.size())
      throw ShapeError("factored target needs one language factor per word");
    for (int f : tgt.langs)
      if (f < 0 || static_cast<std::size_t>(f) >= c.factor_vocab)
        throw ShapeError("target language factor out of range");
  }
  const bool train = mode == Mode::Train;
  const std::size_t J = tgt.words.size(), L = c.n_layers, H = c.d_hidden;

  auto enc = detail::encode_forward(p, ex.source, mode, rng);
  const Tensor& ann = enc.annotations;
  const auto projected = detail::project_annotations(p, ann);
  auto init = detail::init_forward(p, ann);

  std::vector<detail::DecoderStepCache> steps(J);
  std::vector<Vec> h = init.h0;
  std::vector<Vec> cs(L, Vec(H, 0.0));
  LossValue out;
  out.tokens = J;
  for (std::size_t j = 0; j < J; ++j) {
    auto& k = steps[j];
    const int prev = j == 0 ? kBos : tgt.words[j - 1];
    k.att = detail::attention_forward(p, h[L - 1], ann, projected);
    Vec x = concat(detail::target_embedding(p, prev, ex.source.target_factor), k.att.context);
    k.layers.resize(L);
    k.masks.resize(L);
    for (std::size_t l = 0; l < L; ++l) {
      if (l > 0) {
        k.masks[l] = dropout_mask(H, c.dropout, train, rng);
        x = apply_mask(x, k.masks[l]);
      }
      k.layers[l] = lstm_forward(p.dec[l], x, h[l], cs[l]);
      h[l] = k.layers[l].h;
      cs[l] = k.layers[l].c;
      x = k.layers[l].h;
    }
    k.logp = output_distribution(p, x);
    out.loss -= k.logp[static_cast<std::size_t>(tgt.words[j])];
    if (c.factored) {
      k.feat_logp = factor_distributions(p, x);
      out.loss -= k.feat_logp[static_cast<std::size_t>(tgt.langs[j])];
    }
  }
  if (grads == nullptr) return out;

  ModelParams& g = *grads;
  Tensor d_ann = Tensor::matrix(ann.rows(), ann.cols());
  std::vector<Vec> d_projected(ann.rows(), Vec(H, 0.0));
  std::vector<Vec> dh_next(L, Vec(H, 0.0)), dc_next(L, Vec(H, 0.0));
  Vec dxh, dc_prev;
  for (std::size_t j = J; j-- > 0;) {
    auto& k = steps[j];
    const Vec& z = k.layers[L - 1].h;
    // Output heads: d logits = softmax - onehot.
    Vec dz(H, 0.0);
    {
      Vec dlog(k.logp.size());
      for (std::size_t v = 0; v < dlog.size(); ++v) dlog[v] = std::exp(k.logp[v]);
      dlog[static_cast<std::size_t>(tgt.words[j])] -= 1.0;
      outer_acc(g.out_w, dlog, z);
      add_to(g.out_b.values(), dlog);
      gemv_t_acc(p.out_w, dlog, dz);
    }
    if (c.factored) {
      Vec dlog(k.feat_logp.size());
      for (std::size_t v = 0; v < dlog.size(); ++v) dlog[v] = std::exp(k.feat_logp[v]);
      dlog[static_cast<std::size_t>(tgt.langs[j])] -= 1.0;
      outer_acc(g.feat_w, dlog, z);
      add_to(g.feat_b.values(), dlog);
      gemv_t_acc(p.feat_w, dlog, dz);
    }
    Vec d_above = dz;  // gradient flowing into the current layer's h from above
    for (std::size_t l = L; l-- > 0;) {
      Vec dh = d_above;
      add_to(dh, dh_next[l]);
      lstm_backward(p.dec[l], k.layers[l], dh, dc_next[l], g.dec[l], dxh, dc_prev);
      const std::size_t in = dxh.size() - H;
      dh_next[l].assign(dxh.begin() + static_cast<std::ptrdiff_t>(in), dxh.end());
      dc_next[l] = dc_prev;
      Vec dx(dxh.begin(), dxh.begin() + static_cast<std::ptrdiff_t>(in));
      if (l > 0) {
        d_above = apply_mask(dx, k.masks[l]);
      } else {
        const std::size_t tw = c.tgt_input_width();
        const int prev = j == 0 ? kBos : tgt.words[j - 1];
        add_to(g.tgt_embed.row(static_cast<std::size_t>(prev)),
               std::span<const double>(dx).first(c.d_word));
        if (c.factored)
          add_to(g.tgt_lang_embed.row(static_cast<std::size_t>(ex.source.target_factor)),
                 std::span<const double>(dx).subspan(c.d_word, c.d_lang));
        // Context gradient feeds attention, whose query is the previous top state.
        Vec dz_prev(H, 0.0);
        detail::attention_backward(p, k.att, ann, std::span<const double>(dx).subspan(tw), g,
                                   d_ann, d_projected, dz_prev);
        add_to(dh_next[L - 1], dz_prev);
      }
    }
  }
  // Initial state: h0_l = tanh(W_init_l mean + b_init_l); c0 is constant zero.
  Vec d_mean(ann.cols(), 0.0);
  for (std::size_t l = 0; l < L; ++l) {
    Vec dpre(H);
    for (std::size_t u = 0; u < H; ++u)
      dpre[u] = dh_next[l][u] * (1.0 - init.h0[l][u] * init.h0[l][u]);
    outer_acc(g.init_w[l], dpre, init.mean);
    add_to(g.init_b[l].values(), dpre);
    gemv_t_acc(p.init_w[l], dpre, d_mean);
  }
  const double inv_i = 1.0 / static_cast<double>(ann.rows());
  for (std::size_t i = 0; i < ann.rows(); ++i) {
    auto row = d_ann.row(i);
    for (std::size_t d = 0; d < row.size(); ++d) row[d] += d_mean[d] * inv_i;
    outer_acc(g.att_wh, d_projected[i], ann.row(i));
    gemv_t_acc(p.att_wh, d_projected[i], row);
  }
  detail::encode_backward(p, ex.source, enc, d_ann, g);
  return out;
}

// Deterministic per-example stream for dropout.
inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct BatchLoss {
  double mean_loss = 0.0;
  double total_loss = 0.0;
  std::size_t tokens = 0;
};

// Mean loss over the batch; gradients (if requested) are overwritten with the
// batch-mean gradient. Examples are processed in order, so the reduction is
// deterministic.
inline BatchLoss batch_loss(const ModelParams& p, std::span<const Example* const> batch, Mode mode,
                            std::uint64_t seed, ModelParams* grads) {
  if (batch.empty()) throw DataError("empty batch");
  if (grads)
    for (auto& [name, t] : grads->named()) t->fill(0.0);
  BatchLoss out;
  for (std::size_t n = 0; n < batch.size(); ++n) {
    std::mt19937_64 rng(mix_seed(seed, n));
    const LossValue v = sequence_loss(p, *batch[n], mode, &rng, grads);
    out.total_loss += v.loss;
    out.tokens += v.tokens;
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  out.mean_loss = out.total_loss * inv;
  if (grads)
    for (auto& [name, t] : grads->named())
      for (double& v : t->values()) v *= inv;
  return out;
}

}  // namespace desknmt
