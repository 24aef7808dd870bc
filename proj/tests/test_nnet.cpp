#include <gtest/gtest.h>

#include <cmath>

#include "desknmt/gradcheck.hpp"
#include "desknmt/nnet.hpp"

using namespace desknmt;

namespace {

ModelConfig small_config(bool factored) {
  ModelConfig c;
  c.src_vocab = 10;
  c.tgt_vocab = 12;
  c.d_word = 3;
  c.d_hidden = 2;
  if (factored) {
    c.factored = true;
    c.factor_vocab = 3;
    c.d_lang = 1;
  }
  return c;
}

double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// Counted by hand, tensor by tensor:
// plain:    embeddings 66, encoder 2x48, decoder 80, init 10, attention 14, output 36
// factored: embeddings 66 + lang 9 + language head 9, encoder 2x64, decoder 88,
//           init 10, attention 14, output 36
TEST(Params, CountMatchesHandCount) {
  EXPECT_EQ(parameter_count(small_config(false)), 302u);
  EXPECT_EQ(parameter_count(small_config(true)), 360u);
  EXPECT_EQ(zero_params(small_config(false)).total_size(), 302u);
  EXPECT_EQ(zero_params(small_config(true)).total_size(), 360u);
}

TEST(Params, ClosedFormMatchesTensorsAcrossShapes) {
  for (std::size_t layers : {1u, 2u, 3u})
    for (bool factored : {false, true}) {
      ModelConfig c = small_config(factored);
      c.n_layers = layers;
      c.d_hidden = 5;
      EXPECT_EQ(parameter_count(c), zero_params(c).total_size());
    }
}

TEST(Params, InitRangeForgetBiasAndDeterminism) {
  const ModelConfig c = small_config(true);
  const auto a = init_params(c, 4), b = init_params(c, 4), d = init_params(c, 5);
  EXPECT_EQ(a.named().size(), b.named().size());
  for (std::size_t t = 0; t < a.named().size(); ++t)
    EXPECT_EQ(a.named()[t].second->raw(), b.named()[t].second->raw());
  EXPECT_NE(a.out_w.raw(), d.out_w.raw());
  const std::size_t H = c.d_hidden;
  for (const auto& [name, t] : a.named()) {
    const bool lstm_bias = name.starts_with("enc.") || name.starts_with("dec.");
    for (std::size_t i = 0; i < t->size(); ++i) {
      const double v = t->raw()[i];
      if (lstm_bias && name.ends_with(".b") && i >= H && i < 2 * H)
        EXPECT_EQ(v, 1.0) << name;
      else
        EXPECT_LE(std::abs(v), 0.08) << name;
    }
  }
  EXPECT_THROW(init_params(c, 1, 0.0), ConfigError);
}

TEST(Params, ConfigJsonRoundTripAndValidation) {
  const ModelConfig c = small_config(true);
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
  auto j = to_json(c);
  j["bogus"] = 1;
  EXPECT_THROW(model_config_from_json(j), ConfigError);
  ModelConfig bad = small_config(false);
  bad.tgt_vocab = 4;
  EXPECT_THROW(bad.validate(), ConfigError);
  bad = small_config(true);
  bad.factor_vocab = 0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Lstm, StepMatchesCellEquations) {
  LstmWeights w{Tensor::matrix(4, 2), Tensor::vector(4)};
  const double wv[] = {0.3, -0.2, 0.5, 0.1, -0.4, 0.7, 0.2, 0.9};
  const double bv[] = {0.1, 1.0, -0.3, 0.05};
  for (int i = 0; i < 8; ++i) w.w.raw()[static_cast<std::size_t>(i)] = wv[i];
  for (int i = 0; i < 4; ++i) w.b.raw()[static_cast<std::size_t>(i)] = bv[i];
  const double x = 0.6, h0 = -0.25, c0 = 0.4;
  const LstmState s = lstm_step(w, Vec{x}, LstmState{{h0}, {c0}});
  const double a[4] = {wv[0] * x + wv[1] * h0 + bv[0], wv[2] * x + wv[3] * h0 + bv[1],
                       wv[4] * x + wv[5] * h0 + bv[2], wv[6] * x + wv[7] * h0 + bv[3]};
  const double c1 = sigm(a[1]) * c0 + sigm(a[0]) * std::tanh(a[2]);
  EXPECT_NEAR(s.c[0], c1, 1e-15);
  EXPECT_NEAR(s.h[0], sigm(a[3]) * std::tanh(c1), 1e-15);
}

TEST(Attention, ZeroScoringVectorGivesUniformWeights) {
  auto p = init_params(small_config(false), 2, 0.5);
  p.att_v.fill(0.0);
  SourceInput src{{4, 5, 6, 7}, {}, {}, -1};
  const auto enc = encode(p, src);
  const auto att = attention(p, Vec(2, 0.3), enc);
  ASSERT_EQ(att.alpha.size(), 4u);
  for (double a : att.alpha) EXPECT_NEAR(a, 0.25, 1e-15);
  for (std::size_t k = 0; k < 4; ++k) {
    double mean = 0.0;
    for (std::size_t i = 0; i < 4; ++i) mean += enc.annotations.row(i)[k] / 4.0;
    EXPECT_NEAR(att.context[k], mean, 1e-15);
  }
}

TEST(Attention, WeightsFormADistribution) {
  const auto p = init_params(small_config(false), 3, 1.0);
  const auto enc = encode(p, SourceInput{{4, 9, 5}, {}, {}, -1});
  const auto att = attention(p, Vec{0.9, -0.7}, enc);
  double sum = 0.0;
  for (double a : att.alpha) {
    EXPECT_GT(a, 0.0);
    sum += a;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Encoder, AnnotationsConcatenateBothDirections) {
  // With a one-word source both directions see the same single input, so the
  // forward and backward halves come from one LSTM step each.
  const auto p = init_params(small_config(false), 6, 0.5);
  const auto enc = encode(p, SourceInput{{7}, {}, {}, -1});
  const Vec x = embed(p.src_embed, 7);
  const auto f = lstm_step(p.enc_fwd[0], x, LstmState{Vec(2, 0.0), Vec(2, 0.0)});
  const auto b = lstm_step(p.enc_bwd[0], x, LstmState{Vec(2, 0.0), Vec(2, 0.0)});
  EXPECT_NEAR(enc.annotations.row(0)[0], f.h[0], 1e-15);
  EXPECT_NEAR(enc.annotations.row(0)[1], f.h[1], 1e-15);
  EXPECT_NEAR(enc.annotations.row(0)[2], b.h[0], 1e-15);
  EXPECT_NEAR(enc.annotations.row(0)[3], b.h[1], 1e-15);
}

TEST(Inputs, ShapeAndRangeErrors) {
  const auto p = init_params(small_config(true), 1);
  EXPECT_THROW(encode(p, SourceInput{{4, 5}, {0}, {0, 0}, 0}), ShapeError);
  EXPECT_THROW(encode(p, SourceInput{{4}, {3}, {0}, 0}), ShapeError);
  EXPECT_THROW(encode(p, SourceInput{{10}, {0}, {0}, 0}), ShapeError);
  EXPECT_THROW(encode(p, SourceInput{{}, {}, {}, 0}), DataError);
  Example ex{SourceInput{{4}, {0}, {0}, 0}, TargetInput{{12}, {0}}};
  EXPECT_THROW(sequence_loss(p, ex, Mode::Eval, nullptr, nullptr), ShapeError);
}

TEST(Dropout, MaskValuesAndEvalIdentity) {
  std::mt19937_64 rng(1);
  const Vec m = dropout_mask(1000, 0.25, true, &rng);
  std::size_t zeros = 0;
  for (double v : m) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    zeros += v == 0.0;
  }
  EXPECT_GT(zeros, 180u);
  EXPECT_LT(zeros, 320u);
  EXPECT_TRUE(dropout_mask(10, 0.25, false, &rng).empty());
  EXPECT_THROW(dropout_mask(10, 1.0, true, &rng), ConfigError);
}

TEST(Loss, BatchLossIsMeanOfSequenceLosses) {
  const auto prob = random_tiny_problem(8, true, 1, 3);
  double sum = 0.0;
  std::vector<const Example*> ptrs;
  for (const auto& ex : prob.batch) {
    sum += sequence_loss(prob.params, ex, Mode::Eval, nullptr, nullptr).loss;
    ptrs.push_back(&ex);
  }
  const auto b = batch_loss(prob.params, ptrs, Mode::Eval, 0, nullptr);
  EXPECT_NEAR(b.mean_loss, sum / 3.0, 1e-12);
  EXPECT_NEAR(b.total_loss, sum, 1e-12);
}

TEST(Loss, PlainLossIsNegativeLogLikelihoodOfStepDistributions) {
  const auto prob = random_tiny_problem(12, false);
  const auto& p = prob.params;
  const auto& ex = prob.batch[0];
  const auto enc = prepare_source(p, ex.source);
  DecoderState s = initial_state(p, enc.enc);
  double nll = 0.0;
  int prev = kBos;
  for (int y : ex.target.words) {
    auto [next, z] = advance(p, enc, s, prev);
    nll -= output_distribution(p, z)[static_cast<std::size_t>(y)];
    s = std::move(next);
    prev = y;
  }
  EXPECT_NEAR(sequence_loss(p, ex, Mode::Eval, nullptr, nullptr).loss, nll, 1e-12);
}

TEST(Loss, FactoredLossAddsLanguageHead) {
  const auto prob = random_tiny_problem(13, true);
  const auto& p = prob.params;
  const auto& ex = prob.batch[0];
  const auto enc = prepare_source(p, ex.source);
  DecoderState s = initial_state(p, enc.enc);
  double nll = 0.0;
  int prev = kBos;
  for (std::size_t j = 0; j < ex.target.words.size(); ++j) {
    auto [next, z] = advance(p, enc, s, prev);
    nll -= output_distribution(p, z)[static_cast<std::size_t>(ex.target.words[j])];
    nll -= factor_distributions(p, z)[static_cast<std::size_t>(ex.target.langs[j])];
    s = std::move(next);
    prev = ex.target.words[j];
  }
  EXPECT_NEAR(sequence_loss(p, ex, Mode::Eval, nullptr, nullptr).loss, nll, 1e-12);
}

TEST(Gradients, MatchFiniteDifferencesPlainFactoredAndDeep) {
  for (std::uint64_t seed = 1; seed <= 4; ++seed)
    for (bool factored : {false, true})
      for (std::size_t layers : {1u, 2u}) {
        const auto prob = random_tiny_problem(seed, factored, layers);
        const auto r = grad_check(prob.params, prob.batch);
        EXPECT_LT(r.max_rel_error, 1e-4)
            << "seed " << seed << " factored " << factored << " layers " << layers << " worst "
            << r.worst_tensor;
        EXPECT_EQ(r.checked, prob.params.total_size());
      }
}

TEST(Gradients, TrainModeWithDropoutUsesFixedMasks) {
  auto prob = random_tiny_problem(21, true, 2);
  prob.params.config.dropout = 0.3;
  std::vector<const Example*> ptrs;
  for (const auto& e : prob.batch) ptrs.push_back(&e);
  ModelParams g = zero_params(prob.params.config);
  batch_loss(prob.params, ptrs, Mode::Train, 99, &g);
  ModelParams probe = prob.params;
  auto pn = probe.named();
  auto gn = g.named();
  const double eps = 1e-5;
  for (std::size_t t = 0; t < pn.size(); ++t) {
    double num2 = 0.0, diff2 = 0.0, ana2 = 0.0;
    for (std::size_t i = 0; i < pn[t].second->size(); ++i) {
      double& w = pn[t].second->raw()[i];
      const double w0 = w;
      w = w0 + eps;
      const double up = batch_loss(probe, ptrs, Mode::Train, 99, nullptr).mean_loss;
      w = w0 - eps;
      const double down = batch_loss(probe, ptrs, Mode::Train, 99, nullptr).mean_loss;
      w = w0;
      const double num = (up - down) / (2 * eps), ana = gn[t].second->raw()[i];
      num2 += num * num;
      ana2 += ana * ana;
      diff2 += (num - ana) * (num - ana);
    }
    const double denom = std::max({std::sqrt(num2), std::sqrt(ana2), 1e-8});
    EXPECT_LT(std::sqrt(diff2) / denom, 1e-4) << pn[t].first;
  }
}

TEST(Gradients, RelativeErrorHelper) {
  EXPECT_NEAR(relative_error(1.0, 1.1), 0.1 / 1.1, 1e-15);
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-12, 0.0), 1e-12 / 1e-8);
}
