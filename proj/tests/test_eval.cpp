#include <gtest/gtest.h>

#include <cmath>

#include "desknmt/eval.hpp"

using namespace desknmt;

namespace {

std::vector<Tokens> lines(std::initializer_list<const char*> xs) {
  std::vector<Tokens> out;
  for (const char* x : xs) out.push_back(split_tokens(x));
  return out;
}

// Language decided by the "xx_" prefix, nothing for other tokens.
std::optional<LanguageCode> prefix_lang(const std::string& t) {
  if (t.size() > 3 && t[2] == '_') return LanguageCode(t.substr(0, 2));
  return std::nullopt;
}

}  // namespace

// p1 = 11/13, p2 = 7/10, p3 = 3/7, p4 = 1/4, c = 13, r = 14
TEST(Bleu, ThreeSentenceFixture) {
  const auto hyps = lines({"the cat sat on the mat", "a dog runs", "it is raining today"});
  const auto refs = lines({"the cat is on the mat", "the dog runs fast", "it is raining today"});
  const auto r = bleu(hyps, refs);
  EXPECT_EQ(r.matches, (std::vector<std::size_t>{11, 7, 3, 1}));
  EXPECT_EQ(r.totals, (std::vector<std::size_t>{13, 10, 7, 4}));
  EXPECT_EQ(r.hyp_length, 13u);
  EXPECT_EQ(r.ref_length, 14u);
  EXPECT_NEAR(r.brevity_penalty, std::exp(1.0 - 14.0 / 13.0), 1e-15);
  EXPECT_NEAR(r.bleu, 46.4751, 5e-5);
}

TEST(Bleu, IdentityIsOneHundred) {
  const auto h = lines({"the cat sat on the mat", "it is raining today", "one two three four five"});
  EXPECT_DOUBLE_EQ(bleu(h, h).bleu, 100.0);
}

TEST(Bleu, AnyZeroPrecisionGivesZero) {
  // No 4-gram can match a three-word hypothesis.
  const auto r = bleu(lines({"a b c"}), lines({"a b c"}));
  EXPECT_EQ(r.totals[3], 0u);
  EXPECT_EQ(r.bleu, 0.0);
  EXPECT_EQ(bleu(lines({"x y z w"}), lines({"a b c d"})).bleu, 0.0);
  // every unigram matches, no bigram does
  const auto rev = bleu(lines({"a b c d e"}), lines({"e d c b a"}));
  EXPECT_EQ(rev.precisions[0], 1.0);
  EXPECT_EQ(rev.precisions[1], 0.0);
  EXPECT_EQ(rev.bleu, 0.0);
}

TEST(Bleu, BrevityPenalty) {
  // all precisions 1 up to n=3, c=3, r=5
  const auto r = bleu(lines({"a b c"}), lines({"a b c d e"}), 3);
  EXPECT_NEAR(r.bleu, 100.0 * std::exp(1.0 - 5.0 / 3.0), 1e-12);
  EXPECT_EQ(bleu(lines({"a b c d e"}), lines({"a b c"}), 3).brevity_penalty, 1.0);
}

TEST(Bleu, ClippedCounts) {
  const auto r = bleu(lines({"the the the the"}), lines({"the cat"}), 1);
  EXPECT_EQ(r.matches[0], 1u);
  EXPECT_EQ(r.totals[0], 4u);
}

TEST(Bleu, Errors) {
  EXPECT_THROW(bleu(lines({"a"}), {}), DataError);
  EXPECT_THROW(bleu(lines({"a"}), lines({"a"}), 0), ConfigError);
  EXPECT_EQ(bleu(lines({""}), lines({"a"})).bleu, 0.0);
}

TEST(WrongLanguage, RatesByHand) {
  const std::vector<Tokens> hyps = {
      {"bb_x", "bb_y", "."},           // clean
      {"bb_x", "pp_y", "bb_z"},        // 1 of 3 wrong
      {"pp_x", "pp_y", "bb_z", "!"},   // 2 of 3 wrong: majority
      {"<s>"},                         // nothing counted
  };
  const auto r = wrong_language_rate(hyps, prefix_lang, LanguageCode("bb"));
  EXPECT_EQ(r.tokens, 8u);
  EXPECT_EQ(r.wrong_tokens, 3u);
  EXPECT_DOUBLE_EQ(r.token_rate, 3.0 / 8.0);
  EXPECT_EQ(r.wrong_sentences, 2u);
  EXPECT_DOUBLE_EQ(r.sentence_rate, 0.5);
  EXPECT_EQ(r.majority_sentences, 1u);
  EXPECT_DOUBLE_EQ(r.majority_rate, 0.25);
}

TEST(WrongLanguage, IdLevelOverPartition) {
  const auto v = build_vocab({{"de_a", "en_b", "en__"}});
  const LanguageRegistry langs{"de", "en"};
  const auto part = language_partition(v, PreprocScheme::LangCodedForced, langs);
  const std::vector<std::vector<int>> hyps = {{v.id("en__"), v.id("en_b"), kEos},
                                              {v.id("de_a"), kEos}};
  const auto r = wrong_language_rate(hyps, part, LanguageCode("en"));
  EXPECT_EQ(r.tokens, 2u);
  EXPECT_EQ(r.wrong_tokens, 1u);
  EXPECT_DOUBLE_EQ(r.sentence_rate, 0.5);
}

TEST(WrongLanguage, EmptyInput) {
  const auto r = wrong_language_rate(std::vector<Tokens>{}, prefix_lang, LanguageCode("bb"));
  EXPECT_EQ(r.sentence_rate, 0.0);
  EXPECT_EQ(r.token_rate, 0.0);
}
