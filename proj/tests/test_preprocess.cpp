#include <gtest/gtest.h>

#include "desknmt/preprocess.hpp"
#include "support.hpp"

using namespace desknmt;

namespace {

const LanguageRegistry& langs() {
  static const LanguageRegistry r{"de", "en", "nl", "it", "ro"};
  return r;
}

const LanguageCode de("de"), en("en"), nl("nl");

}  // namespace

TEST(LanguageCoding, PrefixesEveryToken) {
  const Tokens s = split_tokens("versetzen Sie sich mal in meine Lage !");
  EXPECT_EQ(join_tokens(apply_language_coding(s, de, langs())),
            "de_versetzen de_Sie de_sich de_mal de_in de_meine de_Lage de_!");
  EXPECT_EQ(join_tokens(apply_language_coding({"I", "flew"}, en, langs())), "en_I en_flew");
  EXPECT_TRUE(apply_language_coding({}, en, langs()).empty());
}

TEST(LanguageCoding, RejectsDoubleCoding) {
  EXPECT_THROW(apply_language_coding({"de_Lage"}, de, langs()), DataError);
  // An underscore alone is fine when the prefix is not a registered language.
  EXPECT_NO_THROW(apply_language_coding({"foo_bar"}, de, langs()));
}

TEST(TargetForcing, DefaultsAndDegenerateCase) {
  const Tokens coded = apply_language_coding(split_tokens("versetzen Sie !"), de, langs());
  EXPECT_EQ(join_tokens(apply_target_forcing(coded, en)),
            "<en> <en> de_versetzen de_Sie de_! <en> <en>");
  EXPECT_EQ(join_tokens(apply_target_forcing(coded, en, 1, false)),
            "<en> de_versetzen de_Sie de_!");
  const Tokens i_flew = apply_language_coding(split_tokens("I flew ."), en, langs());
  EXPECT_EQ(join_tokens(apply_target_forcing(i_flew, nl)), "<nl> <nl> en_I en_flew en_. <nl> <nl>");
  EXPECT_THROW(apply_target_forcing(coded, en, 0), ConfigError);
}

TEST(TargetStart, PseudoWord) {
  EXPECT_EQ(make_target_start(en), "en__");
  EXPECT_EQ(make_target_start(nl), "nl__");
}

TEST(Johnson, PrependsTargetToken) {
  EXPECT_EQ(join_tokens(apply_johnson(split_tokens("versetzen Sie sich mal in meine Lage !"), en)),
            "2en versetzen Sie sich mal in meine Lage !");
  EXPECT_EQ(join_tokens(apply_johnson(
                split_tokens("I flew on Air Force Two for eight years ."), nl)),
            "2nl I flew on Air Force Two for eight years .");
  EXPECT_EQ(join_tokens(apply_johnson({}, en)), "2en");
}

TEST(Factors, EveryTokenCarriesBothLanguages) {
  const auto tagged =
      annotate_factors(split_tokens("put yourselves in my position ."), en, de, langs());
  ASSERT_EQ(tagged.size(), 6u);
  for (const auto& t : tagged) {
    ASSERT_TRUE(t.factors);
    EXPECT_EQ(t.factors->word_lang, en);
    EXPECT_EQ(t.factors->tgt_lang, de);
  }
  EXPECT_EQ(surfaces(tagged), split_tokens("put yourselves in my position ."));
  const auto same = annotate_factors({"hello"}, en, en, langs());
  EXPECT_EQ(same[0].factors->tgt_lang, en);
  EXPECT_THROW(annotate_factors({"x"}, LanguageCode("fr"), en, langs()), DataError);
  EXPECT_THROW(annotate_factors({"x", "y"}, std::vector<LanguageCode>{en}, en, langs()), DataError);
}

TEST(Factors, TextFormatRoundTrip) {
  const auto tagged = annotate_factors({"a|b", "c"}, en, nl, langs());
  const std::string line = format_factored(tagged);
  EXPECT_EQ(line, "a|b|en|nl c|en|nl");
  EXPECT_EQ(parse_factored(line), tagged);
  EXPECT_THROW(parse_factored("x|en"), DataError);
}

TEST(Postprocess, InvertsEachScheme) {
  EXPECT_EQ(join_tokens(postprocess(split_tokens("en__ en_put en_yourselves en_in en_my "
                                                 "en_position en_."),
                                    PreprocScheme::LangCodedForced, langs())),
            "put yourselves in my position .");
  EXPECT_EQ(join_tokens(postprocess(split_tokens("2nl I flew"), PreprocScheme::TargetTokenOnly,
                                    langs())),
            "I flew");
  EXPECT_EQ(join_tokens(postprocess(split_tokens("nl__ aa@@ b"), PreprocScheme::Factored, langs())),
            "aab");
}

TEST(Postprocess, CountsUnprefixedTokens) {
  PostprocessStats st;
  const auto out = postprocess({"en_a", "b"}, PreprocScheme::LangCodedForced, langs(), "@@", &st);
  EXPECT_EQ(out, (Tokens{"a", "b"}));
  EXPECT_EQ(st.unknown_prefix, 1u);
}

TEST(Postprocess, RoundTripForAllSchemesOnSyntheticSentences) {
  const auto spec = desknmt::testing::small_spec(200);
  const auto reg = desknmt::testing::registry_of(spec);
  const auto parts = synth_corpus(spec, 3);
  std::vector<Tokens> text;
  for (const auto& [label, c] : parts)
    for (const auto& p : c.pairs) text.push_back(p.source);
  const BpeModel bpe = bpe_train(text, 6);
  std::size_t checked = 0;
  for (const auto& [label, c] : parts) {
    for (const auto& p : c.pairs) {
      const Tokens units = bpe_apply(bpe, p.source);
      const Tokens coded =
          apply_target_forcing(apply_language_coding(units, p.src_lang, reg), p.tgt_lang);
      EXPECT_EQ(postprocess(coded, PreprocScheme::LangCodedForced, reg), p.source);
      Tokens target_side{make_target_start(p.src_lang)};
      for (const auto& t : apply_language_coding(units, p.src_lang, reg)) target_side.push_back(t);
      EXPECT_EQ(postprocess(target_side, PreprocScheme::LangCodedForced, reg), p.source);
      EXPECT_EQ(postprocess(apply_johnson(units, p.tgt_lang), PreprocScheme::TargetTokenOnly, reg),
                p.source);
      const auto tagged = annotate_factors(units, p.src_lang, p.tgt_lang, reg);
      EXPECT_EQ(postprocess(surfaces(parse_factored(format_factored(tagged))),
                            PreprocScheme::Factored, reg),
                p.source);
      ++checked;
    }
  }
  EXPECT_GE(checked, 1000u);
}

TEST(Scheme, NamesRoundTrip) {
  for (auto s : {PreprocScheme::LangCodedForced, PreprocScheme::TargetTokenOnly,
                 PreprocScheme::Factored})
    EXPECT_EQ(parse_scheme(to_string(s)), s);
  EXPECT_THROW(parse_scheme("bpe"), ConfigError);
}
