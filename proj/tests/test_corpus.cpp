#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "desknmt/corpus.hpp"
#include "support.hpp"

using namespace desknmt;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("desknmt_corpus_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(LanguageCode, AcceptsLowercaseTwoToEight) {
  EXPECT_NO_THROW(LanguageCode("de"));
  EXPECT_NO_THROW(LanguageCode("abcdefgh"));
  EXPECT_THROW(LanguageCode("d"), DataError);
  EXPECT_THROW(LanguageCode("De"), DataError);
  EXPECT_THROW(LanguageCode("de_"), DataError);
  EXPECT_THROW(LanguageCode("abcdefghi"), DataError);
}

TEST(LanguageRegistry, IndexFollowsInsertionOrder) {
  LanguageRegistry r{"nl", "de", "en"};
  EXPECT_EQ(r.index_of(LanguageCode("nl")), 0u);
  EXPECT_EQ(r.index_of(LanguageCode("en")), 2u);
  EXPECT_THROW(r.add(LanguageCode("de")), DataError);
  EXPECT_THROW(r.require(LanguageCode("it")), DataError);
  EXPECT_TRUE(r.contains("de"));
  EXPECT_FALSE(r.contains("ro"));
}

TEST(Tokens, SplitAndJoin) {
  EXPECT_EQ(split_tokens("  a\tb  c\r"), (Tokens{"a", "b", "c"}));
  EXPECT_TRUE(split_tokens("   ").empty());
  EXPECT_EQ(join_tokens({"a", "b"}), "a b");
}

TEST(Tokens, Utf8Validation) {
  EXPECT_TRUE(valid_utf8("gr\xc3\xbc\xc3\x9f"));
  EXPECT_TRUE(valid_utf8("\xe2\x82\xac"));
  EXPECT_FALSE(valid_utf8("\xc3"));
  EXPECT_FALSE(valid_utf8("\xff"));
  EXPECT_FALSE(valid_utf8("\xe2\x28\xa1"));
}

TEST(LoadParallel, PairsLinesAndDropsEmpty) {
  const auto dir = scratch("load");
  write_lines((dir / "a.txt").string(), {"x y", "", "z"});
  write_lines((dir / "b.txt").string(), {"1", "2", "3 4"});
  const auto c = load_parallel((dir / "a.txt").string(), (dir / "b.txt").string(),
                               LanguageCode("de"), LanguageCode("en"));
  ASSERT_EQ(c.corpus.size(), 2u);
  EXPECT_EQ(c.dropped, 1u);
  EXPECT_EQ(c.corpus.pairs[1].target, (Tokens{"3", "4"}));
  EXPECT_EQ(c.corpus.pairs[0].src_lang, LanguageCode("de"));
}

TEST(LoadParallel, LineCountMismatchNamesBothFiles) {
  const auto dir = scratch("mismatch");
  write_lines((dir / "a.txt").string(), {"x", "y"});
  write_lines((dir / "b.txt").string(), {"1"});
  try {
    load_parallel((dir / "a.txt").string(), (dir / "b.txt").string(), LanguageCode("de"),
                  LanguageCode("en"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("a.txt"), std::string::npos);
    EXPECT_NE(msg.find("b.txt"), std::string::npos);
    EXPECT_EQ(e.kind(), "data");
  }
}

TEST(LoadParallel, InvalidUtf8ReportsLine) {
  const auto dir = scratch("utf8");
  write_lines((dir / "a.txt").string(), {"ok", "bad \xff"});
  write_lines((dir / "b.txt").string(), {"1", "2"});
  try {
    load_parallel((dir / "a.txt").string(), (dir / "b.txt").string(), LanguageCode("de"),
                  LanguageCode("en"));
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos);
  }
}

TEST(LoadParallel, MissingFile) {
  EXPECT_THROW(load_parallel("/nonexistent/a", "/nonexistent/b", LanguageCode("de"),
                             LanguageCode("en")),
               DataError);
}

TEST(Mixture, WriteReadRoundTrip) {
  const auto dir = scratch("mixture");
  const auto parts = synth_corpus(desknmt::testing::small_spec(5), 3);
  const auto mix = build_mixture(parts, MixtureStrategy::Zero4L, desknmt::testing::small_roles());
  write_mixture(mix, (dir / "m").string());
  const auto back = read_mixture((dir / "m").string());
  EXPECT_EQ(back.pairs, mix.pairs);
}

TEST(Mixture, RequiredDirectionsPerStrategy) {
  const auto r = desknmt::testing::small_roles();
  EXPECT_EQ(required_directions(MixtureStrategy::Direct, r), (std::vector<std::string>{"aa-bb"}));
  EXPECT_EQ(required_directions(MixtureStrategy::Zero2L, r),
            (std::vector<std::string>{"aa-pp", "pp-bb"}));
  EXPECT_EQ(required_directions(MixtureStrategy::Zero4L, r),
            (std::vector<std::string>{"aa-pp", "pp-bb", "pp-aa", "bb-pp"}));
  EXPECT_EQ(required_directions(MixtureStrategy::Zero6L, r),
            (std::vector<std::string>{"aa-pp", "pp-bb", "pp-aa", "bb-pp", "pp-pp", "bb-bb"}));
  EXPECT_EQ(required_directions(MixtureStrategy::BackTransAugmented, r).size(), 8u);
}

TEST(Mixture, SizesAddUpAndZeroShotDirectionIsAbsent) {
  const auto parts = synth_corpus(desknmt::testing::small_spec(7), 3);
  const auto r = desknmt::testing::small_roles();
  EXPECT_EQ(build_mixture(parts, MixtureStrategy::Zero2L, r).size(), 14u);
  const auto z6 = build_mixture(parts, MixtureStrategy::Zero6L, r);
  EXPECT_EQ(z6.size(), 42u);
  for (const auto& p : z6.pairs)
    EXPECT_FALSE(p.src_lang == r.source && p.tgt_lang == r.target);
}

TEST(Mixture, MissingDirectionIsDataError) {
  auto parts = synth_corpus(desknmt::testing::small_spec(3), 3);
  parts.erase("pp-bb");
  EXPECT_THROW(build_mixture(parts, MixtureStrategy::Zero2L, desknmt::testing::small_roles()),
               DataError);
}

TEST(Mixture, StrategyNames) {
  for (auto s : {MixtureStrategy::Direct, MixtureStrategy::Zero2L, MixtureStrategy::Zero4L,
                 MixtureStrategy::Zero6L, MixtureStrategy::BackTransAugmented})
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  EXPECT_THROW(parse_strategy("zero8l"), ConfigError);
}

TEST(Corpus, LengthFilterAndMirror) {
  ParallelCorpus c;
  c.pairs.push_back({{"a", "b", "c"}, {"x"}, LanguageCode("de"), LanguageCode("en")});
  c.pairs.push_back({{"a"}, {"x", "y"}, LanguageCode("de"), LanguageCode("en")});
  EXPECT_EQ(length_filter(c, 2).size(), 1u);
  EXPECT_EQ(length_filter(c, 3).size(), 2u);
  const auto m = mirror(c);
  EXPECT_EQ(m.pairs[0].source, (Tokens{"x"}));
  EXPECT_EQ(m.pairs[0].src_lang, LanguageCode("en"));
  EXPECT_EQ(mirror(m).pairs, c.pairs);
}

TEST(Batching, PartitionIsDeterministicAndComplete) {
  const auto a = batch_indices(23, 5, 42);
  const auto b = batch_indices(23, 5, 42);
  EXPECT_EQ(a, b);
  ASSERT_EQ(a.size(), 5u);
  std::multiset<std::size_t> seen;
  for (const auto& batch : a) {
    EXPECT_LE(batch.size(), 5u);
    seen.insert(batch.begin(), batch.end());
  }
  std::multiset<std::size_t> all;
  for (std::size_t i = 0; i < 23; ++i) all.insert(i);
  EXPECT_EQ(seen, all);
  EXPECT_NE(batch_indices(23, 5, 43), a);
  EXPECT_THROW(batch_indices(3, 0, 1), ConfigError);
}

TEST(Synthetic, TranslationsAreExactAndLanguagesDisjoint) {
  const auto spec = desknmt::testing::small_spec(50);
  const SyntheticLexicon lex(spec);
  const auto parts = synth_corpus(spec, spec.seed);
  EXPECT_EQ(parts.size(), 9u);  // 6 directed pairs + 3 identities
  for (const auto& [label, corpus] : parts) {
    EXPECT_EQ(corpus.size(), 50u);
    for (const auto& p : corpus.pairs) {
      EXPECT_EQ(lex.translate(p.source, p.src_lang, p.tgt_lang), p.target) << label;
      EXPECT_GE(p.source.size(), 2u);
      EXPECT_LE(p.source.size(), 5u);
      for (const auto& t : p.source) EXPECT_EQ(lex.language_of(t), p.src_lang);
    }
  }
}

TEST(Synthetic, MirrorDirectionsShareSentences) {
  const auto parts = synth_corpus(desknmt::testing::small_spec(10), 5);
  EXPECT_EQ(mirror(parts.at("aa-pp")).pairs, parts.at("pp-aa").pairs);
}

TEST(Synthetic, SameSeedSameCorpus) {
  const auto spec = desknmt::testing::small_spec(10);
  EXPECT_EQ(synth_corpus(spec, 9).at("aa-bb").pairs, synth_corpus(spec, 9).at("aa-bb").pairs);
  EXPECT_NE(synth_corpus(spec, 9).at("aa-bb").pairs, synth_corpus(spec, 10).at("aa-bb").pairs);
}

TEST(Synthetic, SpecParsing) {
  const auto j = nlohmann::json::parse(
      R"({"languages": ["aa", {"code": "bb", "stem": "bu"}], "concepts": 4,
          "sentence_len": [1, 2], "pairs_per_direction": 3, "seed": 5})");
  const auto s = parse_synth_spec(j);
  EXPECT_EQ(s.languages.size(), 2u);
  EXPECT_EQ(s.languages[1].stem, "bu");
  EXPECT_EQ(s.max_len, 2);
  EXPECT_EQ(to_json(parse_synth_spec(to_json(s))), to_json(s));
  EXPECT_THROW(parse_synth_spec(nlohmann::json::parse(R"({"languages": ["aa"], "bogus": 1})")),
               ConfigError);
  EXPECT_THROW(parse_synth_spec(nlohmann::json::parse(R"({"concepts": 3})")), ConfigError);
}

TEST(Synthetic, OverlappingStemsRejected) {
  SynthSpec s = desknmt::testing::small_spec();
  s.languages[1].stem = "ka";
  EXPECT_THROW(SyntheticLexicon{s}, ConfigError);
}

TEST(Synthetic, ConceptLookup) {
  const SyntheticLexicon lex(desknmt::testing::small_spec());
  EXPECT_EQ(lex.concept_of(0, "ka7"), 7);
  EXPECT_EQ(lex.concept_of(0, "ka10"), std::nullopt);  // only 10 concepts
  EXPECT_EQ(lex.concept_of(0, "ka07"), std::nullopt);
  EXPECT_EQ(lex.concept_of(0, "po7"), std::nullopt);
  EXPECT_EQ(lex.language_of("bu3"), LanguageCode("bb"));
  EXPECT_EQ(lex.language_of("bu"), std::nullopt);
}
