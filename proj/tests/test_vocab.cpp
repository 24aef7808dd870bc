#include <gtest/gtest.h>

#include <filesystem>

#include "desknmt/vocab.hpp"

using namespace desknmt;

namespace {

const LanguageRegistry& langs() {
  static const LanguageRegistry r{"de", "en", "nl"};
  return r;
}

}  // namespace

TEST(Vocabulary, SpecialsComeFirst) {
  const Vocabulary v;
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.token(kPad), "<pad>");
  EXPECT_EQ(v.token(kUnk), "<unk>");
  EXPECT_EQ(v.token(kBos), "<s>");
  EXPECT_EQ(v.token(kEos), "</s>");
  EXPECT_THROW(Vocabulary(std::vector<std::string>{"a", "b", "c", "d"}), DataError);
}

TEST(Vocabulary, FrequencyThenLexicographicOrder) {
  const auto v = build_vocab({{"b", "a", "c", "b"}, {"c", "d"}});
  // b:2 c:2 a:1 d:1
  EXPECT_EQ(v.entries(), (std::vector<std::string>{"<pad>", "<unk>", "<s>", "</s>", "b", "c", "a", "d"}));
  EXPECT_EQ(build_vocab({{"b", "a", "c", "b"}, {"c", "d"}}, 2).size(), 6u);
  EXPECT_THROW(build_vocab({}), DataError);
}

TEST(Vocabulary, UnknownMapsToUnk) {
  const auto v = build_vocab({{"x"}});
  EXPECT_EQ(v.ids({"x", "y"}), (std::vector<int>{4, kUnk}));
  EXPECT_EQ(v.tokens({4, kEos}), (Tokens{"x", "</s>"}));
  EXPECT_THROW(v.token(99), DataError);
}

TEST(Vocabulary, SaveLoadRoundTrip) {
  const auto path = (std::filesystem::temp_directory_path() / "desknmt_vocab.txt").string();
  const auto v = build_vocab({{"de_a", "en_b", "<en>", "x y"}});
  save_vocab(v, path);
  EXPECT_EQ(load_vocab(path), v);
  write_lines(path, {"<pad>", "<unk>", "<s>", "</s>", "a", "a"});
  EXPECT_THROW(load_vocab(path), DataError);
}

TEST(Partition, LangCodedByPrefix) {
  const auto v = build_vocab({{"de_a", "de_b", "en_a", "nl_c", "<en>", "en__", "fr_x"}});
  const auto p = language_partition(v, PreprocScheme::LangCodedForced, langs());
  EXPECT_EQ(p.by_lang.at(LanguageCode("de")).size(), 2u);
  EXPECT_EQ(p.by_lang.at(LanguageCode("en")).size(), 1u);
  EXPECT_EQ(p.by_lang.at(LanguageCode("nl")).size(), 1u);
  // 4 specials + <en> + en__ + fr_x
  EXPECT_EQ(p.neutral.size(), 7u);
  EXPECT_EQ(p.warnings, 1u);
  EXPECT_EQ(p.language_of(v.id("nl_c")), LanguageCode("nl"));
  EXPECT_EQ(p.language_of(v.id("<en>")), std::nullopt);
}

TEST(Partition, OccurrenceBasedSchemesNeedTheMap) {
  const auto v = build_vocab({{"haus", "house", "hotel", "2en"}});
  EXPECT_THROW(language_partition(v, PreprocScheme::TargetTokenOnly, langs()), ConfigError);
  OccurrenceMap occ;
  record_occurrences(occ, {"haus", "hotel"}, LanguageCode("de"));
  record_occurrences(occ, {"house", "hotel"}, LanguageCode("en"));
  const auto p = language_partition(v, PreprocScheme::TargetTokenOnly, langs(), &occ);
  EXPECT_EQ(p.by_lang.at(LanguageCode("de")), (std::set<int>{v.id("haus")}));
  EXPECT_EQ(p.by_lang.at(LanguageCode("en")), (std::set<int>{v.id("house")}));
  EXPECT_TRUE(p.neutral.count(v.id("hotel")));  // shared surface
  EXPECT_TRUE(p.neutral.count(v.id("2en")));
}

TEST(Mask, AllowsSpecialsTargetEntriesAndStartWord) {
  const auto v = build_vocab({{"de_a", "de_b", "en_a", "en__", "de__", "<en>"}});
  const auto p = language_partition(v, PreprocScheme::LangCodedForced, langs());
  const Mask m = filter_mask(v, p, LanguageCode("en"));
  EXPECT_EQ(m.size(), v.size());
  // 4 specials + en_a + en__
  EXPECT_EQ(count_allowed(m), 6u);
  EXPECT_TRUE(m[static_cast<std::size_t>(v.id("en_a"))]);
  EXPECT_TRUE(m[static_cast<std::size_t>(v.id("en__"))]);
  EXPECT_FALSE(m[static_cast<std::size_t>(v.id("de_a"))]);
  EXPECT_FALSE(m[static_cast<std::size_t>(v.id("<en>"))]);
  EXPECT_THROW(filter_mask(v, p, LanguageCode("nl")), DataError);
}
