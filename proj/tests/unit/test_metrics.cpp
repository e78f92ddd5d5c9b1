#include <algorithm>
#include <random>

#include <gtest/gtest.h>

#include "dictex/error.hpp"
#include "dictex/metrics.hpp"
#include "dictex/mock_backends.hpp"

using namespace dictex;
using namespace dictex::metrics;

namespace {

corpus::WordSense sense(const std::string& id, const std::string& word, const std::string& lemma) {
  corpus::WordSense s;
  s.id = id;
  s.surface_word = word;
  s.lemma = lemma;
  s.pos = "noun";
  s.definition = "d" + id;
  s.examples = {"x"};
  return s;
}

oxfordeval::EvalRecord record(const std::string& id, oxfordeval::Label label, const std::string& candidate) {
  oxfordeval::EvalRecord r;
  r.word_sense_id = id;
  r.label = label;
  r.candidate = candidate;
  r.baseline = "base line";
  return r;
}

}  // namespace

TEST(WordCount, Cases) {
  EXPECT_EQ(word_count("The cat sat."), 3u);
  EXPECT_EQ(word_count("  a  b "), 2u);
  EXPECT_EQ(word_count(""), 0u);
  EXPECT_EQ(word_count("\tone\ntwo"), 2u);
  for (std::string s : {"x", "a b c", " lead", "trail "}) EXPECT_EQ(word_count(s), word_count(s + "  "));
}

TEST(SyllableCount, Cases) {
  EXPECT_EQ(syllable_count("cat"), 1u);
  EXPECT_EQ(syllable_count("ache"), 1u);
  EXPECT_EQ(syllable_count("medication"), 4u);
  EXPECT_EQ(syllable_count("the"), 1u);
  EXPECT_EQ(syllable_count("rhythm"), 1u);
  EXPECT_EQ(syllable_count("Tree"), 1u);
  EXPECT_EQ(syllable_count("shh"), 1u);
  EXPECT_EQ(syllable_count("beautiful,"), 3u);
}

TEST(Fkgl, HandComputed) {
  EXPECT_NEAR(fkgl("The cat sat on the mat."), -1.45, 1e-9);
  EXPECT_NEAR(fkgl("cat"), -3.40, 1e-9);
  EXPECT_THROW(fkgl("   "), Error);
}

TEST(Fkgl, MonotoneInLengthAndDensity) {
  EXPECT_LT(fkgl("cat sat"), fkgl("cat sat mat"));
  EXPECT_LT(fkgl("cat sat mat"), fkgl("cat sat rabbit"));
}

TEST(Summarize, PopulationSd) {
  auto s = summarize({"a b", "a b c d"});
  EXPECT_EQ(s.n, 2u);
  EXPECT_DOUBLE_EQ(s.words_avg, 3.0);
  EXPECT_DOUBLE_EQ(s.words_sd, 1.0);
}

TEST(Summarize, IdenticalSentencesZeroSd) {
  auto s = summarize(std::vector<std::string>(10, "The cat sat on the mat."));
  EXPECT_DOUBLE_EQ(s.words_sd, 0.0);
  EXPECT_NEAR(s.fkgl_sd, 0.0, 1e-12);
  EXPECT_NEAR(s.fkgl_avg, -1.45, 1e-9);
}

TEST(Summarize, EmptiesExcludedAndCounted) {
  auto s = summarize({"", "a b", " "});
  EXPECT_EQ(s.n, 1u);
  EXPECT_EQ(s.excluded_empty, 2u);
  EXPECT_THROW(summarize({"", ""}), Error);
  EXPECT_THROW(summarize({}), Error);
}

TEST(Summarize, PermutationInvariant) {
  std::vector<std::string> xs{"one", "one two three", "a medication for aches", "x y", "longer sentence here now"};
  auto a = summarize(xs);
  std::mt19937 g(3);
  std::shuffle(xs.begin(), xs.end(), g);
  auto b = summarize(xs);
  EXPECT_NEAR(a.words_avg, b.words_avg, 1e-12);
  EXPECT_NEAR(a.words_sd, b.words_sd, 1e-12);
  EXPECT_NEAR(a.fkgl_avg, b.fkgl_avg, 1e-12);
  EXPECT_NEAR(a.fkgl_sd, b.fkgl_sd, 1e-12);
}

TEST(Subgroups, Polysemy) {
  std::vector<corpus::WordSense> senses{sense("1", "bank", "bank"), sense("2", "bank", "bank"), sense("3", "cat", "cat")};
  std::vector<oxfordeval::EvalRecord> records{record("1", oxfordeval::Label::kCandidate, "a bank"),
                                              record("2", oxfordeval::Label::kBaseline, "the bank"),
                                              record("3", oxfordeval::Label::kCandidate, "a cat")};
  auto groups = subgroup_split(senses, records, nullptr);
  EXPECT_EQ(groups.at("polysemous").n, 2u);
  EXPECT_EQ(groups.at("monosemous").n, 1u);
  EXPECT_DOUBLE_EQ(groups.at("polysemous").win_rate->win_rate, 0.5);
  EXPECT_FALSE(groups.contains("single_token"));
}

TEST(Subgroups, TokenCount) {
  backends::MlmScript script;
  script.pieces["zymurgy"] = {"zy", "murgy"};
  backends::ScriptedMlmBackend mlm(script);
  std::vector<corpus::WordSense> senses{sense("1", "cat", "cat"), sense("2", "zymurgy", "zymurgy")};
  std::vector<oxfordeval::EvalRecord> records{record("1", oxfordeval::Label::kCandidate, "a cat"),
                                              record("2", oxfordeval::Label::kCandidate, "zymurgy rules")};
  auto groups = subgroup_split(senses, records, &mlm);
  EXPECT_EQ(groups.at("single_token").n, 1u);
  EXPECT_EQ(groups.at("multi_token").n, 1u);
  EXPECT_TRUE(to_json(groups.at("multi_token")).contains("win_rate"));
}
