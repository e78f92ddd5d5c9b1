#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "dictex/corpus.hpp"
#include "dictex/error.hpp"

using namespace dictex;
using namespace dictex::corpus;

namespace {

std::string record(const std::string& word, const std::string& lemma, int n_examples,
                   const std::string& definition = "let (someone) have or do something.",
                   const std::string& split = "validation") {
  nlohmann::json ex = nlohmann::json::array();
  for (int i = 0; i < n_examples; ++i) ex.push_back(word + " example " + std::to_string(i) + ".");
  return nlohmann::json{{"word", word},           {"lemma", lemma}, {"pos", "verb"},
                        {"definition", definition}, {"examples", ex}, {"split", split}}
      .dump();
}

ParseResult parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

WordSense sense(std::string word, std::string lemma, std::vector<std::string> examples) {
  WordSense s;
  s.surface_word = std::move(word);
  s.lemma = std::move(lemma);
  s.pos = "noun";
  s.definition = "def";
  s.id = sense_id(s.lemma, s.pos, s.definition + s.surface_word);
  s.examples = std::move(examples);
  return s;
}

}  // namespace

TEST(ParseDataset, SingleRecordKeepsExampleOrder) {
  auto r = parse(R"({"word":"allow","lemma":"allow","pos":"verb","definition":"d","examples":["c","a","b"],"split":"test"})");
  ASSERT_EQ(r.entries.size(), 1u);
  EXPECT_EQ(r.entries[0].examples, (std::vector<std::string>{"c", "a", "b"}));
  EXPECT_EQ(r.entries[0].split, Split::kTest);
  EXPECT_EQ(r.entries[0].line_number, 1u);
  EXPECT_TRUE(r.malformed.empty());
}

TEST(ParseDataset, EmptyStream) {
  auto r = parse("");
  EXPECT_TRUE(r.entries.empty());
  EXPECT_TRUE(r.malformed.empty());
  EXPECT_EQ(r.lines_read, 0u);
}

TEST(ParseDataset, MalformedLinesAreCollected) {
  std::string text;
  for (int i = 0; i < 100; ++i) {
    if (i == 17) {
      text += "{not json\n";
    } else if (i == 63) {
      text += R"({"word":"x","lemma":"x","pos":"n","definition":"d","examples":"oops","split":"test"})" "\n";
    } else {
      text += record("w" + std::to_string(i), "l" + std::to_string(i), 2) + "\n";
    }
  }
  auto r = parse(text);
  EXPECT_EQ(r.entries.size(), 98u);
  ASSERT_EQ(r.malformed.size(), 2u);
  EXPECT_EQ(r.malformed[0].line_number, 18u);
  EXPECT_EQ(r.malformed[1].line_number, 64u);
  EXPECT_THROW(check_malformed_ratio(r), Error);
}

TEST(ParseDataset, OnePercentMalformedIsTolerated) {
  std::string text;
  for (int i = 0; i < 100; ++i) text += (i == 5 ? std::string("[]") : record("w", "l", 1)) + "\n";
  auto r = parse(text);
  EXPECT_EQ(r.malformed.size(), 1u);
  EXPECT_NO_THROW(check_malformed_ratio(r));
}

TEST(ParseDataset, RejectsMissingFieldsAndUnknownSplit) {
  auto r = parse(R"({"word":" ","lemma":"l","pos":"n","definition":"d","examples":[],"split":"test"})" "\n"
                 R"({"word":"w","lemma":"l","pos":"n","definition":"d","examples":[],"split":"holdout"})" "\n"
                 R"({"word":"w","lemma":"l","definition":"d","examples":[],"split":"test"})" "\n");
  EXPECT_TRUE(r.entries.empty());
  EXPECT_EQ(r.malformed.size(), 3u);
}

TEST(SenseId, DeterministicAndNormalized) {
  EXPECT_EQ(sense_id("allow", "verb", "d"), sense_id("allow", " Verb ", "d"));
  EXPECT_NE(sense_id("allow", "verb", "d"), sense_id("allow", "noun", "d"));
  EXPECT_EQ(sense_id("a", "b", "c").size(), 16u);
}

TEST(DedupInflections, MostExamplesWins) {
  auto r = parse(record("allow", "allow", 5) + "\n" + record("allowing", "allow", 2) + "\n" +
                 record("allows", "allow", 1) + "\n" + record("allowed", "allow", 3) + "\n");
  auto d = dedup_inflections(r.entries);
  ASSERT_EQ(d.senses.size(), 1u);
  EXPECT_EQ(d.senses[0].surface_word, "allow");
  EXPECT_EQ(d.senses[0].examples.size(), 5u);
  EXPECT_EQ(d.senses[0].pos, "verb");
}

TEST(DedupInflections, TieGoesToSmallerSurfaceWord) {
  auto r = parse(record("runs", "run", 4) + "\n" + record("ran", "run", 4) + "\n");
  auto d = dedup_inflections(r.entries);
  ASSERT_EQ(d.senses.size(), 1u);
  EXPECT_EQ(d.senses[0].surface_word, "ran");
}

TEST(DedupInflections, SingletonIsIdentity) {
  auto r = parse(record("cat", "cat", 1, "a small feline."));
  auto d = dedup_inflections(r.entries);
  ASSERT_EQ(d.senses.size(), 1u);
  const auto& s = d.senses[0];
  EXPECT_EQ(s.surface_word, "cat");
  EXPECT_EQ(s.lemma, "cat");
  EXPECT_EQ(s.definition, "a small feline.");
  EXPECT_EQ(s.examples, r.entries[0].examples);
  EXPECT_EQ(s.id, sense_id("cat", "verb", "a small feline."));
}

TEST(DedupInflections, ZeroExampleGroupsDroppedAndCounted) {
  auto r = parse(record("empty", "empty", 0, "nothing") + "\n" + record("cat", "cat", 1, "feline") + "\n");
  auto d = dedup_inflections(r.entries);
  EXPECT_EQ(d.senses.size(), 1u);
  EXPECT_EQ(d.dropped_groups, 1u);
}

TEST(DedupInflections, SortedByIdAndConservesWinnerExamples) {
  std::string text;
  std::size_t winner_total = 0;
  for (int i = 0; i < 30; ++i) {
    text += record("w" + std::to_string(i), "l" + std::to_string(i % 10), 1 + i % 4, "def" + std::to_string(i % 10)) + "\n";
  }
  auto r = parse(text);
  auto d = dedup_inflections(r.entries);
  EXPECT_EQ(d.senses.size(), 10u);
  EXPECT_TRUE(std::is_sorted(d.senses.begin(), d.senses.end(),
                             [](const auto& a, const auto& b) { return a.id < b.id; }));
  for (int g = 0; g < 10; ++g) {
    std::size_t best = 0;
    for (const auto& e : r.entries) {
      if (e.lemma == "l" + std::to_string(g)) best = std::max(best, e.examples.size());
    }
    winner_total += best;
  }
  std::size_t total = 0;
  for (const auto& s : d.senses) total += s.examples.size();
  EXPECT_EQ(total, winner_total);
}

TEST(DedupInflections, SerializationIsDeterministic) {
  std::ifstream in(DICTEX_FIXTURES_DIR "/mini_dataset.jsonl");
  auto a = parse_dataset(in);
  std::ifstream in2(DICTEX_FIXTURES_DIR "/mini_dataset.jsonl");
  auto b = parse_dataset(in2);
  EXPECT_EQ(serialize_senses(dedup_inflections(a.entries).senses), serialize_senses(dedup_inflections(b.entries).senses));
}

TEST(Frequencies, AttachByLowercasedSurfaceWord) {
  std::istringstream table("allow\t120000\nALPHA\t3\n");
  auto t = parse_frequency_table(table);
  std::vector<WordSense> senses{sense("allow", "allow", {"x"}), sense("zymurgy", "zymurgy", {"y"}),
                                sense("Alpha", "alpha", {"z"})};
  auto out = attach_frequencies(senses, t);
  EXPECT_EQ(out[0].frequency, 120000u);
  EXPECT_FALSE(out[1].frequency.has_value());
  EXPECT_EQ(out[2].frequency, 3u);
  EXPECT_EQ(std::count_if(out.begin(), out.end(), [](const auto& s) { return s.frequency.has_value(); }), 2);
  out[0].frequency.reset();
  out[2].frequency.reset();
  EXPECT_EQ(out, senses);
}

TEST(Frequencies, MalformedLineThrows) {
  std::istringstream table("allow 12\n");
  EXPECT_THROW(parse_frequency_table(table), Error);
}

TEST(SplitStats, Arithmetic) {
  auto s = split_stats({sense("a", "a", {"1", "2", "3"}), sense("b", "b", {"1", "2", "3", "4", "5"})});
  EXPECT_EQ(s.word_senses, 2u);
  EXPECT_EQ(s.unique_words, 2u);
  EXPECT_EQ(s.unique_lemmas, 2u);
  EXPECT_DOUBLE_EQ(s.avg_examples, 4.0);
}

TEST(SplitStats, CaseInsensitiveCounting) {
  auto s = split_stats({sense("Dull", "dull", {"1"}), sense("dull", "dull", {"1"}), sense("dulled", "dull", {"1"})});
  EXPECT_EQ(s.word_senses, 3u);
  EXPECT_EQ(s.unique_words, 2u);
  EXPECT_EQ(s.unique_lemmas, 1u);
}

TEST(SplitStats, EmptyThrows) {
  try {
    split_stats({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptySplit);
  }
}

TEST(SelectBaseline, FirstExample) {
  EXPECT_EQ(select_baseline(sense("a", "a", {"A.", "B."})), "A.");
  EXPECT_EQ(select_baseline(sense("a", "a", {"only"})), "only");
  EXPECT_EQ(select_baseline(sense("a", "a", {"A.", "C.", "B."})), "A.");
  try {
    select_baseline(sense("a", "a", {}));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoExamples);
  }
}

TEST(SenseJson, RoundTrip) {
  auto s = sense("allow", "allow", {"x", "y"});
  s.frequency = 5;
  EXPECT_EQ(sense_from_json(to_json(s)), s);
  s.frequency.reset();
  EXPECT_EQ(sense_from_json(to_json(s)), s);
}

TEST(Split, ParseAliases) {
  EXPECT_EQ(parse_split("valid"), Split::kValidation);
  EXPECT_EQ(parse_split("Validation"), Split::kValidation);
  EXPECT_EQ(parse_split("train"), Split::kTrain);
  EXPECT_FALSE(parse_split("holdout").has_value());
}
