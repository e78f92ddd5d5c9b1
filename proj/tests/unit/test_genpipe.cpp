#include <fstream>

#include <gtest/gtest.h>

#include "dictex/corpus.hpp"
#include "dictex/error.hpp"
#include "dictex/genpipe.hpp"
#include "dictex/io.hpp"
#include "dictex/mock_backends.hpp"

using namespace dictex;
using namespace dictex::genpipe;
using backends::BackendError;
using backends::BackendErrorKind;
using backends::ScriptStep;

namespace {

corpus::WordSense airstrip() {
  corpus::WordSense s;
  s.surface_word = "airstrip";
  s.lemma = "airstrip";
  s.pos = "noun";
  s.definition = "a strip of ground set aside for the take-off and landing of aircraft.";
  s.id = corpus::sense_id(s.lemma, s.pos, s.definition);
  s.examples = {"The site has its own airstrip and light aircraft service, and its own small marina."};
  return s;
}

std::string task_section(const std::string& prompt) { return prompt.substr(prompt.rfind("Human:")); }

const Sleeper kNoSleep = [](std::chrono::milliseconds) {};

}  // namespace

TEST(GenerationPrompt, AirstripTaskMatchesExemplarBlock) {
  GenConfig c;
  const auto prompt = build_generation_prompt(airstrip(), c);
  const auto task = task_section(prompt);
  EXPECT_NE(task.find("construct one sentence that illustrates the definition of the word \"airstrip\""),
            std::string::npos);
  EXPECT_NE(task.find("<definition>\na strip of ground set aside for the take-off and landing of aircraft.\n</definition>"),
            std::string::npos);
  EXPECT_NE(task.find("<part-of-speech>\nNoun\n</part-of-speech>"), std::string::npos);
  // The exemplar is fixed and precedes the task.
  EXPECT_LT(prompt.find("<sentence>The site has its own airstrip"), prompt.rfind("Human:"));
}

TEST(GenerationPrompt, DefOnlyDropsPosBlockOnly) {
  GenConfig both;
  GenConfig def_only;
  def_only.inputs = InputMode::kDefOnly;
  const auto a = task_section(build_generation_prompt(airstrip(), both));
  const auto b = task_section(build_generation_prompt(airstrip(), def_only));
  EXPECT_EQ(b.find("<part-of-speech>"), std::string::npos);
  EXPECT_NE(b.find("<definition>"), std::string::npos);
  const std::string pos_block = "<part-of-speech>\nNoun\n</part-of-speech>\n";
  auto expected = a;
  expected.erase(expected.find(pos_block), pos_block.size());
  EXPECT_EQ(b, expected);
  // The exemplar keeps both blocks.
  EXPECT_NE(build_generation_prompt(airstrip(), def_only).find("<part-of-speech>"), std::string::npos);
}

TEST(GenerationPrompt, PosOnlyDropsDefinitionBlock) {
  GenConfig c;
  c.inputs = InputMode::kPosOnly;
  const auto task = task_section(build_generation_prompt(airstrip(), c));
  EXPECT_EQ(task.find("<definition>"), std::string::npos);
  EXPECT_NE(task.find("<part-of-speech>"), std::string::npos);
}

TEST(GenerationPrompt, BatchedRequestsCount) {
  GenConfig c;
  c.batching = Batching::kBatched;
  c.num_sentences = 5;
  const auto task = task_section(build_generation_prompt(airstrip(), c));
  EXPECT_NE(task.find("construct 5 sentences"), std::string::npos);
  EXPECT_EQ(task.find("one sentence"), std::string::npos);
}

TEST(GenerationPrompt, PlaceholdersInValuesAreNotExpanded) {
  auto s = airstrip();
  s.definition = "contains {word} literally";
  const auto task = task_section(build_generation_prompt(s, GenConfig{}));
  EXPECT_NE(task.find("contains {word} literally"), std::string::npos);
}

TEST(PromptTemplate, Validation) {
  EXPECT_THROW(PromptTemplate("no placeholder"), Error);
  EXPECT_THROW(PromptTemplate("{word} {?pos}unterminated"), Error);
  EXPECT_NO_THROW(PromptTemplate("{word}"));
}

TEST(PromptTemplate, ShippedFileMatchesBuiltin) {
  const auto from_file = PromptTemplate::from_file(DICTEX_TEMPLATES_DIR "/generation.txt");
  GenConfig c;
  EXPECT_EQ(from_file.render(airstrip(), c), PromptTemplate::builtin().render(airstrip(), c));
}

TEST(ParseResponse, Cases) {
  EXPECT_EQ(parse_generation_response("<sentence>The site has its own airstrip.</sentence>"),
            (std::vector<std::string>{"The site has its own airstrip."}));
  EXPECT_TRUE(parse_generation_response("Sure! Here is a sentence.").empty());
  EXPECT_EQ(parse_generation_response("Here you go:\n<sentence> One. </sentence>\nand also\n<sentence>Two.</sentence> bye"),
            (std::vector<std::string>{"One.", "Two."}));
  EXPECT_EQ(parse_generation_response("<sentence>broken <sentence>Fine.</sentence>"),
            (std::vector<std::string>{"Fine."}));
  EXPECT_TRUE(parse_generation_response("<sentence>   </sentence><sentence>unterminated").empty());
}

TEST(GenerateCandidates, HappyPathOneByOne) {
  backends::ScriptedChatBackend chat({ScriptStep{"<sentence>The airstrip was busy.</sentence>", std::nullopt}});
  GenConfig c;
  auto set = generate_candidates(airstrip(), c, chat, PromptTemplate::builtin(), kNoSleep);
  EXPECT_EQ(set.candidates.size(), 5u);
  EXPECT_EQ(set.attempts, 5u);
  EXPECT_EQ(chat.call_count(), set.attempts);
  EXPECT_FALSE(set.imputed);
}

TEST(GenerateCandidates, CandidatesKeepRequestOrder) {
  std::vector<ScriptStep> steps;
  for (int i = 0; i < 5; ++i) steps.push_back({"<sentence>s" + std::to_string(i) + "</sentence>", std::nullopt});
  backends::ScriptedChatBackend chat(steps);
  auto set = generate_candidates(airstrip(), GenConfig{}, chat, PromptTemplate::builtin(), kNoSleep);
  EXPECT_EQ(set.candidates, (std::vector<std::string>{"s0", "s1", "s2", "s3", "s4"}));
}

TEST(GenerateCandidates, AlwaysRefusingImputes) {
  backends::ScriptedChatBackend chat({ScriptStep{std::nullopt, BackendError{BackendErrorKind::kRefusal, "no", {}, 0}}});
  GenConfig c;
  c.max_retries = 10;
  auto set = generate_candidates(airstrip(), c, chat, PromptTemplate::builtin(), kNoSleep);
  EXPECT_EQ(set.candidates, std::vector<std::string>(5, ""));
  EXPECT_TRUE(set.imputed);
  EXPECT_EQ(set.failures, 11u);
  EXPECT_EQ(set.attempts, 11u);
  EXPECT_EQ(chat.call_count(), set.attempts);
}

TEST(GenerateCandidates, FailuresCountAcrossSlots) {
  // ok, fail, ok, fail, ok... with one retry allowed the second failure abandons.
  backends::ScriptedChatBackend chat({{"<sentence>a</sentence>", std::nullopt},
                                      {"no tags", std::nullopt},
                                      {"<sentence>b</sentence>", std::nullopt},
                                      {"no tags", std::nullopt},
                                      {"<sentence>c</sentence>", std::nullopt}});
  GenConfig c;
  c.max_retries = 1;
  auto set = generate_candidates(airstrip(), c, chat, PromptTemplate::builtin(), kNoSleep);
  EXPECT_TRUE(set.imputed);
  EXPECT_EQ(set.candidates, std::vector<std::string>(5, ""));
  EXPECT_EQ(set.attempts, 4u);
  c.max_retries = 2;
  backends::ScriptedChatBackend chat2({{"<sentence>a</sentence>", std::nullopt},
                                       {"no tags", std::nullopt},
                                       {"<sentence>b</sentence>", std::nullopt},
                                       {"no tags", std::nullopt},
                                       {"<sentence>c</sentence>", std::nullopt}});
  auto ok = generate_candidates(airstrip(), c, chat2, PromptTemplate::builtin(), kNoSleep);
  EXPECT_FALSE(ok.imputed);
  EXPECT_EQ(ok.candidates, (std::vector<std::string>{"a", "b", "c", "c", "c"}));
  EXPECT_EQ(ok.failures, 2u);
  EXPECT_EQ(ok.attempts, 7u);
}

TEST(GenerateCandidates, BatchedShortResponseIsOneFailure) {
  backends::ScriptedChatBackend chat(
      {{"<sentence>a</sentence><sentence>b</sentence>", std::nullopt},
       {"<sentence>1</sentence><sentence>2</sentence><sentence>3</sentence><sentence>4</sentence><sentence>5</sentence>"
        "<sentence>6</sentence>",
        std::nullopt}});
  GenConfig c;
  c.batching = Batching::kBatched;
  auto set = generate_candidates(airstrip(), c, chat, PromptTemplate::builtin(), kNoSleep);
  EXPECT_EQ(set.candidates, (std::vector<std::string>{"1", "2", "3", "4", "5"}));
  EXPECT_EQ(set.failures, 1u);
  EXPECT_EQ(set.attempts, 2u);
  EXPECT_EQ(chat.call_count(), 2u);
}

TEST(GenerateCandidates, TransportErrorsBackOffSeparately) {
  backends::ScriptedChatBackend chat({{std::nullopt, BackendError{BackendErrorKind::kRateLimited, "slow", {}, 429}},
                                      {std::nullopt, BackendError{BackendErrorKind::kTimeout, "late", {}, 504}},
                                      {"<sentence>x</sentence>", std::nullopt}});
  GenConfig c;
  c.num_sentences = 2;
  std::vector<std::chrono::milliseconds> waits;
  auto set = generate_candidates(airstrip(), c, chat, PromptTemplate::builtin(), [&](auto d) { waits.push_back(d); });
  EXPECT_FALSE(set.imputed);
  EXPECT_EQ(set.failures, 0u);
  EXPECT_EQ(set.attempts, 2u);
  EXPECT_EQ(set.transport_retries, 2u);
  EXPECT_EQ(chat.call_count(), set.attempts + set.transport_retries);
  EXPECT_EQ(waits.size(), 2u);
}

TEST(GenerateCandidates, ExhaustedTransportBudgetAbandons) {
  backends::ScriptedChatBackend chat({{std::nullopt, BackendError{BackendErrorKind::kTransport, "down", {}, 0}}});
  auto set = generate_candidates(airstrip(), GenConfig{}, chat, PromptTemplate::builtin(), kNoSleep);
  EXPECT_TRUE(set.imputed);
  EXPECT_EQ(set.candidates.size(), 5u);
  EXPECT_EQ(chat.call_count(), 6u);
  EXPECT_FALSE(set.diagnostic.empty());
}

TEST(GenConfig, Validation) {
  GenConfig c;
  c.num_sentences = 0;
  EXPECT_THROW(c.validate(), Error);
  c.num_sentences = 6;
  EXPECT_THROW(c.validate(), Error);
  c.num_sentences = 1;
  c.max_retries = -1;
  EXPECT_THROW(c.validate(), Error);
}

TEST(GenerateAll, ParallelMatchesSequential) {
  std::vector<corpus::WordSense> senses;
  for (int i = 0; i < 20; ++i) {
    auto s = airstrip();
    s.surface_word = "word" + std::to_string(i);
    s.id = corpus::sense_id(s.surface_word, s.pos, s.definition);
    senses.push_back(s);
  }
  GenConfig c;
  c.num_sentences = 3;
  auto g1 = backends::make_tagged_generator(0.2, 3);
  auto g2 = backends::make_tagged_generator(0.2, 3);
  auto seq = generate_all(senses, c, *g1, PromptTemplate::builtin(), 1, kNoSleep);
  auto par = generate_all(senses, c, *g2, PromptTemplate::builtin(), 8, kNoSleep);
  ASSERT_EQ(seq.size(), par.size());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    EXPECT_EQ(to_json(seq[i]), to_json(par[i]));
    EXPECT_EQ(seq[i].word_sense_id, senses[i].id);
    EXPECT_EQ(candidate_set_from_json(to_json(seq[i])).candidates, seq[i].candidates);
  }
  EXPECT_EQ(g1->call_count(), g2->call_count());
}
