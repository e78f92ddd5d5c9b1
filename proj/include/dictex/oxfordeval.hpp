#pragma once

// Blinded pairwise judging of candidate sentences against dictionary baseline
// sentences, and the win-rate / agreement statistics over those judgments.

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dictex/backends.hpp"
#include "dictex/corpus.hpp"
#include "dictex/retry.hpp"

namespace dictex::oxfordeval {

// 0: candidate preferred, 1: baseline preferred.
enum class Label : int { kCandidate = 0, kBaseline = 1 };

enum class Verdict { kPrefersA, kPrefersB, kInvalid };

inline constexpr std::string_view kImputedLoss = "imputed-loss";

struct EvalRecord {
  std::size_t pair_index = 0;
  std::string word_sense_id;
  std::string candidate;
  std::string baseline;
  bool flipped = false;
  std::string raw_verdict;
  std::optional<Label> label;  // empty when the verdict stayed invalid
  std::string judge_id;
  std::size_t requests = 0;
  std::string diagnostic;

  [[nodiscard]] bool imputed() const { return raw_verdict == kImputedLoss; }
};

struct WinRateSummary {
  std::size_t wins = 0;
  std::size_t losses = 0;
  std::size_t invalids = 0;
  std::size_t imputed_losses = 0;
  double win_rate = 0.0;

  [[nodiscard]] std::size_t total() const { return wins + losses + invalids + imputed_losses; }
};

/// Judge prompt template with placeholders {word}, {definition}, {POS},
/// {output_a}, {output_b}. Construction validates that all are present.
class EvalTemplate {
 public:
  explicit EvalTemplate(std::string text);

  static EvalTemplate builtin();
  static EvalTemplate from_file(const std::string& path);

  [[nodiscard]] std::string render(const corpus::WordSense& sense, std::string_view output_a,
                                   std::string_view output_b) const;

 private:
  std::string text_;
};

std::string build_eval_prompt(const corpus::WordSense& sense, std::string_view output_a,
                              std::string_view output_b);

/// Per-pair coin flips derived from a run seed. Each pair's flip depends only
/// on (seed, pair_index), so evaluation order cannot disturb it.
class PresentationRng {
 public:
  explicit PresentationRng(std::uint64_t seed) : seed_(seed) {}

  [[nodiscard]] bool flipped(std::size_t pair_index) const;
  [[nodiscard]] std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

bool assign_presentation(std::size_t pair_index, const PresentationRng& rng);

/// Case-insensitive containment of "output (a)" / "output (b)"; both or
/// neither is invalid.
Verdict parse_verdict(std::string_view raw);

/// Maps a slot verdict back to a label given where the candidate sat. When
/// flipped is false the baseline is in slot (a).
std::optional<Label> unflip(Verdict verdict, bool flipped);

/// Inverse of unflip for valid labels.
Verdict flip(Label label, bool flipped);

struct JudgeOptions {
  backends::GenParams params{.temperature = 0.0, .top_p = 1.0, .top_k = 500, .max_tokens = 16};
  std::size_t invalid_retries = 2;
  BackoffPolicy backoff;
};

EvalRecord evaluate_pair(std::size_t pair_index, const corpus::WordSense& sense, std::string_view candidate,
                         std::string_view baseline, backends::ChatBackend& judge, const PresentationRng& rng,
                         const JudgeOptions& options = {}, const EvalTemplate& tmpl = EvalTemplate::builtin(),
                         const Sleeper& sleep = real_sleeper());

/// Throws Error(kEmptyRun) when no record has a valid label.
WinRateSummary win_rate(const std::vector<EvalRecord>& records);

/// human_labels: pair id -> consensus label. Judge records are matched by
/// word_sense_id; invalid judge labels count as disagreements. Throws
/// Error(kUnmatchedPairs) when a human pair has no judge record.
double agreement_rate(const std::vector<EvalRecord>& judge_records,
                      const std::map<std::string, Label>& human_labels);

nlohmann::json to_json(const EvalRecord& record);
EvalRecord eval_record_from_json(const nlohmann::json& j);
nlohmann::json to_json(const WinRateSummary& summary);

}  // namespace dictex::oxfordeval
