#pragma once

// Blinded two-annotator preference sessions: creation, durable label storage,
// consensus filtering, and the HTTP service the annotation UI talks to.
//
//   GET  /api/session/{id}/next?annotator=<id>
//   POST /api/session/{id}/label     {pair_id, annotator_id, choice}
//   GET  /api/session/{id}/progress

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dictex/corpus.hpp"
#include "dictex/oxfordeval.hpp"

namespace dictex::annotation {

struct AnnotationPair {
  std::string pair_id;
  std::string word;
  std::string pos;
  std::string definition;
  std::string output_a;
  std::string output_b;
  // Server-side only.
  bool flipped = false;
};

struct AnnotationRecord {
  std::string pair_id;
  std::string annotator_id;
  char choice = 'a';
  std::string timestamp;
};

struct PairSource {
  std::string pair_id;  // word_sense_id
  std::string candidate;
  std::string baseline;
};

struct SessionOptions {
  std::uint64_t seed = 0;
  // Uniform sample of this many pairs (seeded); all pairs when absent.
  std::optional<std::size_t> sample_size;
  // Explicit pair ids, in order; overrides sampling.
  std::vector<std::string> pair_ids;
};

class Session {
 public:
  /// Throws Error(kMismatchedInputs) when no pair can be formed or an
  /// explicit pair id has no candidate.
  static Session create(const std::vector<corpus::WordSense>& senses, const std::vector<PairSource>& sources,
                        const SessionOptions& options);

  static Session load(const std::filesystem::path& session_dir);
  void save(const std::filesystem::path& session_dir) const;

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] std::uint64_t seed() const { return seed_; }
  [[nodiscard]] const std::vector<AnnotationPair>& pairs() const { return pairs_; }
  [[nodiscard]] const AnnotationPair* find(const std::string& pair_id) const;

  /// What the UI receives: no source attribution, no flip flag.
  static nlohmann::json blinded_payload(const AnnotationPair& pair);

 private:
  std::string id_;
  std::uint64_t seed_ = 0;
  std::vector<AnnotationPair> pairs_;
  std::map<std::string, std::size_t> index_;
};

enum class SubmitStatus { kStored, kDuplicate };

struct SubmitResult {
  SubmitStatus status = SubmitStatus::kStored;
  AnnotationRecord record;
};

/// Append-only label log, replayed on construction. Submissions are
/// serialized and fsync'd before they are acknowledged.
class LabelStore {
 public:
  LabelStore(const Session& session, std::filesystem::path log_path);
  ~LabelStore();
  LabelStore(const LabelStore&) = delete;
  LabelStore& operator=(const LabelStore&) = delete;

  /// Throws Error(kUnknownPair), Error(kPrecondition) for a bad choice, or
  /// Error(kDuplicateSubmission) when the annotator already chose differently.
  /// Replaying the same choice returns the stored record.
  SubmitResult submit(const std::string& pair_id, const std::string& annotator_id, char choice);

  /// First pair in session order the annotator has not labeled.
  [[nodiscard]] const AnnotationPair* next_for(const std::string& annotator_id) const;

  [[nodiscard]] nlohmann::json progress() const;
  [[nodiscard]] std::vector<AnnotationRecord> records() const;

 private:
  const Session& session_;
  std::filesystem::path log_path_;
  int fd_ = -1;
  mutable std::mutex mutex_;
  std::vector<AnnotationRecord> records_;
  std::map<std::pair<std::string, std::string>, std::size_t> by_key_;
};

struct ConsensusResult {
  std::map<std::string, oxfordeval::Label> kept;
  std::size_t fully_annotated = 0;
  std::size_t excluded_incomplete = 0;
  double agreement = 0.0;
};

/// Pairs labeled by exactly two annotators are compared after un-flipping;
/// matching pairs are kept with their shared label.
ConsensusResult consensus_filter(const Session& session, const std::vector<AnnotationRecord>& records);

nlohmann::json to_json(const AnnotationRecord& record);
AnnotationRecord annotation_record_from_json(const nlohmann::json& j);

class Server {
 public:
  /// Sessions live under `sessions_root/<id>/`; `static_dir` (optional) holds
  /// the UI bundle.
  Server(std::filesystem::path sessions_root, std::optional<std::filesystem::path> static_dir);
  ~Server();

  void add_session(const std::string& id);

  /// Binds and serves until stop(). Returns false when binding fails.
  bool listen(const std::string& host, int port);
  /// Binds to an ephemeral port and returns it, serving on a background thread.
  int start_background(const std::string& host);
  void stop();

  LabelStore& store(const std::string& id);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace dictex::annotation
