#include "dictex/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "dictex/digest.hpp"
#include "dictex/error.hpp"
#include "dictex/hashing.hpp"
#include "dictex/io.hpp"

namespace dictex::annotation {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::string_view kSessionFile = "session.json";
constexpr std::string_view kLabelLog = "labels.log";

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

json pair_to_json(const AnnotationPair& p) {
  return json{{"pair_id", p.pair_id}, {"word", p.word},         {"pos", p.pos},        {"definition", p.definition},
              {"output_a", p.output_a}, {"output_b", p.output_b}, {"flipped", p.flipped}};
}

AnnotationPair pair_from_json(const json& j) {
  return AnnotationPair{j.at("pair_id").get<std::string>(),  j.at("word").get<std::string>(),
                        j.at("pos").get<std::string>(),      j.at("definition").get<std::string>(),
                        j.at("output_a").get<std::string>(), j.at("output_b").get<std::string>(),
                        j.at("flipped").get<bool>()};
}

}  // namespace

Session Session::create(const std::vector<corpus::WordSense>& senses, const std::vector<PairSource>& sources,
                        const SessionOptions& options) {
  std::map<std::string, const corpus::WordSense*> by_id;
  for (const auto& s : senses) by_id.emplace(s.id, &s);
  std::map<std::string, const PairSource*> source_by_id;
  for (const auto& s : sources) source_by_id.emplace(s.pair_id, &s);

  auto usable = [&](const PairSource& s) {
    return by_id.contains(s.pair_id) && !s.candidate.empty() && !s.baseline.empty();
  };

  std::vector<const PairSource*> chosen;
  if (!options.pair_ids.empty()) {
    std::set<std::string> seen;
    for (const auto& id : options.pair_ids) {
      auto it = source_by_id.find(id);
      if (it == source_by_id.end() || !usable(*it->second)) {
        throw Error(ErrorCode::kMismatchedInputs, "pair " + id + " has no candidate, baseline or sense");
      }
      if (seen.insert(id).second) chosen.push_back(it->second);
    }
  } else {
    for (const auto& s : sources) {
      if (usable(s)) chosen.push_back(&s);
    }
    if (options.sample_size && *options.sample_size < chosen.size()) {
      std::vector<std::pair<std::uint64_t, const PairSource*>> keyed;
      for (const auto* s : chosen) keyed.emplace_back(splitmix64(fnv1a64(s->pair_id, splitmix64(options.seed))), s);
      std::sort(keyed.begin(), keyed.end(), [](const auto& a, const auto& b) {
        return a.first != b.first ? a.first < b.first : a.second->pair_id < b.second->pair_id;
      });
      keyed.resize(*options.sample_size);
      chosen.clear();
      for (const auto& [key, s] : keyed) chosen.push_back(s);
    }
  }
  if (chosen.empty()) throw Error(ErrorCode::kMismatchedInputs, "no annotation pair could be formed");

  Session session;
  session.seed_ = options.seed;
  const oxfordeval::PresentationRng rng(options.seed);
  std::string digest_input = std::to_string(options.seed);
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    const auto& src = *chosen[i];
    const auto& sense = *by_id.at(src.pair_id);
    AnnotationPair p;
    p.pair_id = src.pair_id;
    p.word = sense.surface_word;
    p.pos = sense.pos;
    p.definition = sense.definition;
    p.flipped = rng.flipped(i);
    p.output_a = p.flipped ? src.candidate : src.baseline;
    p.output_b = p.flipped ? src.baseline : src.candidate;
    session.index_.emplace(p.pair_id, session.pairs_.size());
    session.pairs_.push_back(std::move(p));
    digest_input += '\x1f';
    digest_input += src.pair_id;
  }
  session.id_ = sha256_hex(digest_input).substr(0, 12);
  return session;
}

Session Session::load(const fs::path& session_dir) {
  json j;
  try {
    j = json::parse(read_file(session_dir / kSessionFile));
    Session session;
    session.id_ = j.at("id").get<std::string>();
    session.seed_ = j.at("seed").get<std::uint64_t>();
    for (const auto& p : j.at("pairs")) {
      session.index_.emplace(p.at("pair_id").get<std::string>(), session.pairs_.size());
      session.pairs_.push_back(pair_from_json(p));
    }
    return session;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kIo, (session_dir / kSessionFile).string() + ": " + e.what());
  }
}

void Session::save(const fs::path& session_dir) const {
  fs::create_directories(session_dir);
  json pairs = json::array();
  for (const auto& p : pairs_) pairs.push_back(pair_to_json(p));
  write_file_atomic(session_dir / kSessionFile, json{{"id", id_}, {"seed", seed_}, {"pairs", pairs}}.dump(2) + "\n");
}

const AnnotationPair* Session::find(const std::string& pair_id) const {
  auto it = index_.find(pair_id);
  return it == index_.end() ? nullptr : &pairs_[it->second];
}

json Session::blinded_payload(const AnnotationPair& pair) {
  return json{{"pair_id", pair.pair_id},
              {"word", pair.word},
              {"pos", pair.pos},
              {"definition", pair.definition},
              {"output_a", pair.output_a},
              {"output_b", pair.output_b}};
}

json to_json(const AnnotationRecord& record) {
  return json{{"pair_id", record.pair_id},
              {"annotator_id", record.annotator_id},
              {"choice", std::string(1, record.choice)},
              {"timestamp", record.timestamp}};
}

AnnotationRecord annotation_record_from_json(const json& j) {
  const auto choice = j.at("choice").get<std::string>();
  if (choice != "a" && choice != "b") throw Error(ErrorCode::kPrecondition, "choice must be 'a' or 'b'");
  return AnnotationRecord{j.at("pair_id").get<std::string>(), j.at("annotator_id").get<std::string>(), choice[0],
                          j.value("timestamp", "")};
}

LabelStore::LabelStore(const Session& session, fs::path log_path) : session_(session), log_path_(std::move(log_path)) {
  if (fs::exists(log_path_)) {
    std::ifstream in(log_path_);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (trim(line).empty()) continue;
      try {
        auto r = annotation_record_from_json(json::parse(line));
        if (by_key_.contains({r.pair_id, r.annotator_id})) continue;
        by_key_.emplace(std::make_pair(r.pair_id, r.annotator_id), records_.size());
        records_.push_back(std::move(r));
      } catch (const std::exception& e) {
        // A torn final write from a crash; earlier lines were fsync'd whole.
        spdlog::warn("{}:{}: skipping unreadable label ({})", log_path_.string(), line_no, e.what());
      }
    }
  }
  fd_ = ::open(log_path_.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(ErrorCode::kIo, "cannot open " + log_path_.string() + ": " + std::strerror(errno));
}

LabelStore::~LabelStore() {
  if (fd_ >= 0) ::close(fd_);
}

SubmitResult LabelStore::submit(const std::string& pair_id, const std::string& annotator_id, char choice) {
  if (choice != 'a' && choice != 'b') throw Error(ErrorCode::kPrecondition, "choice must be 'a' or 'b'");
  if (annotator_id.empty()) throw Error(ErrorCode::kPrecondition, "annotator_id is required");
  if (!session_.find(pair_id)) throw Error(ErrorCode::kUnknownPair, "pair " + pair_id + " is not in this session");

  std::lock_guard lock(mutex_);
  if (auto it = by_key_.find({pair_id, annotator_id}); it != by_key_.end()) {
    const auto& prior = records_[it->second];
    if (prior.choice == choice) return SubmitResult{SubmitStatus::kDuplicate, prior};
    throw Error(ErrorCode::kDuplicateSubmission,
                annotator_id + " already labeled " + pair_id + " as '" + std::string(1, prior.choice) + "'");
  }
  AnnotationRecord record{pair_id, annotator_id, choice, utc_timestamp()};
  const auto line = to_json(record).dump() + "\n";
  std::size_t written = 0;
  while (written < line.size()) {
    const auto n = ::write(fd_, line.data() + written, line.size() - written);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error(ErrorCode::kIo, "write to " + log_path_.string() + " failed: " + std::strerror(errno));
    }
    written += static_cast<std::size_t>(n);
  }
  if (::fsync(fd_) != 0) throw Error(ErrorCode::kIo, "fsync of " + log_path_.string() + " failed");
  by_key_.emplace(std::make_pair(pair_id, annotator_id), records_.size());
  records_.push_back(record);
  return SubmitResult{SubmitStatus::kStored, record};
}

const AnnotationPair* LabelStore::next_for(const std::string& annotator_id) const {
  std::lock_guard lock(mutex_);
  for (const auto& p : session_.pairs()) {
    if (!by_key_.contains({p.pair_id, annotator_id})) return &p;
  }
  return nullptr;
}

json LabelStore::progress() const {
  std::lock_guard lock(mutex_);
  std::map<std::string, std::size_t> per_annotator;
  std::map<std::string, std::size_t> per_pair;
  for (const auto& r : records_) {
    ++per_annotator[r.annotator_id];
    ++per_pair[r.pair_id];
  }
  std::size_t complete = 0;
  for (const auto& [pair, n] : per_pair) complete += n >= 2 ? 1 : 0;
  return json{{"session_id", session_.id()},
              {"pairs", session_.pairs().size()},
              {"labels", records_.size()},
              {"annotators", per_annotator},
              {"fully_annotated", complete}};
}

std::vector<AnnotationRecord> LabelStore::records() const {
  std::lock_guard lock(mutex_);
  return records_;
}

ConsensusResult consensus_filter(const Session& session, const std::vector<AnnotationRecord>& records) {
  std::map<std::string, std::map<std::string, char>> by_pair;
  for (const auto& r : records) {
    if (!session.find(r.pair_id)) throw Error(ErrorCode::kUnknownPair, "pair " + r.pair_id + " is not in the session");
    by_pair[r.pair_id].emplace(r.annotator_id, r.choice);
  }
  ConsensusResult out;
  for (const auto& pair : session.pairs()) {
    auto it = by_pair.find(pair.pair_id);
    if (it == by_pair.end() || it->second.size() != 2) {
      ++out.excluded_incomplete;
      continue;
    }
    ++out.fully_annotated;
    const auto first = it->second.begin()->second;
    const auto second = std::next(it->second.begin())->second;
    if (first != second) continue;
    const auto verdict = first == 'a' ? oxfordeval::Verdict::kPrefersA : oxfordeval::Verdict::kPrefersB;
    out.kept.emplace(pair.pair_id, *oxfordeval::unflip(verdict, pair.flipped));
  }
  out.agreement = out.fully_annotated == 0 ? 0.0
                                           : static_cast<double>(out.kept.size()) / static_cast<double>(out.fully_annotated);
  return out;
}

struct Server::Impl {
  fs::path root;
  std::optional<fs::path> static_dir;
  httplib::Server http;
  std::thread worker;

  struct Entry {
    std::unique_ptr<Session> session;
    std::unique_ptr<LabelStore> store;
  };
  std::mutex mutex;
  std::map<std::string, Entry> sessions;

  LabelStore* find(const std::string& id) {
    std::lock_guard lock(mutex);
    auto it = sessions.find(id);
    if (it != sessions.end()) return it->second.store.get();
    const auto dir = root / id;
    if (id.find('/') != std::string::npos || id.find("..") != std::string::npos || !fs::exists(dir / kSessionFile)) {
      return nullptr;
    }
    Entry e;
    e.session = std::make_unique<Session>(Session::load(dir));
    e.store = std::make_unique<LabelStore>(*e.session, dir / kLabelLog);
    auto* store = e.store.get();
    sessions.emplace(id, std::move(e));
    return store;
  }

  void routes();
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, const std::string& kind, const std::string& message) {
  reply(res, status, json{{"error", {{"kind", kind}, {"message", message}}}});
}

}  // namespace

void Server::Impl::routes() {
  http.Get(R"(/api/session/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    auto* store = find(req.matches[1]);
    if (!store) return reply_error(res, 404, "UnknownSession", "no such session");
    const auto annotator = req.get_param_value("annotator");
    if (annotator.empty()) return reply_error(res, 400, "Precondition", "annotator query parameter is required");
    const auto* pair = store->next_for(annotator);
    if (!pair) return reply(res, 200, json{{"done", true}});
    reply(res, 200, json{{"done", false}, {"pair", Session::blinded_payload(*pair)}});
  });

  http.Post(R"(/api/session/([^/]+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
    auto* store = find(req.matches[1]);
    if (!store) return reply_error(res, 404, "UnknownSession", "no such session");
    try {
      const auto body = json::parse(req.body);
      const auto choice = body.at("choice").get<std::string>();
      if (choice != "a" && choice != "b") return reply_error(res, 400, "Precondition", "choice must be 'a' or 'b'");
      const auto result =
          store->submit(body.at("pair_id").get<std::string>(), body.at("annotator_id").get<std::string>(), choice[0]);
      reply(res, 200,
            json{{"duplicate", result.status == SubmitStatus::kDuplicate}, {"record", to_json(result.record)}});
    } catch (const json::exception& e) {
      reply_error(res, 400, "Precondition", e.what());
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::kUnknownPair: return reply_error(res, 404, "UnknownPair", e.what());
        case ErrorCode::kDuplicateSubmission: return reply_error(res, 409, "DuplicateSubmission", e.what());
        case ErrorCode::kPrecondition: return reply_error(res, 400, "Precondition", e.what());
        default: return reply_error(res, 500, std::string(to_string(e.code())), e.what());
      }
    }
  });

  http.Get(R"(/api/session/([^/]+)/progress)", [this](const httplib::Request& req, httplib::Response& res) {
    auto* store = find(req.matches[1]);
    if (!store) return reply_error(res, 404, "UnknownSession", "no such session");
    reply(res, 200, store->progress());
  });

  if (static_dir && !http.set_mount_point("/", static_dir->string())) {
    spdlog::warn("static directory {} not mounted", static_dir->string());
  }
}

Server::Server(fs::path sessions_root, std::optional<fs::path> static_dir) : impl_(std::make_unique<Impl>()) {
  impl_->root = std::move(sessions_root);
  impl_->static_dir = std::move(static_dir);
  impl_->routes();
}

Server::~Server() { stop(); }

void Server::add_session(const std::string& id) {
  if (!impl_->find(id)) throw Error(ErrorCode::kIo, "session " + id + " not found under " + impl_->root.string());
}

bool Server::listen(const std::string& host, int port) { return impl_->http.listen(host, port); }

int Server::start_background(const std::string& host) {
  const int port = impl_->http.bind_to_any_port(host);
  if (port <= 0) throw Error(ErrorCode::kIo, "cannot bind " + host);
  impl_->worker = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port;
}

void Server::stop() {
  if (!impl_) return;
  impl_->http.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

LabelStore& Server::store(const std::string& id) {
  auto* s = impl_->find(id);
  if (!s) throw Error(ErrorCode::kIo, "session " + id + " not found");
  return *s;
}

}  // namespace dictex::annotation
