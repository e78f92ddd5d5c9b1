#include "dictex/http_backends.hpp"

#include <cstdlib>
#include <mutex>
#include <semaphore>

#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "dictex/error.hpp"

namespace dictex::backends {

using nlohmann::json;

BackendError error_from_status(int status, const std::string& body, const std::string& retry_after_header) {
  BackendError err;
  err.http_status = status;
  switch (status) {
    case 400: err.kind = BackendErrorKind::kInvalidRequest; break;
    case 408:
    case 504: err.kind = BackendErrorKind::kTimeout; break;
    case 422: err.kind = BackendErrorKind::kVocabularyMismatch; break;
    case 429: err.kind = BackendErrorKind::kRateLimited; break;
    case 451: err.kind = BackendErrorKind::kRefusal; break;
    default: err.kind = BackendErrorKind::kTransport; break;
  }
  err.message = "HTTP " + std::to_string(status);
  auto parsed = json::parse(body, nullptr, false);
  if (parsed.is_object() && parsed.contains("error")) {
    const auto& e = parsed["error"];
    if (e.is_object()) {
      const auto kind = e.value("kind", "");
      if (kind == "refusal") err.kind = BackendErrorKind::kRefusal;
      else if (kind == "rate_limited") err.kind = BackendErrorKind::kRateLimited;
      else if (kind == "timeout") err.kind = BackendErrorKind::kTimeout;
      else if (kind == "vocabulary_mismatch") err.kind = BackendErrorKind::kVocabularyMismatch;
      else if (kind == "invalid_request") err.kind = BackendErrorKind::kInvalidRequest;
      if (e.contains("message") && e["message"].is_string()) err.message += ": " + e["message"].get<std::string>();
    } else if (e.is_string()) {
      err.message += ": " + e.get<std::string>();
    }
  }
  if (!retry_after_header.empty()) {
    char* end = nullptr;
    const double seconds = std::strtod(retry_after_header.c_str(), &end);
    if (end != retry_after_header.c_str() && seconds >= 0) {
      err.retry_after = std::chrono::milliseconds(static_cast<std::int64_t>(seconds * 1000.0));
    }
  }
  return err;
}

class HttpTransport {
 public:
  explicit HttpTransport(HttpConfig config) : config_(std::move(config)), slots_(clamp_slots(config_.concurrency)) {
    if (config_.endpoint.empty()) throw Error(ErrorCode::kConfig, "backend endpoint is empty");
    if (!config_.token_env.empty()) {
      if (const char* token = std::getenv(config_.token_env.c_str())) token_ = token;
    }
  }

  Expected<json> post(const std::string& path, const json& body) {
    struct SlotGuard {
      std::counting_semaphore<kMaxSlots>& s;
      explicit SlotGuard(std::counting_semaphore<kMaxSlots>& sem) : s(sem) { s.acquire(); }
      ~SlotGuard() { s.release(); }
    } guard(slots_);

    httplib::Client client(config_.endpoint);
    const auto timeout = std::chrono::duration_cast<std::chrono::seconds>(config_.timeout).count();
    client.set_connection_timeout(timeout, 0);
    client.set_read_timeout(timeout, 0);
    client.set_write_timeout(timeout, 0);
    httplib::Headers headers;
    if (!token_.empty()) headers.emplace("Authorization", "Bearer " + token_);

    const auto started = std::chrono::steady_clock::now();
    auto res = client.Post(path, headers, body.dump(), "application/json");
    const auto latency =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started);
    {
      std::lock_guard lock(stats_mutex_);
      ++stats_.requests;
      stats_.total_latency += latency;
    }

    if (!res) {
      count_failure();
      const auto err = res.error();
      const auto kind = (err == httplib::Error::Read || err == httplib::Error::Write ||
                         err == httplib::Error::ConnectionTimeout)
                            ? BackendErrorKind::kTimeout
                            : BackendErrorKind::kTransport;
      spdlog::warn("{}{} failed after {} ms: {}", config_.endpoint, path, latency.count(), httplib::to_string(err));
      return BackendError{kind, httplib::to_string(err), std::nullopt, 0};
    }
    if (res->status < 200 || res->status >= 300) {
      count_failure();
      spdlog::warn("{}{} returned {} after {} ms", config_.endpoint, path, res->status, latency.count());
      return error_from_status(res->status, res->body, res->get_header_value("Retry-After"));
    }
    auto parsed = json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) {
      count_failure();
      return BackendError{BackendErrorKind::kTransport, "response body is not a JSON object", std::nullopt,
                          res->status};
    }
    spdlog::debug("{}{} ok in {} ms ({} request bytes, {} response bytes)", config_.endpoint, path, latency.count(),
                  body.dump().size(), res->body.size());
    return parsed;
  }

  void add_tokens(std::uint64_t prompt, std::uint64_t completion) {
    std::lock_guard lock(stats_mutex_);
    stats_.prompt_tokens += prompt;
    stats_.completion_tokens += completion;
  }

  RequestStats stats() const {
    std::lock_guard lock(stats_mutex_);
    return stats_;
  }

  const std::string& endpoint() const { return config_.endpoint; }

 private:
  static constexpr std::ptrdiff_t kMaxSlots = 1024;

  static std::ptrdiff_t clamp_slots(std::size_t n) {
    return static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(n, 1, kMaxSlots));
  }

  void count_failure() {
    std::lock_guard lock(stats_mutex_);
    ++stats_.failures;
  }

  HttpConfig config_;
  std::string token_;
  std::counting_semaphore<kMaxSlots> slots_;
  mutable std::mutex stats_mutex_;
  RequestStats stats_;
};

namespace {

std::uint64_t approx_tokens(std::string_view text) {
  std::uint64_t n = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

template <typename T>
Expected<T> field(const json& body, const char* name) {
  try {
    return body.at(name).get<T>();
  } catch (const json::exception& e) {
    return BackendError{BackendErrorKind::kTransport, std::string("malformed response field '") + name + "': " + e.what(),
                        std::nullopt, 0};
  }
}

}  // namespace

HttpChatBackend::HttpChatBackend(HttpConfig config) : transport_(std::make_unique<HttpTransport>(std::move(config))) {}
HttpChatBackend::~HttpChatBackend() = default;

Expected<std::string> HttpChatBackend::complete(std::string_view prompt, const GenParams& params) {
  if (prompt.empty()) return BackendError{BackendErrorKind::kInvalidRequest, "empty prompt", std::nullopt, 0};
  json body{{"prompt", prompt},
            {"temperature", params.temperature},
            {"top_p", params.top_p},
            {"top_k", params.top_k},
            {"max_tokens", params.max_tokens}};
  auto res = transport_->post("/v1/complete", body);
  if (!res) return res.error();
  auto text = field<std::string>(res.value(), "text");
  if (!text) return text.error();
  std::uint64_t prompt_tokens = approx_tokens(prompt);
  std::uint64_t completion_tokens = approx_tokens(text.value());
  if (auto usage = res.value().find("usage"); usage != res.value().end() && usage->is_object()) {
    prompt_tokens = usage->value("prompt_tokens", prompt_tokens);
    completion_tokens = usage->value("completion_tokens", completion_tokens);
  }
  transport_->add_tokens(prompt_tokens, completion_tokens);
  spdlog::debug("completion: {} prompt tokens, {} completion tokens", prompt_tokens, completion_tokens);
  return text;
}

std::string HttpChatBackend::identifier() const { return "http:" + transport_->endpoint(); }
RequestStats HttpChatBackend::stats() const { return transport_->stats(); }

HttpMlmBackend::HttpMlmBackend(HttpConfig config, MlmModelInfo info)
    : transport_(std::make_unique<HttpTransport>(std::move(config))), info_(info) {}
HttpMlmBackend::~HttpMlmBackend() = default;

Expected<TokenizedText> HttpMlmBackend::tokenize(std::string_view text, bool leading_space) {
  auto res = transport_->post("/v1/tokenize", json{{"text", text}, {"leading_space", leading_space}});
  if (!res) return res.error();
  auto ids = field<std::vector<std::int64_t>>(res.value(), "token_ids");
  if (!ids) return ids.error();
  auto offsets = field<std::vector<std::pair<std::size_t, std::size_t>>>(res.value(), "offsets");
  if (!offsets) return offsets.error();
  if (ids->size() != offsets->size()) {
    return BackendError{BackendErrorKind::kTransport, "token_ids and offsets differ in length", std::nullopt, 0};
  }
  return TokenizedText{std::move(ids).value(), std::move(offsets).value()};
}

Expected<MaskScores> HttpMlmBackend::mask_score(const MaskQuery& query) {
  if (auto problem = validate_query(query, info_.mask_token_id)) {
    return BackendError{BackendErrorKind::kInvalidRequest, *problem, std::nullopt, 0};
  }
  for (auto id : query.target_ids) {
    if (id < 0 || (info_.vocab_size > 0 && id >= info_.vocab_size)) {
      return BackendError{BackendErrorKind::kVocabularyMismatch, "target id " + std::to_string(id) + " out of range",
                          std::nullopt, 0};
    }
  }
  auto res = transport_->post("/v1/mask_score", json{{"token_ids", query.token_ids},
                                                     {"mask_positions", query.mask_positions},
                                                     {"target_ids", query.target_ids}});
  if (!res) return res.error();
  auto logprobs = field<std::vector<double>>(res.value(), "logprobs");
  if (!logprobs) return logprobs.error();
  if (logprobs->size() != query.mask_positions.size()) {
    return BackendError{BackendErrorKind::kTransport, "logprobs count does not match mask count", std::nullopt, 0};
  }
  for (double& lp : logprobs.value()) {
    if (lp > 0.0 && lp < 1e-9) lp = 0.0;  // rounding on the server side
    if (!std::isfinite(lp) || lp > 0.0) {
      return BackendError{BackendErrorKind::kTransport, "logprob is not a finite non-positive number", std::nullopt, 0};
    }
  }
  return MaskScores{std::move(logprobs).value()};
}

std::string HttpMlmBackend::identifier() const { return "http:" + transport_->endpoint(); }
RequestStats HttpMlmBackend::stats() const { return transport_->stats(); }

}  // namespace dictex::backends
