#pragma once

// HTTP clients for the chat and masked-LM model-server contracts:
//   POST /v1/complete    {prompt, temperature, top_p, top_k, max_tokens} -> {text}
//   POST /v1/tokenize    {text, leading_space} -> {token_ids, offsets}
//   POST /v1/mask_score  {token_ids, mask_positions, target_ids} -> {logprobs}
//
// Status mapping: 400 invalid request, 408/504 timeout, 422 vocabulary
// mismatch, 429 rate limited (Retry-After honoured), 451 refusal, any other
// non-2xx transport error. A JSON body {"error": {"kind": "..."}} overrides
// the status-derived kind.

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>

#include "dictex/backends.hpp"

namespace dictex::backends {

struct HttpConfig {
  std::string endpoint;  // scheme://host[:port]
  std::chrono::seconds timeout{60};
  std::size_t concurrency = 8;
  // Name of an environment variable holding a bearer token; empty for none.
  std::string token_env;
};

struct MlmModelInfo {
  std::int64_t mask_token_id = 50264;  // roberta-large <mask>
  std::int64_t vocab_size = 50265;
  std::size_t max_length = 510;
};

BackendError error_from_status(int status, const std::string& body, const std::string& retry_after_header);

class HttpTransport;

class HttpChatBackend final : public ChatBackend {
 public:
  explicit HttpChatBackend(HttpConfig config);
  ~HttpChatBackend() override;

  Expected<std::string> complete(std::string_view prompt, const GenParams& params) override;
  [[nodiscard]] std::string identifier() const override;
  [[nodiscard]] RequestStats stats() const;

 private:
  std::unique_ptr<HttpTransport> transport_;
};

class HttpMlmBackend final : public MlmBackend {
 public:
  HttpMlmBackend(HttpConfig config, MlmModelInfo info);
  ~HttpMlmBackend() override;

  Expected<TokenizedText> tokenize(std::string_view text, bool leading_space) override;
  Expected<MaskScores> mask_score(const MaskQuery& query) override;

  [[nodiscard]] std::int64_t mask_token_id() const override { return info_.mask_token_id; }
  [[nodiscard]] std::size_t max_sequence_length() const override { return info_.max_length; }
  [[nodiscard]] std::string identifier() const override;
  [[nodiscard]] RequestStats stats() const;

 private:
  std::unique_ptr<HttpTransport> transport_;
  MlmModelInfo info_;
};

}  // namespace dictex::backends
