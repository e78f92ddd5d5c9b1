#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <thread>
#include <utility>

#include "dictex/backends.hpp"

namespace dictex {

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

/// Exponential backoff for transient transport failures (timeouts, rate
/// limits, connection errors). Format failures are the caller's business.
struct BackoffPolicy {
  std::chrono::milliseconds base{1000};
  double factor = 2.0;
  std::size_t max_retries = 5;

  [[nodiscard]] std::chrono::milliseconds delay(std::size_t retry_index) const;
};

/// Calls `call` until it succeeds, fails non-transiently, or the transient
/// retry budget is spent. A rate-limit retry-after hint replaces the computed
/// delay when it is longer. `retries` accumulates the number of re-issued calls.
template <typename F>
auto with_backoff(F&& call, const BackoffPolicy& policy, const Sleeper& sleep, std::size_t& retries)
    -> decltype(call()) {
  for (std::size_t attempt = 0;; ++attempt) {
    auto result = call();
    if (result.has_value() || !result.error().transient() || attempt >= policy.max_retries) {
      return result;
    }
    auto wait = policy.delay(attempt);
    if (const auto& hint = result.error().retry_after; hint && *hint > wait) wait = *hint;
    if (sleep) sleep(wait);
    ++retries;
  }
}

}  // namespace dictex

namespace dictex::backends {

/// Applies a BackoffPolicy to every call of a wrapped masked-LM backend.
class RetryingMlmBackend final : public MlmBackend {
 public:
  RetryingMlmBackend(MlmBackend& inner, BackoffPolicy policy, Sleeper sleep = real_sleeper())
      : inner_(inner), policy_(policy), sleep_(std::move(sleep)) {}

  Expected<TokenizedText> tokenize(std::string_view text, bool leading_space) override {
    std::size_t retries = 0;
    return with_backoff([&] { return inner_.tokenize(text, leading_space); }, policy_, sleep_, retries);
  }
  Expected<MaskScores> mask_score(const MaskQuery& query) override {
    std::size_t retries = 0;
    return with_backoff([&] { return inner_.mask_score(query); }, policy_, sleep_, retries);
  }
  [[nodiscard]] std::int64_t mask_token_id() const override { return inner_.mask_token_id(); }
  [[nodiscard]] std::size_t max_sequence_length() const override { return inner_.max_sequence_length(); }
  [[nodiscard]] std::string identifier() const override { return inner_.identifier(); }

 private:
  MlmBackend& inner_;
  BackoffPolicy policy_;
  Sleeper sleep_;
};

}  // namespace dictex::backends
