#include "dictex/backends.hpp"

#include <cmath>

#include "dictex/error.hpp"
#include "dictex/retry.hpp"

namespace dictex::backends {

std::string_view to_string(BackendErrorKind kind) {
  switch (kind) {
    case BackendErrorKind::kTimeout: return "timeout";
    case BackendErrorKind::kRateLimited: return "rate_limited";
    case BackendErrorKind::kRefusal: return "refusal";
    case BackendErrorKind::kTransport: return "transport";
    case BackendErrorKind::kVocabularyMismatch: return "vocabulary_mismatch";
    case BackendErrorKind::kInvalidRequest: return "invalid_request";
  }
  return "transport";
}

bool BackendError::transient() const noexcept {
  return kind == BackendErrorKind::kTimeout || kind == BackendErrorKind::kRateLimited ||
         kind == BackendErrorKind::kTransport;
}

void GenParams::validate() const {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorCode::kConfig, "temperature must be >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) throw Error(ErrorCode::kConfig, "top_p must be in (0, 1]");
  if (top_k < 1) throw Error(ErrorCode::kConfig, "top_k must be positive");
  if (max_tokens < 1) throw Error(ErrorCode::kConfig, "max_tokens must be positive");
}

std::optional<std::string> validate_query(const MaskQuery& query, std::int64_t mask_id) {
  if (query.mask_positions.empty()) return "no mask positions";
  if (query.mask_positions.size() != query.target_ids.size()) return "mask_positions and target_ids differ in length";
  for (std::size_t k = 0; k < query.mask_positions.size(); ++k) {
    const auto pos = query.mask_positions[k];
    if (pos >= query.token_ids.size()) return "mask position " + std::to_string(pos) + " out of range";
    if (k > 0 && pos <= query.mask_positions[k - 1]) return "mask positions not strictly increasing";
    if (query.token_ids[pos] != mask_id) return "position " + std::to_string(pos) + " does not hold the mask id";
  }
  return std::nullopt;
}

}  // namespace dictex::backends

namespace dictex {

std::chrono::milliseconds BackoffPolicy::delay(std::size_t retry_index) const {
  const double scaled = static_cast<double>(base.count()) * std::pow(factor, static_cast<double>(retry_index));
  return std::chrono::milliseconds(static_cast<std::int64_t>(scaled));
}

}  // namespace dictex
