#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cmdb {

/// Base exception for every failure surfaced by the library.
///
/// `code()` is a stable, machine-readable snake_case identifier (for example
/// `no_text_layer` or `context_overflow`); the what() string is for humans.
class Error : public std::runtime_error {
public:
  Error(std::string code, const std::string& message)
      : std::runtime_error(message), code_(std::move(code)) {}

  const std::string& code() const noexcept { return code_; }

private:
  std::string code_;
};

namespace errc {
// document_ingest
inline constexpr const char* encrypted_pdf = "encrypted_pdf";
inline constexpr const char* no_text_layer = "no_text_layer";
inline constexpr const char* malformed_pdf = "malformed_pdf";
// knowledge_schema
inline constexpr const char* unbalanced_braces = "unbalanced_braces";
inline constexpr const char* bad_scale_notation = "bad_scale_notation";
inline constexpr const char* bad_plausibility_table = "bad_plausibility_table";
// agent_core
inline constexpr const char* provider_unavailable = "provider_unavailable";
inline constexpr const char* context_overflow = "context_overflow";
inline constexpr const char* unparseable_verdict = "unparseable_verdict";
inline constexpr const char* bad_provider_config = "bad_provider_config";
inline constexpr const char* transport_error = "transport_error";
// pipeline
inline constexpr const char* empty_corpus = "empty_corpus";
inline constexpr const char* unreadable_corpus = "unreadable_corpus";
inline constexpr const char* illegal_transition = "illegal_transition";
inline constexpr const char* timeout = "timeout";
// knowledge_store
inline constexpr const char* invalid_record = "invalid_record";
inline constexpr const char* store_unavailable = "store_unavailable";
inline constexpr const char* bad_filter = "bad_filter";
inline constexpr const char* not_found = "not_found";
inline constexpr const char* invalid_edit = "invalid_edit";
inline constexpr const char* version_conflict = "version_conflict";
// evaluation
inline constexpr const char* mismatched_doc_sets = "mismatched_doc_sets";
inline constexpr const char* degenerate_classes = "degenerate_classes";
inline constexpr const char* inconsistent_counts = "inconsistent_counts";
// shared
inline constexpr const char* io_error = "io_error";
inline constexpr const char* bad_config = "bad_config";
}  // namespace errc

}  // namespace cmdb
