#pragma once

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "cmdb/error.hpp"
#include "cmdb/util/utf8.hpp"
#include "json.hpp"

namespace cmdb::agent {

enum class ModelTier { gatekeeper_tier, analyst_tier };

inline const char* to_string(ModelTier t) {
  return t == ModelTier::gatekeeper_tier ? "gatekeeper_tier" : "analyst_tier";
}

struct ProviderRequest {
  ModelTier model_tier = ModelTier::gatekeeper_tier;
  std::string system_prompt;
  std::string user_content;
  int max_output_tokens = 1024;
  double temperature = 0.0;
};

struct ProviderResponse {
  std::string text;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t latency_ms = 0;
};

using Clock = std::chrono::steady_clock;

/// Identifies a call for scripting, logging and deadlines.
struct CallContext {
  std::string stage;  // "gatekeeper" or "analyst"
  std::string doc_id;
  int attempt = 1;
  std::optional<Clock::time_point> deadline;
};

struct CallRecord {
  ModelTier tier = ModelTier::gatekeeper_tier;
  std::string stage;
  std::string doc_id;
  int attempt = 1;
  int transport_attempts = 0;
  std::int64_t prompt_tokens = 0;
  std::int64_t completion_tokens = 0;
  std::int64_t latency_ms = 0;
  bool ok = false;
  std::string error;
};

inline nlohmann::json to_json(const CallRecord& c) {
  return {{"tier", to_string(c.tier)},         {"stage", c.stage},
          {"doc_id", c.doc_id},                {"attempt", c.attempt},
          {"transport_attempts", c.transport_attempts}, {"prompt_tokens", c.prompt_tokens},
          {"completion_tokens", c.completion_tokens},   {"latency_ms", c.latency_ms},
          {"ok", c.ok},                        {"error", c.error}};
}

/// Token estimate used wherever a provider does not report usage.
inline std::int64_t estimate_tokens(std::string_view text) {
  const auto n = static_cast<std::int64_t>(utf8::length(text));
  return (n + 3) / 4;
}

inline void check_deadline(const CallContext& ctx) {
  if (ctx.deadline && Clock::now() >= *ctx.deadline) {
    throw Error(errc::timeout, ctx.doc_id + ": per-document timeout expired");
  }
}

/// Sleeps up to `d`, waking early to honor the context deadline.
inline void sleep_within(std::chrono::milliseconds d, const CallContext& ctx) {
  const auto until = Clock::now() + d;
  while (Clock::now() < until) {
    check_deadline(ctx);
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(until - Clock::now());
    std::this_thread::sleep_for(std::min(left, std::chrono::milliseconds(20)));
  }
  check_deadline(ctx);
}

/// One round trip to a model. Throw Error(transport_error) for failures
/// worth retrying; any other Error is final.
class Transport {
public:
  virtual ~Transport() = default;
  virtual ProviderResponse send(const ProviderRequest& req, const CallContext& ctx) = 0;
};

struct ClientOptions {
  int max_retries = 3;                          // retries after the first transport attempt
  std::chrono::milliseconds backoff{200};       // doubled per retry
  std::int64_t gatekeeper_context_tokens = 16000;
  std::int64_t analyst_context_tokens = 128000;
  int max_in_flight = 4;
  double gatekeeper_rps = 0.0;                  // 0 = unlimited
  double analyst_rps = 0.0;
};

/// Shared, thread-safe front end over a Transport: context-window check,
/// retry with exponential backoff, max-in-flight limit, per-tier request
/// spacing, and a call log for cost accounting.
class ProviderClient {
public:
  ProviderClient(std::shared_ptr<Transport> transport, ClientOptions opt = {})
      : transport_(std::move(transport)), opt_(opt) {
    if (!transport_) throw Error(errc::bad_provider_config, "provider transport is null");
    if (opt_.max_in_flight < 1) opt_.max_in_flight = 1;
  }

  ProviderResponse complete(const ProviderRequest& req, const CallContext& ctx) {
    if (req.user_content.empty()) throw std::invalid_argument("provider request needs user content");
    CallRecord rec;
    rec.tier = req.model_tier;
    rec.stage = ctx.stage;
    rec.doc_id = ctx.doc_id;
    rec.attempt = ctx.attempt;

    const std::int64_t estimate = estimate_tokens(req.system_prompt) + estimate_tokens(req.user_content);
    const std::int64_t window = req.model_tier == ModelTier::gatekeeper_tier ? opt_.gatekeeper_context_tokens
                                                                              : opt_.analyst_context_tokens;
    if (estimate + req.max_output_tokens > window) {
      throw Error(errc::context_overflow, ctx.doc_id + ": input of ~" + std::to_string(estimate) +
                                              " tokens exceeds the " + to_string(req.model_tier) + " window of " +
                                              std::to_string(window));
    }

    InFlight guard(*this);
    for (int i = 0;; ++i) {
      check_deadline(ctx);
      pace(req.model_tier, ctx);
      ++rec.transport_attempts;
      try {
        ProviderResponse resp = transport_->send(req, ctx);
        rec.prompt_tokens = resp.prompt_tokens;
        rec.completion_tokens = resp.completion_tokens;
        rec.latency_ms = resp.latency_ms;
        rec.ok = true;
        log(rec);
        return resp;
      } catch (const Error& e) {
        if (e.code() == errc::transport_error && i < opt_.max_retries) {
          try {
            sleep_within(opt_.backoff * (1 << std::min(i, 16)), ctx);
          } catch (const Error& te) {
            rec.error = te.what();
            log(rec);
            throw;
          }
          continue;
        }
        rec.error = e.what();
        log(rec);
        if (e.code() == errc::transport_error) {
          throw Error(errc::provider_unavailable, ctx.doc_id + ": provider unavailable after " +
                                                      std::to_string(rec.transport_attempts) +
                                                      " attempts: " + e.what());
        }
        throw;
      }
    }
  }

  std::vector<CallRecord> call_log() const {
    std::lock_guard<std::mutex> lk(log_mu_);
    return log_;
  }

  void clear_log() {
    std::lock_guard<std::mutex> lk(log_mu_);
    log_.clear();
  }

  const ClientOptions& options() const { return opt_; }

private:
  struct InFlight {
    explicit InFlight(ProviderClient& c) : c_(c) {
      std::unique_lock<std::mutex> lk(c_.sem_mu_);
      c_.sem_cv_.wait(lk, [&] { return c_.in_flight_ < c_.opt_.max_in_flight; });
      ++c_.in_flight_;
    }
    ~InFlight() {
      {
        std::lock_guard<std::mutex> lk(c_.sem_mu_);
        --c_.in_flight_;
      }
      c_.sem_cv_.notify_one();
    }
    ProviderClient& c_;
  };

  void pace(ModelTier tier, const CallContext& ctx) {
    const double rps = tier == ModelTier::gatekeeper_tier ? opt_.gatekeeper_rps : opt_.analyst_rps;
    if (rps <= 0.0) return;
    const auto interval = std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(1.0 / rps));
    Clock::time_point slot;
    {
      std::lock_guard<std::mutex> lk(pace_mu_);
      auto& next = tier == ModelTier::gatekeeper_tier ? next_gate_ : next_analyst_;
      slot = std::max(next, Clock::now());
      next = slot + interval;
    }
    const auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(slot - Clock::now());
    if (wait.count() > 0) sleep_within(wait, ctx);
  }

  void log(const CallRecord& r) {
    std::lock_guard<std::mutex> lk(log_mu_);
    log_.push_back(r);
  }

  std::shared_ptr<Transport> transport_;
  ClientOptions opt_;
  mutable std::mutex log_mu_;
  std::vector<CallRecord> log_;
  std::mutex sem_mu_;
  std::condition_variable sem_cv_;
  int in_flight_ = 0;
  std::mutex pace_mu_;
  Clock::time_point next_gate_{};
  Clock::time_point next_analyst_{};
};

}  // namespace cmdb::agent
