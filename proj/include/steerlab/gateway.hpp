#pragma once

#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "steerlab/prompting.hpp"
#include "steerlab/util.hpp"

namespace steerlab::gateway {

struct SamplingProfile {
  std::optional<double> temperature;  // defaults to 0.7 when unset
  std::optional<double> top_p;        // defaults to 0.95 when unset
  int max_tokens = 512;
  enum class Mode { Stochastic, Greedy };
  Mode mode = Mode::Stochastic;

  // Greedy forces temperature-0 semantics regardless of the field.
  double resolved_temperature() const {
    return mode == Mode::Greedy ? 0.0 : temperature.value_or(0.7);
  }
  double resolved_top_p() const { return top_p.value_or(0.95); }
};

SamplingProfile greedy_profile();

struct CompletionRecord {
  std::string instance_id;
  std::string prompt_hash;  // sha256 of the prompt bytes
  std::string raw_text;
  std::string model_name;
  double latency_ms = 0.0;
  int attempt_count = 0;
};

struct CategoryVerdict {
  bool flagged = false;
  double score = 0.0;
};

struct ModerationVerdict {
  bool flagged = false;  // always recomputed as OR of category flags
  std::map<std::string, CategoryVerdict> categories;
};

// The Table-4 breakdown columns; present in every verdict's category map.
inline const std::vector<std::string> kCoreModerationCategories = {"harassment", "sexual",
                                                                   "violence"};

json verdict_to_json(const ModerationVerdict& v);
ModerationVerdict verdict_from_json(const json& obj);

// ---- transports ----

struct ChatRequest {
  std::string model;
  std::string prompt;
  double temperature = 0.7;
  double top_p = 0.95;
  int max_tokens = 512;

  json to_json() const;
};

struct TransportReply {
  int status = 0;  // 0 = connection-level failure; body holds the error text
  std::string body;
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual TransportReply chat(const ChatRequest& req) = 0;
  virtual TransportReply moderate(const std::string& model, const std::string& input) = 0;
};

// OpenAI-compatible HTTP endpoints (chat completions + moderations).
class HttpTransport : public Transport {
 public:
  HttpTransport(std::string base_url, std::string api_key, int timeout_ms = 30000);
  TransportReply chat(const ChatRequest& req) override;
  TransportReply moderate(const std::string& model, const std::string& input) override;

 private:
  TransportReply post(const std::string& path, const std::string& body);
  std::string base_url_;
  std::string api_key_;
  int timeout_ms_;
};

// Scripted transport for tests and offline runs. Responders see the full
// request; failure statuses are consumed from a queue before each call
// reaches the responder.
class MockTransport : public Transport {
 public:
  using ChatFn = std::function<std::string(const ChatRequest&)>;
  using ModerationFn = std::function<ModerationVerdict(const std::string&)>;

  MockTransport(ChatFn chat, ModerationFn moderation);

  TransportReply chat(const ChatRequest& req) override;
  TransportReply moderate(const std::string& model, const std::string& input) override;

  // Statuses returned (in order) before calls start succeeding.
  void push_failures(const std::vector<int>& statuses);

  int chat_calls() const { return chat_calls_; }
  int moderation_calls() const { return moderation_calls_; }
  ChatRequest last_chat_request() const;

 private:
  std::optional<int> pop_failure();
  ChatFn chat_fn_;
  ModerationFn moderation_fn_;
  mutable std::mutex mu_;
  std::deque<int> failures_;
  int chat_calls_ = 0;
  int moderation_calls_ = 0;
  ChatRequest last_request_;
};

// Serves responses recorded in a trace file, keyed by request digest and
// consumed FIFO per key, so arrival order in the original run is irrelevant.
class ReplayTransport : public Transport {
 public:
  explicit ReplayTransport(const std::string& trace_path);
  TransportReply chat(const ChatRequest& req) override;
  TransportReply moderate(const std::string& model, const std::string& input) override;

 private:
  TransportReply take(const std::string& key);
  std::mutex mu_;
  std::map<std::string, std::deque<TransportReply>> by_key_;
};

std::string chat_request_key(const ChatRequest& req);
std::string moderation_request_key(const std::string& model, const std::string& input);

// ---- gateway ----

struct GatewayConfig {
  std::string model = "desk-mock";
  std::string moderation_model = "desk-moderation";
  int max_attempts = 4;
  int backoff_ms = 50;  // doubled per retry
  int concurrency = 8;
  std::string trace_path;  // append-only request/response log when non-empty
};

struct CompletionOutcome {
  bool ok = false;
  CompletionRecord record;
  std::string error;
};

struct ModerationOutcome {
  bool ok = false;
  ModerationVerdict verdict;
  std::string error;
};

// Uniform client over a transport: retries with exponential backoff on 429,
// 5xx and connection failures; bounded-concurrency batch fan-out; optional
// append-only trace for replay.
class Gateway {
 public:
  Gateway(std::unique_ptr<Transport> transport, GatewayConfig config);

  CompletionRecord complete(const prompting::PromptBundle& prompt,
                            const SamplingProfile& profile);
  ModerationVerdict moderate(const std::string& text);

  // Order-aligned with the inputs; per-item failures are reported, not thrown.
  std::vector<CompletionOutcome> complete_batch(const std::vector<prompting::PromptBundle>& prompts,
                                                const SamplingProfile& profile);
  std::vector<ModerationOutcome> moderate_batch(const std::vector<std::string>& texts);

  const GatewayConfig& config() const { return config_; }
  // Test hook; replaces the real backoff sleep.
  void set_sleeper(std::function<void(int)> sleeper) { sleeper_ = std::move(sleeper); }

 private:
  TransportReply send_with_retries(const std::function<TransportReply()>& send, int& attempts);
  void record_trace(const std::string& kind, const std::string& key, const json& request,
                    const TransportReply& reply);

  std::unique_ptr<Transport> transport_;
  GatewayConfig config_;
  std::function<void(int)> sleeper_;
  std::mutex trace_mu_;
};

ModerationVerdict parse_moderation_body(const std::string& body);

}  // namespace steerlab::gateway
