#include "steerlab/gateway.hpp"

#include <chrono>
#include <fstream>
#include <thread>

#include <httplib.h>

namespace steerlab::gateway {

SamplingProfile greedy_profile() {
  SamplingProfile p;
  p.mode = SamplingProfile::Mode::Greedy;
  return p;
}

json verdict_to_json(const ModerationVerdict& v) {
  json cats = json::object();
  for (const auto& [name, cat] : v.categories) {
    cats[name] = {{"flagged", cat.flagged}, {"score", cat.score}};
  }
  return {{"flagged", v.flagged}, {"categories", cats}};
}

ModerationVerdict verdict_from_json(const json& obj) {
  ModerationVerdict v;
  for (auto it = obj.at("categories").begin(); it != obj.at("categories").end(); ++it) {
    CategoryVerdict cat;
    cat.flagged = it.value().at("flagged").get<bool>();
    cat.score = it.value().value("score", 0.0);
    v.categories[it.key()] = cat;
  }
  for (const auto& name : kCoreModerationCategories) v.categories.try_emplace(name);
  v.flagged = false;
  for (const auto& [name, cat] : v.categories) v.flagged = v.flagged || cat.flagged;
  return v;
}

json ChatRequest::to_json() const {
  return {{"model", model},
          {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
          {"temperature", temperature},
          {"top_p", top_p},
          {"max_tokens", max_tokens}};
}

std::string chat_request_key(const ChatRequest& req) {
  return sha256_hex(req.to_json().dump());
}

std::string moderation_request_key(const std::string& model, const std::string& input) {
  json req = {{"model", model}, {"input", input}};
  return sha256_hex(req.dump());
}

// ---- HttpTransport ----

HttpTransport::HttpTransport(std::string base_url, std::string api_key, int timeout_ms)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)), timeout_ms_(timeout_ms) {}

TransportReply HttpTransport::post(const std::string& path, const std::string& body) {
  httplib::Client client(base_url_);
  client.set_connection_timeout(0, timeout_ms_ * 1000);
  client.set_read_timeout(timeout_ms_ / 1000, (timeout_ms_ % 1000) * 1000);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(path, headers, body, "application/json");
  if (!res) return {0, "connection failure: " + httplib::to_string(res.error())};
  return {res->status, res->body};
}

TransportReply HttpTransport::chat(const ChatRequest& req) {
  return post("/v1/chat/completions", req.to_json().dump());
}

TransportReply HttpTransport::moderate(const std::string& model, const std::string& input) {
  json req = {{"model", model}, {"input", input}};
  return post("/v1/moderations", req.dump());
}

// ---- MockTransport ----

MockTransport::MockTransport(ChatFn chat, ModerationFn moderation)
    : chat_fn_(std::move(chat)), moderation_fn_(std::move(moderation)) {}

void MockTransport::push_failures(const std::vector<int>& statuses) {
  std::lock_guard<std::mutex> lock(mu_);
  for (int s : statuses) failures_.push_back(s);
}

std::optional<int> MockTransport::pop_failure() {
  std::lock_guard<std::mutex> lock(mu_);
  if (failures_.empty()) return std::nullopt;
  int s = failures_.front();
  failures_.pop_front();
  return s;
}

ChatRequest MockTransport::last_chat_request() const {
  std::lock_guard<std::mutex> lock(mu_);
  return last_request_;
}

TransportReply MockTransport::chat(const ChatRequest& req) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    ++chat_calls_;
    last_request_ = req;
  }
  if (auto status = pop_failure()) return {*status, "scripted failure"};
  if (!chat_fn_) return {500, "no chat responder configured"};
  json body = {{"choices", json::array({{{"message", {{"role", "assistant"},
                                                      {"content", chat_fn_(req)}}}}})},
               {"model", req.model}};
  return {200, body.dump()};
}

TransportReply MockTransport::moderate(const std::string& model, const std::string& input) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    ++moderation_calls_;
  }
  if (auto status = pop_failure()) return {*status, "scripted failure"};
  if (!moderation_fn_) return {500, "no moderation responder configured"};
  ModerationVerdict v = moderation_fn_(input);
  json cats = json::object();
  json scores = json::object();
  bool any = false;
  for (const auto& [name, cat] : v.categories) {
    cats[name] = cat.flagged;
    scores[name] = cat.score;
    any = any || cat.flagged;
  }
  json body = {{"results", json::array({{{"flagged", any},
                                         {"categories", cats},
                                         {"category_scores", scores}}})},
               {"model", model}};
  return {200, body.dump()};
}

// ---- ReplayTransport ----

ReplayTransport::ReplayTransport(const std::string& trace_path) {
  auto rows = read_jsonl(trace_path, ErrorFamily::Gateway);
  for (const auto& [line_no, obj] : rows) {
    if (!obj.contains("key") || !obj.contains("status") || !obj.contains("response")) {
      throw GatewayError(trace_path + ": line " + std::to_string(line_no) +
                         ": malformed trace record");
    }
    TransportReply reply;
    reply.status = obj.at("status").get<int>();
    const json& resp = obj.at("response");
    reply.body = resp.is_string() ? resp.get<std::string>() : resp.dump();
    by_key_[obj.at("key").get<std::string>()].push_back(std::move(reply));
  }
}

TransportReply ReplayTransport::take(const std::string& key) {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = by_key_.find(key);
  if (it == by_key_.end() || it->second.empty()) {
    return {0, "replay miss for request key " + key};
  }
  TransportReply reply = it->second.front();
  it->second.pop_front();
  return reply;
}

TransportReply ReplayTransport::chat(const ChatRequest& req) {
  return take(chat_request_key(req));
}

TransportReply ReplayTransport::moderate(const std::string& model, const std::string& input) {
  return take(moderation_request_key(model, input));
}

// ---- Gateway ----

Gateway::Gateway(std::unique_ptr<Transport> transport, GatewayConfig config)
    : transport_(std::move(transport)), config_(std::move(config)) {
  if (config_.max_attempts < 1) throw GatewayError("max_attempts must be >= 1");
  sleeper_ = [](int ms) { std::this_thread::sleep_for(std::chrono::milliseconds(ms)); };
}

namespace {

bool retryable(int status) { return status == 0 || status == 429 || status >= 500; }

}  // namespace

TransportReply Gateway::send_with_retries(const std::function<TransportReply()>& send,
                                          int& attempts) {
  attempts = 0;
  TransportReply reply;
  int backoff = config_.backoff_ms;
  while (true) {
    ++attempts;
    reply = send();
    if (reply.status == 200) return reply;
    if (!retryable(reply.status) || attempts >= config_.max_attempts) {
      throw TransportError("request failed after " + std::to_string(attempts) +
                               " attempt(s), last status " + std::to_string(reply.status),
                           reply.status);
    }
    sleeper_(backoff);
    backoff *= 2;
  }
}

void Gateway::record_trace(const std::string& kind, const std::string& key, const json& request,
                           const TransportReply& reply) {
  if (config_.trace_path.empty()) return;
  json row = {{"kind", kind},
              {"key", key},
              {"request", request},
              {"status", reply.status},
              {"response", reply.body}};
  std::lock_guard<std::mutex> lock(trace_mu_);
  std::ofstream out(config_.trace_path, std::ios::app);
  if (!out) throw GatewayError("cannot append to trace file: " + config_.trace_path);
  out << row.dump() << "\n";
}

CompletionRecord Gateway::complete(const prompting::PromptBundle& prompt,
                                   const SamplingProfile& profile) {
  ChatRequest req;
  req.model = config_.model;
  req.prompt = prompt.text;
  req.temperature = profile.resolved_temperature();
  req.top_p = profile.resolved_top_p();
  req.max_tokens = profile.max_tokens;

  auto start = std::chrono::steady_clock::now();
  int attempts = 0;
  TransportReply reply = send_with_retries([&] { return transport_->chat(req); }, attempts);
  auto stop = std::chrono::steady_clock::now();
  record_trace("chat", chat_request_key(req), req.to_json(), reply);

  json body = json::parse(reply.body, nullptr, false);
  if (body.is_discarded() || !body.contains("choices") || body.at("choices").empty()) {
    throw ProtocolError("malformed chat completion body");
  }
  const json& choice = body.at("choices").at(0);
  if (!choice.contains("message") || !choice.at("message").contains("content")) {
    throw ProtocolError("chat completion missing message content");
  }

  CompletionRecord rec;
  rec.instance_id = prompt.instance_id;
  rec.prompt_hash = sha256_hex(prompt.text);
  rec.raw_text = choice.at("message").at("content").get<std::string>();
  rec.model_name = body.value("model", config_.model);
  rec.latency_ms = std::chrono::duration<double, std::milli>(stop - start).count();
  rec.attempt_count = attempts;
  return rec;
}

ModerationVerdict parse_moderation_body(const std::string& body_text) {
  json body = json::parse(body_text, nullptr, false);
  if (body.is_discarded() || !body.contains("results") || body.at("results").empty()) {
    throw ProtocolError("malformed moderation body");
  }
  const json& result = body.at("results").at(0);
  ModerationVerdict verdict;
  if (result.contains("categories")) {
    for (auto it = result.at("categories").begin(); it != result.at("categories").end(); ++it) {
      verdict.categories[it.key()].flagged = it.value().get<bool>();
    }
  }
  if (result.contains("category_scores")) {
    for (auto it = result.at("category_scores").begin(); it != result.at("category_scores").end();
         ++it) {
      verdict.categories[it.key()].score = it.value().get<double>();
    }
  }
  for (const auto& name : kCoreModerationCategories) verdict.categories.try_emplace(name);
  verdict.flagged = false;
  for (const auto& [name, cat] : verdict.categories) {
    verdict.flagged = verdict.flagged || cat.flagged;
  }
  return verdict;
}

ModerationVerdict Gateway::moderate(const std::string& text) {
  if (text.empty()) throw GatewayError("moderate: empty text");
  int attempts = 0;
  TransportReply reply = send_with_retries(
      [&] { return transport_->moderate(config_.moderation_model, text); }, attempts);
  record_trace("moderation", moderation_request_key(config_.moderation_model, text),
               json{{"model", config_.moderation_model}, {"input", text}}, reply);
  return parse_moderation_body(reply.body);
}

std::vector<CompletionOutcome> Gateway::complete_batch(
    const std::vector<prompting::PromptBundle>& prompts, const SamplingProfile& profile) {
  std::vector<CompletionOutcome> out(prompts.size());
  parallel_for(prompts.size(), config_.concurrency, [&](size_t i) {
    try {
      out[i].record = complete(prompts[i], profile);
      out[i].ok = true;
    } catch (const Error& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

std::vector<ModerationOutcome> Gateway::moderate_batch(const std::vector<std::string>& texts) {
  std::vector<ModerationOutcome> out(texts.size());
  parallel_for(texts.size(), config_.concurrency, [&](size_t i) {
    try {
      out[i].verdict = moderate(texts[i]);
      out[i].ok = true;
    } catch (const Error& e) {
      out[i].error = e.what();
    }
  });
  return out;
}

}  // namespace steerlab::gateway
