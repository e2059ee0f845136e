#pragma once

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include "idtrace/metrics.hpp"

namespace idtrace::gateway {

struct GatewayError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Transport-level failure; the gateway retries these per policy.
struct TransportError : GatewayError {
  using GatewayError::GatewayError;
};

struct ConfigError : GatewayError {
  using GatewayError::GatewayError;
};

struct ReplayMissError : GatewayError {
  ReplayMissError(const std::string& what, std::string fp)
      : GatewayError(what), fingerprint(std::move(fp)) {}
  std::string fingerprint;
};

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string text;
  std::vector<std::string> attachments;  // image keys
};

struct TokenUsage {
  long long prompt_tokens = 0;
  long long completion_tokens = 0;
};

struct ChatRequest {
  std::string model;  // empty = gateway config default
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  int max_tokens = 4096;
};

struct ChatResponse {
  std::string text;
  TokenUsage usage;
  double latency_ms = 0.0;
};

struct ChatExchange {
  ChatRequest request;
  ChatResponse response;
  std::string fingerprint;
  std::string recorded_at;
};

// Stable content hash of the canonicalized request. Attachments contribute
// their resolved content hash (file bytes when the key is an existing path,
// the key string itself for virtual keys), never the path.
std::string request_fingerprint(const ChatRequest& request);
std::string embed_fingerprint(const std::string& model, const std::vector<std::string>& texts);
std::string attachment_content_hash(const std::string& image_key);

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string name() const = 0;
  virtual ChatResponse chat(const ChatRequest& request) = 0;
  virtual std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);
};

enum class BackendKind { HttpChat, Replay, Mock };

struct RetryPolicy {
  int max_retries = 2;
  int backoff_ms = 200;
};

struct GatewayConfig {
  BackendKind kind = BackendKind::Mock;
  std::string mock_name = "echo";  // used when kind == Mock and no backend given
  std::string endpoint;            // e.g. https://api.example.com/v1
  std::string credential_env = "IDTRACE_API_KEY";
  std::string model = "gpt-4o";
  std::string embed_model = "text-embedding-3-small";
  int in_flight = 4;
  RetryPolicy retry;
  std::filesystem::path cache_dir;
  bool use_cache = true;

  // Fills endpoint / cache_dir from IDTRACE_ENDPOINT / IDTRACE_CACHE_DIR when
  // those variables are set.
  static GatewayConfig from_environment();
};

// Single entry point for all model traffic: fingerprints every request,
// consults the fixture cache, bounds concurrent backend calls, retries
// transient transport failures, and records exchanges for replay.
class Gateway {
 public:
  explicit Gateway(GatewayConfig config, std::unique_ptr<ChatBackend> backend = nullptr);
  ~Gateway();

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  ChatResponse chat(const ChatRequest& request);
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts);

  const GatewayConfig& config() const { return config_; }

  // Test hooks.
  int max_in_flight_seen() const { return max_in_flight_.load(); }
  long long backend_calls() const { return backend_calls_.load(); }

 private:
  struct FlightGuard;

  ChatRequest canonicalize(const ChatRequest& request) const;
  std::filesystem::path fixture_path(const std::string& fingerprint) const;
  void record_chat(const ChatRequest& request, const ChatResponse& response,
                   const std::string& fingerprint);
  void record_embed(const std::vector<std::string>& texts,
                    const std::vector<std::vector<double>>& vectors,
                    const std::string& fingerprint);

  GatewayConfig config_;
  std::unique_ptr<ChatBackend> backend_;

  std::mutex flight_mu_;
  std::condition_variable flight_cv_;
  int in_flight_now_ = 0;
  std::atomic<int> max_in_flight_{0};
  std::atomic<long long> backend_calls_{0};
  std::mutex cache_mu_;
};

// metrics::Embedder backed by a gateway.
class GatewayEmbedder : public metrics::Embedder {
 public:
  explicit GatewayEmbedder(Gateway& g) : gateway_(g) {}
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    return gateway_.embed(texts);
  }

 private:
  Gateway& gateway_;
};

}  // namespace idtrace::gateway
