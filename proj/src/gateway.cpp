#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "idtrace/gateway.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "idtrace/mock_backends.hpp"
#include "idtrace/util.hpp"
#include "json.hpp"

namespace idtrace::gateway {

using nlohmann::json;

std::vector<std::vector<double>> ChatBackend::embed(const std::vector<std::string>&) {
  throw GatewayError("backend '" + name() + "' does not support embeddings");
}

std::string attachment_content_hash(const std::string& image_key) {
  // Virtual keys (synthetic://..., http://...) hash as strings; bare paths
  // hash by file content so renamed copies fingerprint identically.
  if (image_key.find("://") == std::string::npos && std::filesystem::exists(image_key)) {
    return sha256_hex(read_text_file(image_key));
  }
  return sha256_hex(image_key);
}

namespace {

json canonical_request_json(const ChatRequest& request) {
  json messages = json::array();
  for (const ChatMessage& m : request.messages) {
    json hashes = json::array();
    for (const std::string& key : m.attachments) hashes.push_back(attachment_content_hash(key));
    messages.push_back(json{{"role", m.role}, {"text", m.text}, {"attachments", hashes}});
  }
  return json{{"kind", "chat"},
              {"model", request.model},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens},
              {"messages", messages}};
}

json request_to_json(const ChatRequest& request) {
  json messages = json::array();
  for (const ChatMessage& m : request.messages) {
    messages.push_back(json{{"role", m.role}, {"text", m.text}, {"attachments", m.attachments}});
  }
  return json{{"model", request.model},
              {"temperature", request.temperature},
              {"max_tokens", request.max_tokens},
              {"messages", messages}};
}

ChatResponse response_from_json(const json& j) {
  ChatResponse r;
  r.text = j.at("text").get<std::string>();
  if (j.contains("usage")) {
    r.usage.prompt_tokens = j.at("usage").value("prompt_tokens", 0LL);
    r.usage.completion_tokens = j.at("usage").value("completion_tokens", 0LL);
  }
  r.latency_ms = j.value("latency_ms", 0.0);
  return r;
}

json response_to_json(const ChatResponse& r) {
  return json{{"text", r.text},
              {"usage",
               {{"prompt_tokens", r.usage.prompt_tokens},
                {"completion_tokens", r.usage.completion_tokens}}},
              {"latency_ms", r.latency_ms}};
}

// OpenAI-compatible chat-completions dialect. The paper's models (GPT-4o,
// Qwen-VL, Deepseek) are all reachable through endpoints speaking it.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(const GatewayConfig& config) : config_(config) {
    const char* key = std::getenv(config.credential_env.c_str());
    if (key == nullptr || *key == '\0') {
      throw ConfigError("credential environment variable '" + config.credential_env +
                        "' is not set");
    }
    api_key_ = key;
    split_endpoint(config.endpoint);
  }

  std::string name() const override { return "http_chat"; }

  ChatResponse chat(const ChatRequest& request) override {
    json messages = json::array();
    for (const ChatMessage& m : request.messages) {
      if (m.attachments.empty()) {
        messages.push_back(json{{"role", m.role}, {"content", m.text}});
        continue;
      }
      json parts = json::array();
      parts.push_back(json{{"type", "text"}, {"text", m.text}});
      for (const std::string& key : m.attachments) {
        parts.push_back(json{{"type", "image_url"}, {"image_url", {{"url", image_url(key)}}}});
      }
      messages.push_back(json{{"role", m.role}, {"content", parts}});
    }
    const json body{{"model", request.model},
                    {"messages", messages},
                    {"temperature", request.temperature},
                    {"max_tokens", request.max_tokens}};
    const json reply = post("/chat/completions", body);
    ChatResponse response;
    try {
      response.text = reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw GatewayError(std::string("malformed chat completion response: ") + e.what());
    }
    if (reply.contains("usage")) {
      response.usage.prompt_tokens = reply.at("usage").value("prompt_tokens", 0LL);
      response.usage.completion_tokens = reply.at("usage").value("completion_tokens", 0LL);
    }
    return response;
  }

  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    const json reply = post("/embeddings", json{{"model", embed_model_}, {"input", texts}});
    std::vector<std::vector<double>> out;
    try {
      for (const auto& item : reply.at("data")) {
        out.push_back(item.at("embedding").get<std::vector<double>>());
      }
    } catch (const json::exception& e) {
      throw GatewayError(std::string("malformed embeddings response: ") + e.what());
    }
    return out;
  }

  void set_embed_model(std::string model) { embed_model_ = std::move(model); }

 private:
  void split_endpoint(const std::string& endpoint) {
    const auto scheme_end = endpoint.find("://");
    if (scheme_end == std::string::npos) {
      throw ConfigError("endpoint must include a scheme: " + endpoint);
    }
    const auto path_start = endpoint.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
      host_ = endpoint;
    } else {
      host_ = endpoint.substr(0, path_start);
      prefix_ = endpoint.substr(path_start);
      while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    }
  }

  static std::string base64(const std::string& bytes) {
    static const char* table =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    size_t i = 0;
    while (i + 2 < bytes.size()) {
      const uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                         (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                         static_cast<unsigned char>(bytes[i + 2]);
      out.push_back(table[(v >> 18) & 63]);
      out.push_back(table[(v >> 12) & 63]);
      out.push_back(table[(v >> 6) & 63]);
      out.push_back(table[v & 63]);
      i += 3;
    }
    if (i + 1 == bytes.size()) {
      const uint32_t v = static_cast<unsigned char>(bytes[i]) << 16;
      out.push_back(table[(v >> 18) & 63]);
      out.push_back(table[(v >> 12) & 63]);
      out += "==";
    } else if (i + 2 == bytes.size()) {
      const uint32_t v = (static_cast<unsigned char>(bytes[i]) << 16) |
                         (static_cast<unsigned char>(bytes[i + 1]) << 8);
      out.push_back(table[(v >> 18) & 63]);
      out.push_back(table[(v >> 12) & 63]);
      out.push_back(table[(v >> 6) & 63]);
      out += "=";
    }
    return out;
  }

  static std::string image_url(const std::string& key) {
    if (key.find("://") != std::string::npos) return key;
    if (!std::filesystem::exists(key)) {
      throw GatewayError("attachment file not found: " + key);
    }
    std::string mime = "image/jpeg";
    const auto ext = std::filesystem::path(key).extension().string();
    if (ext == ".png") mime = "image/png";
    else if (ext == ".webp") mime = "image/webp";
    return "data:" + mime + ";base64," + base64(read_text_file(key));
  }

  json post(const std::string& path, const json& body) {
    httplib::Client client(host_);
    client.set_connection_timeout(15);
    client.set_read_timeout(120);
    httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
    auto result = client.Post(prefix_ + path, headers, body.dump(), "application/json");
    if (!result) {
      throw TransportError("transport failure against " + host_ + prefix_ + path + ": " +
                           httplib::to_string(result.error()));
    }
    if (result->status == 429 || result->status >= 500) {
      throw TransportError("retryable HTTP " + std::to_string(result->status) + ": " +
                           result->body);
    }
    if (result->status != 200) {
      throw GatewayError("HTTP " + std::to_string(result->status) + ": " + result->body);
    }
    try {
      return json::parse(result->body);
    } catch (const json::exception& e) {
      throw GatewayError(std::string("non-JSON response body: ") + e.what());
    }
  }

  GatewayConfig config_;
  std::string api_key_;
  std::string host_;
  std::string prefix_;
  std::string embed_model_ = "text-embedding-3-small";
};

}  // namespace

std::string request_fingerprint(const ChatRequest& request) {
  return sha256_hex(canonical_request_json(request).dump());
}

std::string embed_fingerprint(const std::string& model, const std::vector<std::string>& texts) {
  return sha256_hex(json{{"kind", "embed"}, {"model", model}, {"texts", texts}}.dump());
}

GatewayConfig GatewayConfig::from_environment() {
  GatewayConfig config;
  if (const char* endpoint = std::getenv("IDTRACE_ENDPOINT"); endpoint && *endpoint) {
    config.endpoint = endpoint;
  }
  if (const char* cache = std::getenv("IDTRACE_CACHE_DIR"); cache && *cache) {
    config.cache_dir = cache;
  }
  return config;
}

struct Gateway::FlightGuard {
  explicit FlightGuard(Gateway& g) : gateway(g) {
    std::unique_lock<std::mutex> lock(g.flight_mu_);
    g.flight_cv_.wait(lock, [&] { return g.in_flight_now_ < g.config_.in_flight; });
    ++g.in_flight_now_;
    int seen = g.max_in_flight_.load();
    while (seen < g.in_flight_now_ && !g.max_in_flight_.compare_exchange_weak(seen, g.in_flight_now_)) {
    }
  }
  ~FlightGuard() {
    {
      std::lock_guard<std::mutex> lock(gateway.flight_mu_);
      --gateway.in_flight_now_;
    }
    gateway.flight_cv_.notify_one();
  }
  Gateway& gateway;
};

Gateway::Gateway(GatewayConfig config, std::unique_ptr<ChatBackend> backend)
    : config_(std::move(config)), backend_(std::move(backend)) {
  if (config_.in_flight < 1) throw ConfigError("in_flight bound must be >= 1");
  switch (config_.kind) {
    case BackendKind::Replay:
      if (config_.cache_dir.empty()) {
        throw ConfigError("replay backend requires a cache directory");
      }
      break;
    case BackendKind::HttpChat:
      if (backend_ == nullptr) {
        if (config_.endpoint.empty()) throw ConfigError("http backend requires an endpoint");
        auto http = std::make_unique<HttpChatBackend>(config_);
        http->set_embed_model(config_.embed_model);
        backend_ = std::move(http);
      }
      break;
    case BackendKind::Mock:
      if (backend_ == nullptr) backend_ = make_mock_backend(config_.mock_name);
      break;
  }
  if (!config_.cache_dir.empty()) std::filesystem::create_directories(config_.cache_dir);
}

Gateway::~Gateway() = default;

ChatRequest Gateway::canonicalize(const ChatRequest& request) const {
  ChatRequest out = request;
  if (out.model.empty()) out.model = config_.model;
  return out;
}

std::filesystem::path Gateway::fixture_path(const std::string& fingerprint) const {
  return config_.cache_dir / (fingerprint + ".json");
}

void Gateway::record_chat(const ChatRequest& request, const ChatResponse& response,
                          const std::string& fingerprint) {
  if (config_.cache_dir.empty()) return;
  const json doc{{"fingerprint", fingerprint},
                 {"recorded_at", utc_timestamp()},
                 {"request", request_to_json(request)},
                 {"response", response_to_json(response)}};
  std::lock_guard<std::mutex> lock(cache_mu_);
  write_text_file_atomic(fixture_path(fingerprint), doc.dump(2) + "\n");
}

void Gateway::record_embed(const std::vector<std::string>& texts,
                           const std::vector<std::vector<double>>& vectors,
                           const std::string& fingerprint) {
  if (config_.cache_dir.empty()) return;
  const json doc{{"fingerprint", fingerprint},
                 {"recorded_at", utc_timestamp()},
                 {"request", {{"kind", "embed"}, {"model", config_.embed_model}, {"texts", texts}}},
                 {"response", {{"vectors", vectors}}}};
  std::lock_guard<std::mutex> lock(cache_mu_);
  write_text_file_atomic(fixture_path(fingerprint), doc.dump(2) + "\n");
}

ChatResponse Gateway::chat(const ChatRequest& raw_request) {
  const ChatRequest request = canonicalize(raw_request);
  const std::string fingerprint = request_fingerprint(request);

  if (!config_.cache_dir.empty() && (config_.kind == BackendKind::Replay || config_.use_cache)) {
    const auto path = fixture_path(fingerprint);
    if (std::filesystem::exists(path)) {
      return response_from_json(json::parse(read_text_file(path)).at("response"));
    }
    if (config_.kind == BackendKind::Replay) {
      throw ReplayMissError("unrecorded exchange: " + fingerprint, fingerprint);
    }
  } else if (config_.kind == BackendKind::Replay) {
    throw ReplayMissError("unrecorded exchange: " + fingerprint, fingerprint);
  }

  FlightGuard guard(*this);
  int attempt = 0;
  for (;;) {
    try {
      const auto start = std::chrono::steady_clock::now();
      backend_calls_.fetch_add(1);
      ChatResponse response = backend_->chat(request);
      response.latency_ms =
          std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
              .count();
      record_chat(request, response, fingerprint);
      return response;
    } catch (const TransportError& e) {
      if (attempt >= config_.retry.max_retries) throw;
      ++attempt;
      log_warn(std::string("transient failure, retry ") + std::to_string(attempt) + ": " +
               e.what());
      if (config_.retry.backoff_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(config_.retry.backoff_ms * attempt));
      }
    }
  }
}

std::vector<std::vector<double>> Gateway::embed(const std::vector<std::string>& texts) {
  if (texts.empty()) return {};
  const std::string fingerprint = embed_fingerprint(config_.embed_model, texts);

  if (!config_.cache_dir.empty() && (config_.kind == BackendKind::Replay || config_.use_cache)) {
    const auto path = fixture_path(fingerprint);
    if (std::filesystem::exists(path)) {
      return json::parse(read_text_file(path))
          .at("response")
          .at("vectors")
          .get<std::vector<std::vector<double>>>();
    }
    if (config_.kind == BackendKind::Replay) {
      throw ReplayMissError("unrecorded exchange: " + fingerprint, fingerprint);
    }
  } else if (config_.kind == BackendKind::Replay) {
    throw ReplayMissError("unrecorded exchange: " + fingerprint, fingerprint);
  }

  FlightGuard guard(*this);
  int attempt = 0;
  for (;;) {
    try {
      backend_calls_.fetch_add(1);
      auto vectors = backend_->embed(texts);
      if (vectors.size() != texts.size()) {
        throw GatewayError("embedding batch size mismatch");
      }
      for (const auto& v : vectors) {
        if (v.size() != vectors.front().size()) {
          throw GatewayError("embedding dimension mismatch within batch");
        }
      }
      record_embed(texts, vectors, fingerprint);
      return vectors;
    } catch (const TransportError& e) {
      if (attempt >= config_.retry.max_retries) throw;
      ++attempt;
      log_warn(std::string("transient failure, retry ") + std::to_string(attempt) + ": " +
               e.what());
      if (config_.retry.backoff_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(config_.retry.backoff_ms * attempt));
      }
    }
  }
}

}  // namespace idtrace::gateway
