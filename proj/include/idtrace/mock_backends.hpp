#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "idtrace/core.hpp"
#include "idtrace/gateway.hpp"

namespace idtrace::gateway {

// Replies with the last user message text. Embeddings unsupported.
class EchoBackend : public ChatBackend {
 public:
  std::string name() const override { return "echo"; }
  ChatResponse chat(const ChatRequest& request) override;
};

// Maps distinct normalized strings to distinct basis vectors; identical
// strings share a vector, so cosine is 1 for equal texts and 0 otherwise.
class OneHotBackend : public ChatBackend {
 public:
  explicit OneHotBackend(size_t dimension = 512) : dimension_(dimension) {}
  std::string name() const override { return "onehot"; }
  ChatResponse chat(const ChatRequest&) override {
    throw GatewayError("onehot backend is embeddings-only");
  }
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override;

 private:
  size_t dimension_;
  std::mutex mu_;
  std::map<std::string, size_t> index_;
};

// Test backend driven by a user-supplied handler.
class ScriptedBackend : public ChatBackend {
 public:
  using Handler = std::function<ChatResponse(const ChatRequest&)>;
  explicit ScriptedBackend(Handler handler) : handler_(std::move(handler)) {}
  std::string name() const override { return "scripted"; }
  ChatResponse chat(const ChatRequest& request) override { return handler_(request); }

 private:
  Handler handler_;
};

// Deterministic stand-in for a vision-capable chat model over clips with
// known ground truth. It resolves frame attachments against the clips it was
// constructed from and dispatches on the "### task:" tag that every shipped
// prompt template carries on its first line. Embeddings are one-hot.
class SimBackend : public ChatBackend {
 public:
  explicit SimBackend(std::vector<core::AnnotatedClip> clips);
  std::string name() const override { return "vision"; }
  ChatResponse chat(const ChatRequest& request) override;
  std::vector<std::vector<double>> embed(const std::vector<std::string>& texts) override {
    return onehot_.embed(texts);
  }

 private:
  struct FrameView {
    const core::AnnotatedClip* clip;
    int frame_index;
  };
  const FrameView* resolve(const std::string& image_key) const;
  std::string describe_frame(const FrameView& view) const;

  std::vector<core::AnnotatedClip> clips_;
  std::map<std::string, FrameView> by_image_key_;
  OneHotBackend onehot_;
};

// Factory for context-free mocks ("echo", "onehot"). Context-dependent mocks
// like "vision" must be constructed directly with their clips.
std::unique_ptr<ChatBackend> make_mock_backend(const std::string& mock_name);

// Parses <<< ... >>> delimited blocks out of a prompt, in order.
std::vector<std::string> prompt_blocks(const std::string& text);

// Returns the "### task: <name>" tag of the last user message, or "".
std::string prompt_task(const ChatRequest& request);

}  // namespace idtrace::gateway
