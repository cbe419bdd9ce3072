#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaussmpm/image.hpp"

namespace gaussmpm {

// ---------------------------------------------------------------- requests

struct ContentPart {
  enum class Kind { Text, Image };
  Kind kind = Kind::Text;
  std::string text;
  Image image;

  static ContentPart make_text(std::string t) { return {Kind::Text, std::move(t), {}}; }
  static ContentPart make_image(Image img) { return {Kind::Image, {}, std::move(img)}; }
};

struct LlmMessage {
  std::string role;
  std::vector<ContentPart> content;
};

struct LlmRequest {
  std::vector<LlmMessage> messages;
  std::string model_id = "gpt-4o";
  double temperature = 0.0;
};

struct LlmUsage {
  int prompt_tokens = 0;
  int completion_tokens = 0;
};

struct LlmResponse {
  std::string text;
  LlmUsage usage;
};

struct VideoRequest {
  Image image;
  std::string prompt;
  int width = 720;
  int height = 480;
  int frame_count = 50;
};

struct VideoResult {
  std::vector<Image> frames;
};

// OpenAI-style chat-completions body; images become base64 PNG data URLs.
nlohmann::json to_wire_json(const LlmRequest& request);
nlohmann::json to_wire_json(const VideoRequest& request);

// SHA-256 (hex) of the compact wire JSON; keys of replay transcripts.
std::string request_key(const LlmRequest& request);
std::string request_key(const VideoRequest& request);
std::string sha256_hex(const std::string& data);

// ----------------------------------------------------------------- clients

class LlmClient {
 public:
  virtual ~LlmClient() = default;
  virtual LlmResponse complete(const LlmRequest& request) = 0;
};

class VideoClient {
 public:
  virtual ~VideoClient() = default;
  virtual VideoResult generate(const VideoRequest& request) = 0;
};

// Checks the request, forwards it, returns the text verbatim.
LlmResponse llm_complete(LlmClient& client, const LlmRequest& request);

// PreconditionError for an empty image or prompt or frame_count < 2;
// ClientError when the backend returns a different frame count.
VideoResult generate_video(VideoClient& client, const VideoRequest& request);

// -------------------------------------------------------------- transport

struct HttpResponse {
  int status = 0;
  std::string body;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  // Throws TransportError when no HTTP response arrives.
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const std::map<std::string, std::string>& headers) = 0;
  virtual HttpResponse get(const std::string& path, const std::map<std::string, std::string>& headers) = 0;
};

// cpp-httplib client for "http[s]://host[:port][/prefix]".
std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url,
                                                   std::chrono::seconds timeout = std::chrono::seconds(120));

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds initial_delay{500};
  double backoff = 2.0;
  // Injected so tests do not wait.
  std::function<void(std::chrono::milliseconds)> sleep;
};

// Runs `call`, retrying TransportError (which includes 5xx replies) up to
// policy.max_retries times with exponential backoff. Other errors pass
// straight through.
HttpResponse with_retries(const RetryPolicy& policy, const std::function<HttpResponse()>& call);

// Maps a status code onto the error hierarchy: 401/403 AuthError,
// 5xx TransportError, other non-2xx ClientError.
void check_status(const HttpResponse& response, const std::string& what);

struct EndpointConfig {
  std::string base_url;
  std::string api_key;
  std::string model;
  std::chrono::seconds timeout{120};
  RetryPolicy retry;
};

// GAUSSMPM_LLM_ENDPOINT / GAUSSMPM_LLM_API_KEY / GAUSSMPM_LLM_MODEL, and
// GAUSSMPM_VIDEO_ENDPOINT / GAUSSMPM_VIDEO_API_KEY. Empty when unset.
std::optional<EndpointConfig> llm_endpoint_from_env();
std::optional<EndpointConfig> video_endpoint_from_env();

class ChatCompletionsClient : public LlmClient {
 public:
  ChatCompletionsClient(EndpointConfig config, std::unique_ptr<HttpTransport> transport);
  LlmResponse complete(const LlmRequest& request) override;

 private:
  EndpointConfig config_;
  std::unique_ptr<HttpTransport> transport_;
};

// POST {base}/jobs then GET {base}/jobs/{id} until status "done" or "failed".
class VideoJobClient : public VideoClient {
 public:
  VideoJobClient(EndpointConfig config, std::unique_ptr<HttpTransport> transport,
                 std::chrono::milliseconds poll_interval = std::chrono::milliseconds(2000));
  VideoResult generate(const VideoRequest& request) override;

 private:
  EndpointConfig config_;
  std::unique_ptr<HttpTransport> transport_;
  std::chrono::milliseconds poll_interval_;
};

// ------------------------------------------------------------------ mocks

// Returns the scripted responses in order; the last one repeats.
class ScriptedLlm : public LlmClient {
 public:
  explicit ScriptedLlm(std::vector<std::string> responses);
  LlmResponse complete(const LlmRequest& request) override;
  std::size_t calls() const { return requests_.size(); }
  const std::vector<LlmRequest>& requests() const { return requests_; }

 private:
  std::vector<std::string> responses_;
  std::vector<LlmRequest> requests_;
};

// Replies with the concatenated text of the last message.
class EchoLlm : public LlmClient {
 public:
  LlmResponse complete(const LlmRequest& request) override;
};

// frame_count copies of the input image.
class StaticVideo : public VideoClient {
 public:
  VideoResult generate(const VideoRequest& request) override;
  std::size_t calls() const { return calls_; }

 private:
  std::size_t calls_ = 0;
};

// Black frames of the requested size with a white square of side `size`
// whose left edge sits at x0 + step * frame, vertically centred.
class TranslatingSquareVideo : public VideoClient {
 public:
  TranslatingSquareVideo(int size, int x0, int step) : size_(size), x0_(x0), step_(step) {}
  VideoResult generate(const VideoRequest& request) override;
  std::size_t calls() const { return calls_; }

 private:
  int size_, x0_, step_;
  std::size_t calls_ = 0;
};

// Like TranslatingSquareVideo but the left edge of frame f is positions[f]
// (clamped to the last entry).
class ScriptedMotionVideo : public VideoClient {
 public:
  ScriptedMotionVideo(int size, std::vector<int> positions) : size_(size), positions_(std::move(positions)) {}
  VideoResult generate(const VideoRequest& request) override;
  std::size_t calls() const { return calls_; }

 private:
  int size_;
  std::vector<int> positions_;
  std::size_t calls_ = 0;
};

Image draw_square_frame(int width, int height, int left, int size);

// ----------------------------------------------------------------- replay

// JSON lines, one exchange each: {"kind", "key", "response"}. Responses
// recorded under the same key are replayed in order; the last repeats.
class Transcript {
 public:
  static Transcript load(const std::filesystem::path& path);
  void append_llm(const std::string& key, const LlmResponse& response);
  void append_video(const std::string& key, const VideoResult& result);
  void save(const std::filesystem::path& path) const;

  std::optional<LlmResponse> next_llm(const std::string& key);
  std::optional<VideoResult> next_video(const std::string& key);
  std::size_t size() const { return lines_.size(); }

 private:
  std::vector<nlohmann::json> lines_;
  std::map<std::string, std::size_t> cursor_;
};

class ReplayLlm : public LlmClient {
 public:
  explicit ReplayLlm(std::shared_ptr<Transcript> transcript) : transcript_(std::move(transcript)) {}
  LlmResponse complete(const LlmRequest& request) override;

 private:
  std::shared_ptr<Transcript> transcript_;
};

class ReplayVideo : public VideoClient {
 public:
  explicit ReplayVideo(std::shared_ptr<Transcript> transcript) : transcript_(std::move(transcript)) {}
  VideoResult generate(const VideoRequest& request) override;

 private:
  std::shared_ptr<Transcript> transcript_;
};

// Forwards to `inner` and records every exchange.
class RecordingLlm : public LlmClient {
 public:
  RecordingLlm(LlmClient& inner, std::shared_ptr<Transcript> transcript) : inner_(inner), transcript_(std::move(transcript)) {}
  LlmResponse complete(const LlmRequest& request) override;

 private:
  LlmClient& inner_;
  std::shared_ptr<Transcript> transcript_;
};

class RecordingVideo : public VideoClient {
 public:
  RecordingVideo(VideoClient& inner, std::shared_ptr<Transcript> transcript) : inner_(inner), transcript_(std::move(transcript)) {}
  VideoResult generate(const VideoRequest& request) override;

 private:
  VideoClient& inner_;
  std::shared_ptr<Transcript> transcript_;
};

// ------------------------------------------------------------ subsampling

// Indices of k frames placed at equal steps of cumulative motion (mean
// absolute difference of 64x64 grayscale thumbnails). First and last are
// always included. Uniform spacing when nothing moves.
std::vector<std::size_t> subsample_indices(const std::vector<Image>& frames, std::size_t k);
std::vector<Image> subsample_frames(const std::vector<Image>& frames, std::size_t k);

// Mean absolute grayscale difference between consecutive thumbnails.
std::vector<double> motion_profile(const std::vector<Image>& frames);

}  // namespace gaussmpm
