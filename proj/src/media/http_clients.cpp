#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <openssl/evp.h>

#include <cstdlib>
#include <thread>

#include "gaussmpm/error.hpp"
#include "gaussmpm/media_clients.hpp"

namespace gaussmpm {

using nlohmann::json;

namespace {

std::string image_data_url(const Image& image) {
  return "data:image/png;base64," + base64_encode(encode_png(image));
}

Image decode_base64_png(const std::string& text) {
  std::string payload = text;
  if (const auto comma = payload.find(','); payload.rfind("data:", 0) == 0 && comma != std::string::npos) {
    payload = payload.substr(comma + 1);
  }
  return decode_png(base64_decode(payload));
}

json parse_body(const HttpResponse& r, const std::string& what) {
  try {
    return json::parse(r.body);
  } catch (const json::exception&) {
    throw ClientError(what + ": response is not JSON");
  }
}

std::string env(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string();
}

std::map<std::string, std::string> auth_headers(const EndpointConfig& c) {
  std::map<std::string, std::string> h{{"Content-Type", "application/json"}};
  if (!c.api_key.empty()) h["Authorization"] = "Bearer " + c.api_key;
  return h;
}

class HttplibTransport : public HttpTransport {
 public:
  HttplibTransport(const std::string& base_url, std::chrono::seconds timeout) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: " + base_url);
    const auto path_start = base_url.find('/', scheme_end + 3);
    const std::string origin = path_start == std::string::npos ? base_url : base_url.substr(0, path_start);
    prefix_ = path_start == std::string::npos ? std::string() : base_url.substr(path_start);
    while (!prefix_.empty() && prefix_.back() == '/') prefix_.pop_back();
    client_ = std::make_unique<httplib::Client>(origin);
    if (!client_->is_valid()) throw ConfigError("unusable endpoint URL: " + base_url);
    const auto secs = static_cast<time_t>(timeout.count());
    client_->set_connection_timeout(secs, 0);
    client_->set_read_timeout(secs, 0);
    client_->set_write_timeout(secs, 0);
  }

  HttpResponse post(const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& headers) override {
    httplib::Headers h(headers.begin(), headers.end());
    auto res = client_->Post(prefix_ + path, h, body, "application/json");
    return unwrap(res, path);
  }

  HttpResponse get(const std::string& path, const std::map<std::string, std::string>& headers) override {
    httplib::Headers h(headers.begin(), headers.end());
    auto res = client_->Get(prefix_ + path, h);
    return unwrap(res, path);
  }

 private:
  static HttpResponse unwrap(const httplib::Result& res, const std::string& path) {
    if (!res) throw TransportError("request to " + path + " failed: " + httplib::to_string(res.error()));
    return {res->status, res->body};
  }

  std::unique_ptr<httplib::Client> client_;
  std::string prefix_;
};

}  // namespace

json to_wire_json(const LlmRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    json content = json::array();
    for (const auto& part : m.content) {
      if (part.kind == ContentPart::Kind::Text) {
        content.push_back({{"type", "text"}, {"text", part.text}});
      } else {
        content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_data_url(part.image)}}}});
      }
    }
    messages.push_back({{"role", m.role}, {"content", content}});
  }
  return {{"model", request.model_id}, {"temperature", request.temperature}, {"messages", messages}};
}

json to_wire_json(const VideoRequest& request) {
  return {{"image", base64_encode(encode_png(request.image))},
          {"prompt", request.prompt},
          {"width", request.width},
          {"height", request.height},
          {"frame_count", request.frame_count}};
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 15]);
  }
  return out;
}

std::string request_key(const LlmRequest& request) { return sha256_hex(to_wire_json(request).dump()); }
std::string request_key(const VideoRequest& request) { return sha256_hex(to_wire_json(request).dump()); }

LlmResponse llm_complete(LlmClient& client, const LlmRequest& request) {
  if (request.messages.empty()) throw PreconditionError("LLM request needs at least one message");
  if (request.temperature < 0.0) throw PreconditionError("temperature must be non-negative");
  return client.complete(request);
}

VideoResult generate_video(VideoClient& client, const VideoRequest& request) {
  if (request.image.empty()) throw PreconditionError("video request needs an input image");
  if (request.prompt.empty()) throw PreconditionError("video request needs a prompt");
  if (request.frame_count < 2) throw PreconditionError("video request needs at least 2 frames");
  if (request.width < 1 || request.height < 1) throw PreconditionError("video size must be positive");
  VideoResult result = client.generate(request);
  if (result.frames.size() != static_cast<std::size_t>(request.frame_count)) {
    throw ClientError("video backend returned " + std::to_string(result.frames.size()) + " frames, expected " +
                      std::to_string(request.frame_count));
  }
  return result;
}

std::unique_ptr<HttpTransport> make_http_transport(const std::string& base_url, std::chrono::seconds timeout) {
  return std::make_unique<HttplibTransport>(base_url, timeout);
}

void check_status(const HttpResponse& response, const std::string& what) {
  if (response.status >= 200 && response.status < 300) return;
  const std::string msg = what + ": HTTP " + std::to_string(response.status);
  if (response.status == 401 || response.status == 403) throw AuthError(msg);
  if (response.status >= 500) throw TransportError(msg);
  throw ClientError(msg + ": " + response.body.substr(0, 200));
}

HttpResponse with_retries(const RetryPolicy& policy, const std::function<HttpResponse()>& call) {
  auto delay = policy.initial_delay;
  for (int attempt = 0;; ++attempt) {
    try {
      return call();
    } catch (const AuthError&) {
      throw;
    } catch (const TransportError&) {
      if (attempt >= policy.max_retries) throw;
    }
    if (policy.sleep) {
      policy.sleep(delay);
    } else {
      std::this_thread::sleep_for(delay);
    }
    delay = std::chrono::milliseconds(static_cast<long long>(static_cast<double>(delay.count()) * policy.backoff));
  }
}

std::optional<EndpointConfig> llm_endpoint_from_env() {
  EndpointConfig c;
  c.base_url = env("GAUSSMPM_LLM_ENDPOINT");
  if (c.base_url.empty()) return std::nullopt;
  c.api_key = env("GAUSSMPM_LLM_API_KEY");
  c.model = env("GAUSSMPM_LLM_MODEL");
  if (c.model.empty()) c.model = "gpt-4o";
  return c;
}

std::optional<EndpointConfig> video_endpoint_from_env() {
  EndpointConfig c;
  c.base_url = env("GAUSSMPM_VIDEO_ENDPOINT");
  if (c.base_url.empty()) return std::nullopt;
  c.api_key = env("GAUSSMPM_VIDEO_API_KEY");
  return c;
}

ChatCompletionsClient::ChatCompletionsClient(EndpointConfig config, std::unique_ptr<HttpTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {}

LlmResponse ChatCompletionsClient::complete(const LlmRequest& request) {
  LlmRequest r = request;
  if (!config_.model.empty()) r.model_id = config_.model;
  const std::string body = to_wire_json(r).dump();
  const auto headers = auth_headers(config_);
  const HttpResponse res = with_retries(config_.retry, [&] {
    HttpResponse out = transport_->post("/chat/completions", body, headers);
    check_status(out, "chat completion");
    return out;
  });
  const json j = parse_body(res, "chat completion");
  try {
    LlmResponse out;
    out.text = j.at("choices").at(0).at("message").at("content").get<std::string>();
    if (j.contains("usage")) {
      out.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0);
      out.usage.completion_tokens = j["usage"].value("completion_tokens", 0);
    }
    return out;
  } catch (const json::exception&) {
    throw ClientError("chat completion: malformed response envelope");
  }
}

VideoJobClient::VideoJobClient(EndpointConfig config, std::unique_ptr<HttpTransport> transport,
                               std::chrono::milliseconds poll_interval)
    : config_(std::move(config)), transport_(std::move(transport)), poll_interval_(poll_interval) {}

VideoResult VideoJobClient::generate(const VideoRequest& request) {
  const auto headers = auth_headers(config_);
  const std::string body = to_wire_json(request).dump();
  const HttpResponse submitted = with_retries(config_.retry, [&] {
    HttpResponse out = transport_->post("/jobs", body, headers);
    check_status(out, "video job submit");
    return out;
  });
  std::string id;
  try {
    const json j = parse_body(submitted, "video job submit");
    id = j.at("id").is_string() ? j["id"].get<std::string>() : j["id"].dump();
  } catch (const json::exception&) {
    throw ClientError("video job submit: response lacks a job id");
  }
  const auto deadline = std::chrono::steady_clock::now() + config_.timeout;
  while (true) {
    const HttpResponse polled = with_retries(config_.retry, [&] {
      HttpResponse out = transport_->get("/jobs/" + id, headers);
      check_status(out, "video job poll");
      return out;
    });
    const json j = parse_body(polled, "video job poll");
    const std::string status = j.value("status", "");
    if (status == "done") {
      VideoResult result;
      try {
        for (const auto& f : j.at("frames")) result.frames.push_back(decode_base64_png(f.get<std::string>()));
      } catch (const json::exception&) {
        throw ClientError("video job " + id + ": malformed frame list");
      } catch (const Error& e) {
        throw ClientError("video job " + id + ": undecodable frame: " + e.what());
      }
      return result;
    }
    if (status == "failed") throw ClientError("video job " + id + " failed: " + j.value("error", "unknown"));
    if (std::chrono::steady_clock::now() >= deadline) throw TransportError("video job " + id + " timed out");
    if (config_.retry.sleep) {
      config_.retry.sleep(poll_interval_);
    } else {
      std::this_thread::sleep_for(poll_interval_);
    }
  }
}

}  // namespace gaussmpm
