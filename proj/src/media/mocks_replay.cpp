#include <algorithm>
#include <fstream>

#include "gaussmpm/error.hpp"
#include "gaussmpm/media_clients.hpp"

namespace gaussmpm {

using nlohmann::json;

ScriptedLlm::ScriptedLlm(std::vector<std::string> responses) : responses_(std::move(responses)) {
  if (responses_.empty()) throw PreconditionError("scripted LLM needs at least one response");
}

LlmResponse ScriptedLlm::complete(const LlmRequest& request) {
  const std::size_t i = std::min(requests_.size(), responses_.size() - 1);
  requests_.push_back(request);
  return {responses_[i], {}};
}

LlmResponse EchoLlm::complete(const LlmRequest& request) {
  LlmResponse out;
  if (request.messages.empty()) return out;
  for (const auto& part : request.messages.back().content) {
    if (part.kind == ContentPart::Kind::Text) out.text += part.text;
  }
  return out;
}

VideoResult StaticVideo::generate(const VideoRequest& request) {
  ++calls_;
  return {std::vector<Image>(static_cast<std::size_t>(std::max(request.frame_count, 0)), request.image)};
}

Image draw_square_frame(int width, int height, int left, int size) {
  Image img(width, height);
  const int top = (height - size) / 2;
  for (int y = std::max(0, top); y < std::min(height, top + size); ++y) {
    for (int x = std::max(0, left); x < std::min(width, left + size); ++x) {
      std::uint8_t* p = img.pixel(x, y);
      p[0] = p[1] = p[2] = 255;
    }
  }
  return img;
}

VideoResult TranslatingSquareVideo::generate(const VideoRequest& request) {
  ++calls_;
  VideoResult out;
  for (int f = 0; f < request.frame_count; ++f) {
    out.frames.push_back(draw_square_frame(request.width, request.height, x0_ + step_ * f, size_));
  }
  return out;
}

VideoResult ScriptedMotionVideo::generate(const VideoRequest& request) {
  ++calls_;
  VideoResult out;
  for (int f = 0; f < request.frame_count; ++f) {
    const int left = positions_.empty() ? 0 : positions_[std::min<std::size_t>(static_cast<std::size_t>(f), positions_.size() - 1)];
    out.frames.push_back(draw_square_frame(request.width, request.height, left, size_));
  }
  return out;
}

Transcript Transcript::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open transcript " + path.string());
  Transcript t;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      json j = json::parse(line);
      if (!j.contains("kind") || !j.contains("key") || !j.contains("response")) {
        throw ParseError("transcript " + path.string() + " line " + std::to_string(number) +
                         " lacks kind/key/response");
      }
      t.lines_.push_back(std::move(j));
    } catch (const json::exception& e) {
      throw ParseError("transcript " + path.string() + " line " + std::to_string(number) + ": " + e.what());
    }
  }
  return t;
}

void Transcript::append_llm(const std::string& key, const LlmResponse& response) {
  lines_.push_back({{"kind", "llm"},
                    {"key", key},
                    {"response",
                     {{"text", response.text},
                      {"usage",
                       {{"prompt_tokens", response.usage.prompt_tokens},
                        {"completion_tokens", response.usage.completion_tokens}}}}}});
}

void Transcript::append_video(const std::string& key, const VideoResult& result) {
  json frames = json::array();
  for (const auto& f : result.frames) frames.push_back(base64_encode(encode_png(f)));
  lines_.push_back({{"kind", "video"}, {"key", key}, {"response", {{"frames", frames}}}});
}

void Transcript::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write transcript " + path.string());
  for (const auto& l : lines_) out << l.dump() << '\n';
  if (!out) throw IoError("write failed for transcript " + path.string());
}

namespace {

const json* nth_match(const std::vector<json>& lines, const std::string& kind, const std::string& key,
                      std::size_t& cursor) {
  std::vector<const json*> matches;
  for (const auto& l : lines) {
    if (l["kind"] == kind && l["key"] == key) matches.push_back(&l);
  }
  if (matches.empty()) return nullptr;
  const json* hit = matches[std::min(cursor, matches.size() - 1)];
  ++cursor;
  return hit;
}

}  // namespace

std::optional<LlmResponse> Transcript::next_llm(const std::string& key) {
  const json* hit = nth_match(lines_, "llm", key, cursor_["llm:" + key]);
  if (!hit) return std::nullopt;
  try {
    const json& r = (*hit)["response"];
    LlmResponse out;
    out.text = r.at("text").get<std::string>();
    if (r.contains("usage")) {
      out.usage.prompt_tokens = r["usage"].value("prompt_tokens", 0);
      out.usage.completion_tokens = r["usage"].value("completion_tokens", 0);
    }
    return out;
  } catch (const json::exception& e) {
    throw ParseError(std::string("transcript entry for ") + key + ": " + e.what());
  }
}

std::optional<VideoResult> Transcript::next_video(const std::string& key) {
  const json* hit = nth_match(lines_, "video", key, cursor_["video:" + key]);
  if (!hit) return std::nullopt;
  VideoResult out;
  try {
    for (const auto& f : (*hit)["response"].at("frames")) out.frames.push_back(decode_png(base64_decode(f.get<std::string>())));
  } catch (const json::exception& e) {
    throw ParseError(std::string("transcript entry for ") + key + ": " + e.what());
  }
  return out;
}

LlmResponse ReplayLlm::complete(const LlmRequest& request) {
  const std::string key = request_key(request);
  auto r = transcript_->next_llm(key);
  if (!r) throw ClientError("replay transcript has no LLM response for request " + key);
  return *r;
}

VideoResult ReplayVideo::generate(const VideoRequest& request) {
  const std::string key = request_key(request);
  auto r = transcript_->next_video(key);
  if (!r) throw ClientError("replay transcript has no video for request " + key);
  return *r;
}

LlmResponse RecordingLlm::complete(const LlmRequest& request) {
  LlmResponse r = inner_.complete(request);
  transcript_->append_llm(request_key(request), r);
  return r;
}

VideoResult RecordingVideo::generate(const VideoRequest& request) {
  VideoResult r = inner_.generate(request);
  transcript_->append_video(request_key(request), r);
  return r;
}

}  // namespace gaussmpm
