#include <algorithm>
#include <deque>
#include <fstream>

#include <gtest/gtest.h>

#include "gaussmpm/error.hpp"
#include "gaussmpm/media_clients.hpp"
#include "test_support.hpp"

using namespace gaussmpm;
using gaussmpm::testing::scratch_dir;
using nlohmann::json;

namespace {

// Replays canned responses; a status of 0 stands for a dropped connection.
class FakeTransport : public HttpTransport {
 public:
  struct Call {
    std::string method, path, body;
    std::map<std::string, std::string> headers;
  };

  explicit FakeTransport(std::deque<HttpResponse> replies) : replies_(std::move(replies)) {}

  HttpResponse post(const std::string& path, const std::string& body,
                    const std::map<std::string, std::string>& headers) override {
    calls->push_back({"POST", path, body, headers});
    return next();
  }
  HttpResponse get(const std::string& path, const std::map<std::string, std::string>& headers) override {
    calls->push_back({"GET", path, {}, headers});
    return next();
  }

  std::shared_ptr<std::vector<Call>> calls = std::make_shared<std::vector<Call>>();

 private:
  HttpResponse next() {
    if (replies_.empty()) throw TransportError("no more replies");
    HttpResponse r = replies_.front();
    replies_.pop_front();
    if (r.status == 0) throw TransportError("connection reset");
    return r;
  }
  std::deque<HttpResponse> replies_;
};

std::string chat_body(const std::string& text) {
  return json{{"choices", {{{"message", {{"role", "assistant"}, {"content", text}}}}}},
              {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}}
      .dump();
}

EndpointConfig test_endpoint(std::vector<std::chrono::milliseconds>* sleeps) {
  EndpointConfig c;
  c.base_url = "http://localhost:1";
  c.api_key = "secret";
  c.retry.sleep = [sleeps](std::chrono::milliseconds d) { sleeps->push_back(d); };
  return c;
}

LlmRequest hello_request() {
  LlmRequest r;
  r.messages.push_back({"user", {ContentPart::make_text("hello")}});
  return r;
}

struct ChatFixture {
  std::vector<std::chrono::milliseconds> sleeps;
  std::shared_ptr<std::vector<FakeTransport::Call>> calls;
  std::unique_ptr<ChatCompletionsClient> client;

  explicit ChatFixture(std::deque<HttpResponse> replies) {
    auto t = std::make_unique<FakeTransport>(std::move(replies));
    calls = t->calls;
    client = std::make_unique<ChatCompletionsClient>(test_endpoint(&sleeps), std::move(t));
  }
};

}  // namespace

TEST(ChatClient, ParsesEnvelopeAndSendsAuth) {
  ChatFixture f({{200, chat_body("hi there")}});
  const LlmResponse r = f.client->complete(hello_request());
  EXPECT_EQ(r.text, "hi there");
  EXPECT_EQ(r.usage.prompt_tokens, 12);
  EXPECT_EQ(r.usage.completion_tokens, 3);
  ASSERT_EQ(f.calls->size(), 1u);
  const auto& call = f.calls->front();
  EXPECT_EQ(call.path, "/chat/completions");
  EXPECT_EQ(call.headers.at("Authorization"), "Bearer secret");
  const json body = json::parse(call.body);
  EXPECT_EQ(body["model"], "gpt-4o");
  EXPECT_EQ(body["temperature"], 0.0);
  EXPECT_EQ(body["messages"][0]["content"][0]["text"], "hello");
}

TEST(ChatClient, RetriesTransientFailuresWithBackoff) {
  ChatFixture f({{0, ""}, {503, "busy"}, {200, chat_body("ok")}});
  EXPECT_EQ(f.client->complete(hello_request()).text, "ok");
  EXPECT_EQ(f.calls->size(), 3u);
  ASSERT_EQ(f.sleeps.size(), 2u);
  EXPECT_EQ(f.sleeps[0].count(), 500);
  EXPECT_EQ(f.sleeps[1].count(), 1000);
}

TEST(ChatClient, GivesUpAfterTwoRetries) {
  ChatFixture f({{500, ""}, {500, ""}, {500, ""}, {200, chat_body("late")}});
  EXPECT_THROW(f.client->complete(hello_request()), TransportError);
  EXPECT_EQ(f.calls->size(), 3u);
}

TEST(ChatClient, AuthFailuresAreNotRetried) {
  for (int status : {401, 403}) {
    ChatFixture f({{status, "denied"}, {200, chat_body("never")}});
    EXPECT_THROW(f.client->complete(hello_request()), AuthError);
    EXPECT_EQ(f.calls->size(), 1u);
    EXPECT_TRUE(f.sleeps.empty());
  }
}

TEST(ChatClient, ClientErrorsAndBadEnvelopes) {
  {
    ChatFixture f({{400, "bad request"}});
    EXPECT_THROW(f.client->complete(hello_request()), ClientError);
    EXPECT_EQ(f.calls->size(), 1u);
  }
  {
    ChatFixture f({{200, "not json"}});
    EXPECT_THROW(f.client->complete(hello_request()), ClientError);
  }
  {
    ChatFixture f({{200, R"({"choices": []})"}});
    EXPECT_THROW(f.client->complete(hello_request()), ClientError);
  }
}

TEST(WireJson, ImagesBecomeDataUrls) {
  LlmRequest r = hello_request();
  Image img(2, 2);
  r.messages[0].content.push_back(ContentPart::make_image(img));
  const json j = to_wire_json(r);
  const std::string url = j["messages"][0]["content"][1]["image_url"]["url"];
  EXPECT_EQ(url.rfind("data:image/png;base64,", 0), 0u);
  EXPECT_EQ(decode_png(base64_decode(url.substr(22))), img);
  EXPECT_EQ(request_key(r), sha256_hex(j.dump()));
}

TEST(Sha256, KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

namespace {

std::string png_b64(const Image& img) { return base64_encode(encode_png(img)); }

}  // namespace

TEST(VideoJob, SubmitsThenPollsUntilDone) {
  const Image a = draw_square_frame(8, 6, 1, 2);
  const Image b = draw_square_frame(8, 6, 3, 2);
  std::vector<std::chrono::milliseconds> sleeps;
  auto t = std::make_unique<FakeTransport>(std::deque<HttpResponse>{
      {202, R"({"id": "job-7"})"},
      {200, R"({"status": "running"})"},
      {502, ""},
      {200, json{{"status", "done"}, {"frames", {png_b64(a), "data:image/png;base64," + png_b64(b)}}}.dump()}});
  auto calls = t->calls;
  VideoJobClient client(test_endpoint(&sleeps), std::move(t), std::chrono::milliseconds(7));
  VideoRequest req;
  req.image = a;
  req.prompt = "move";
  req.frame_count = 2;
  const VideoResult r = generate_video(client, req);
  ASSERT_EQ(r.frames.size(), 2u);
  EXPECT_EQ(r.frames[0], a);
  EXPECT_EQ(r.frames[1], b);
  ASSERT_EQ(calls->size(), 4u);
  EXPECT_EQ((*calls)[0].path, "/jobs");
  EXPECT_EQ((*calls)[1].path, "/jobs/job-7");
  EXPECT_EQ(json::parse((*calls)[0].body)["frame_count"], 2);
  // one poll interval, then one retry backoff
  ASSERT_EQ(sleeps.size(), 2u);
  EXPECT_EQ(sleeps[0].count(), 7);
  EXPECT_EQ(sleeps[1].count(), 500);
}

TEST(VideoJob, FailedJobAndFrameCountMismatch) {
  std::vector<std::chrono::milliseconds> sleeps;
  {
    auto t = std::make_unique<FakeTransport>(std::deque<HttpResponse>{
        {200, R"({"id": 3})"}, {200, R"({"status": "failed", "error": "quota"})"}});
    VideoJobClient client(test_endpoint(&sleeps), std::move(t));
    VideoRequest req{draw_square_frame(8, 6, 1, 2), "p", 8, 6, 2};
    try {
      client.generate(req);
      FAIL() << "expected ClientError";
    } catch (const ClientError& e) {
      EXPECT_NE(std::string(e.what()).find("quota"), std::string::npos);
    }
  }
  {
    auto t = std::make_unique<FakeTransport>(std::deque<HttpResponse>{
        {200, R"({"id": "x"})"},
        {200, json{{"status", "done"}, {"frames", {png_b64(draw_square_frame(8, 6, 1, 2))}}}.dump()}});
    VideoJobClient client(test_endpoint(&sleeps), std::move(t));
    VideoRequest req{draw_square_frame(8, 6, 1, 2), "p", 8, 6, 2};
    EXPECT_THROW(generate_video(client, req), ClientError);
  }
}

TEST(VideoRequest, Preconditions) {
  StaticVideo v;
  VideoRequest req;
  EXPECT_THROW(generate_video(v, req), PreconditionError);
  req.image = Image(4, 4);
  EXPECT_THROW(generate_video(v, req), PreconditionError);
  req.prompt = "p";
  req.frame_count = 1;
  EXPECT_THROW(generate_video(v, req), PreconditionError);
  req.frame_count = 3;
  EXPECT_EQ(generate_video(v, req).frames.size(), 3u);
  EchoLlm echo;
  EXPECT_THROW(llm_complete(echo, LlmRequest{}), PreconditionError);
}

TEST(Mocks, ScriptedRepeatsLastAndEchoConcatenates) {
  ScriptedLlm s({"a", "b"});
  EXPECT_EQ(s.complete(hello_request()).text, "a");
  EXPECT_EQ(s.complete(hello_request()).text, "b");
  EXPECT_EQ(s.complete(hello_request()).text, "b");
  EXPECT_EQ(s.calls(), 3u);
  LlmRequest r;
  r.messages.push_back({"user", {ContentPart::make_text("one "), ContentPart::make_text("two")}});
  EchoLlm e;
  EXPECT_EQ(e.complete(r).text, "one two");
}

TEST(Replay, RecordedExchangesReplayByteExact) {
  const auto dir = scratch_dir("replay");
  auto llm_t = std::make_shared<Transcript>();
  auto vid_t = std::make_shared<Transcript>();
  ScriptedLlm inner({"first", "second"});
  TranslatingSquareVideo inner_video(3, 1, 2);
  RecordingLlm rec(inner, llm_t);
  RecordingVideo rec_v(inner_video, vid_t);
  const LlmRequest q = hello_request();
  LlmRequest q2 = q;
  q2.temperature = 0.5;
  rec.complete(q);
  rec.complete(q2);
  VideoRequest vr{draw_square_frame(16, 8, 0, 3), "go", 16, 8, 4};
  const VideoResult recorded = rec_v.generate(vr);
  llm_t->save(dir / "llm.jsonl");
  vid_t->save(dir / "video.jsonl");

  ReplayLlm replay(std::make_shared<Transcript>(Transcript::load(dir / "llm.jsonl")));
  ReplayVideo replay_v(std::make_shared<Transcript>(Transcript::load(dir / "video.jsonl")));
  EXPECT_EQ(replay.complete(q2).text, "second");
  EXPECT_EQ(replay.complete(q).text, "first");
  const VideoResult back = replay_v.generate(vr);
  ASSERT_EQ(back.frames.size(), recorded.frames.size());
  for (std::size_t i = 0; i < back.frames.size(); ++i) EXPECT_EQ(back.frames[i], recorded.frames[i]);

  LlmRequest unknown = q;
  unknown.model_id = "other";
  EXPECT_THROW(replay.complete(unknown), ClientError);
}

TEST(Replay, MalformedTranscriptIsParseError) {
  const auto dir = scratch_dir("replay_bad");
  {
    std::ofstream out(dir / "t.jsonl");
    out << "{\"kind\": \"llm\"\n";
  }
  EXPECT_THROW(Transcript::load(dir / "t.jsonl"), ParseError);
  EXPECT_THROW(Transcript::load(dir / "none.jsonl"), IoError);
}

namespace {

std::vector<Image> still_frames(std::size_t n) { return std::vector<Image>(n, draw_square_frame(64, 48, 10, 8)); }

}  // namespace

TEST(Subsample, IdenticalFramesAreUniform) {
  const auto idx = subsample_indices(still_frames(50), 7);
  const std::vector<std::size_t> want = {0, 8, 16, 25, 33, 41, 49};
  EXPECT_EQ(idx, want);
}

TEST(Subsample, ConcentratedMotionDrawsPicks) {
  std::vector<int> pos(40, 5);
  for (int f = 40; f < 50; ++f) pos.push_back(5 + 4 * (f - 39));
  ScriptedMotionVideo v(8, pos);
  const VideoResult r = v.generate(VideoRequest{Image(64, 48), "p", 64, 48, 50});
  const auto idx = subsample_indices(r.frames, 7);
  ASSERT_EQ(idx.size(), 7u);
  EXPECT_EQ(idx.front(), 0u);
  EXPECT_EQ(idx.back(), 49u);
  int late = 0;
  for (auto i : idx) late += i >= 40 ? 1 : 0;
  EXPECT_GE(late, 3);
  EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
  EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
}

TEST(Subsample, EdgeCases) {
  const auto all = subsample_indices(still_frames(5), 5);
  EXPECT_EQ(all, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(subsample_indices(still_frames(5), 2), (std::vector<std::size_t>{0, 4}));
  EXPECT_THROW(subsample_indices(still_frames(5), 1), ParameterError);
  EXPECT_THROW(subsample_indices(still_frames(5), 6), ParameterError);
  EXPECT_EQ(subsample_frames(still_frames(9), 3).size(), 3u);
}

TEST(Subsample, MotionProfileOfTranslatingSquare) {
  TranslatingSquareVideo v(16, 0, 16);
  const VideoResult r = v.generate(VideoRequest{Image(64, 64), "p", 64, 64, 3});
  const auto d = motion_profile(r.frames);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_GT(d[0], 0.0);
  EXPECT_NEAR(d[0], d[1], 1e-12);
  EXPECT_TRUE(motion_profile(still_frames(3))[0] == 0.0);
}
