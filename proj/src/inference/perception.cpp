#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "gaussmpm/error.hpp"
#include "gaussmpm/inference_loop.hpp"

namespace gaussmpm {

namespace {

constexpr std::size_t kMaxFrames = 16;

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open prompt file " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void replace_all(std::string& s, std::string_view from, const std::string& to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
}

std::string format(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Trims whitespace, a surrounding code fence and matching quotes.
std::string clean_prompt(std::string_view text) {
  std::string s(text);
  auto trim = [](std::string& t) {
    std::size_t b = 0, e = t.size();
    while (b < e && std::isspace(static_cast<unsigned char>(t[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(t[e - 1]))) --e;
    t = t.substr(b, e - b);
  };
  trim(s);
  if (s.starts_with("```")) {
    const std::size_t nl = s.find('\n');
    const std::size_t close = s.rfind("```");
    if (nl != std::string::npos && close != std::string::npos && close > nl) s = s.substr(nl + 1, close - nl - 1);
    trim(s);
  }
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    s = s.substr(1, s.size() - 2);
    trim(s);
  }
  return s;
}

LlmRequest text_request(std::string text, const LlmSettings& settings) {
  LlmRequest req;
  req.model_id = settings.model;
  req.temperature = settings.temperature;
  req.messages.push_back({"user", {ContentPart::make_text(std::move(text))}});
  return req;
}

std::string with_iteration(int t, const std::string& what) { return "iteration " + std::to_string(t) + ": " + what; }

template <class E>
[[noreturn]] void rethrow_tagged(int t, const E& e) {
  throw E(with_iteration(t, e.what()));
}

}  // namespace

PromptAssets PromptAssets::load(const std::optional<std::filesystem::path>& reasoning_path,
                                const std::optional<std::filesystem::path>& refinement_path) {
  PromptAssets a;
  if (reasoning_path) a.reasoning = read_text(*reasoning_path);
  if (refinement_path) a.refinement = read_text(*refinement_path);
  return a;
}

std::string_view motion_hint(std::string_view attribute) {
  static const std::map<std::string_view, std::string_view> hints = {
      {attr::kMass, "free fall under gravity"},
      {attr::kMaterial, "burning, melting or breaking apart"},
      {attr::kDensity, "dropping into water and floating or sinking"},
      {attr::kYoungsModulus, "bouncing off the ground or being compressed"},
      {attr::kPoissonsRatio, "being squeezed so its sides bulge"},
      {attr::kYieldStress, "being pressed hard enough to leave a permanent dent"},
      {attr::kFrictionAngle, "being poured into a pile"},
      {attr::kFluidViscosity, "being poured and flowing across a surface"},
      {attr::kBulkModulus, "being compressed or splashing on impact"},
      {attr::kShearModulus, "wobbling after a tap"},
      {attr::kPlasticViscosity, "flowing slowly after a push"},
      {attr::kExternalForce, "being pushed or thrown"},
      {attr::kInitialVelocity, "already moving at the start of the clip"},
  };
  auto it = hints.find(attribute);
  return it == hints.end() ? std::string_view("moving in a way that clearly shows this property") : it->second;
}

std::string build_refinement_request(const std::string& template_text, const std::string& prompt,
                                     const std::set<std::string>& flagged, const PropertyReport& report) {
  std::string estimates;
  estimates += "- material: " + std::string(to_string(report.material_class)) + " (" +
               format(report.material_confidence) + ")\n";
  for (const auto& [name, est] : report.attributes) {
    estimates += "- " + name + ": " + format(est.value) + " (" + format(est.confidence) + ")\n";
  }
  std::string names, hints;
  for (const auto& name : flagged) {
    names += "- " + name + "\n";
    hints += "- " + name + ": " + std::string(motion_hint(name)) + "\n";
  }
  auto chomp = [](std::string& s) {
    if (!s.empty() && s.back() == '\n') s.pop_back();
  };
  chomp(estimates);
  chomp(names);
  chomp(hints);
  std::string out = template_text;
  replace_all(out, "{{PROMPT}}", prompt);
  replace_all(out, "{{CLASS_NAME}}", report.class_name.empty() ? "unknown" : report.class_name);
  replace_all(out, "{{MATERIAL}}", std::string(to_string(report.material_class)));
  replace_all(out, "{{ESTIMATES}}", estimates);
  replace_all(out, "{{FLAGGED}}", names);
  replace_all(out, "{{MOTION_HINTS}}", hints);
  return out;
}

std::string refine_prompt(LlmClient& llm, const std::string& prompt, const std::set<std::string>& flagged,
                          const PropertyReport& report, const PromptAssets& assets, const LlmSettings& settings) {
  if (flagged.empty()) throw PreconditionError("refine_prompt needs at least one flagged attribute");
  const LlmResponse resp =
      llm_complete(llm, text_request(build_refinement_request(assets.refinement, prompt, flagged, report), settings));
  std::string next = clean_prompt(resp.text);
  if (next.empty()) throw ClientError("refinement reply was empty");
  return next;
}

PropertyReport run_three_stage_reasoning(LlmClient& llm, const std::vector<Image>& frames, const std::string& prompt,
                                         const PromptAssets& assets, const LlmSettings& settings,
                                         std::vector<std::string>* raw_responses) {
  if (frames.empty() || frames.size() > kMaxFrames) {
    throw PreconditionError("reasoning needs 1 to 16 frames, got " + std::to_string(frames.size()));
  }
  LlmRequest req;
  req.model_id = settings.model;
  req.temperature = settings.temperature;
  LlmMessage msg{"user", {}};
  msg.content.push_back(ContentPart::make_text(assets.reasoning));
  msg.content.push_back(ContentPart::make_text("The frames below come from a video generated with the prompt: " + prompt));
  for (const Image& f : frames) msg.content.push_back(ContentPart::make_image(f));
  req.messages.push_back(std::move(msg));

  std::vector<std::string> raws;
  std::string first_error;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const LlmResponse resp = llm_complete(llm, req);
    raws.push_back(resp.text);
    if (raw_responses) raw_responses->push_back(resp.text);
    try {
      return parse_property_report(resp.text);
    } catch (const ParseError& e) {
      if (attempt == 0) first_error = e.what();
      else first_error += "; " + std::string(e.what());
    } catch (const SchemaError& e) {
      if (attempt == 0) first_error = e.what();
      else first_error += "; " + std::string(e.what());
    }
  }
  std::string msg_text = "model reply could not be parsed after one retry (" + first_error + ")";
  for (std::size_t i = 0; i < raws.size(); ++i) msg_text += "\nresponse " + std::to_string(i + 1) + ": " + raws[i];
  throw InferenceError(msg_text);
}

std::string_view to_string(PerceptionStatus s) {
  switch (s) {
    case PerceptionStatus::Converged: return "converged";
    case PerceptionStatus::BudgetExhausted: return "budget_exhausted";
    case PerceptionStatus::EmptyReport: return "empty_report";
  }
  return "unknown";
}

PerceptionResult run_perception(LlmClient& llm, VideoClient& video, const Image& image, const std::string& p0,
                                const PerceptionOptions& options) {
  if (image.width < 1 || image.height < 1) throw PreconditionError("perception needs a non-empty image");
  if (p0.empty()) throw PreconditionError("initial prompt must not be empty");
  if (options.max_iterations < 1) throw ParameterError("max_iterations must be at least 1");
  if (!(options.gamma > 0.0 && options.gamma <= 1.0)) throw ParameterError("gamma must lie in (0, 1]");
  if (options.frames_per_query < 2 || options.frames_per_query > kMaxFrames) {
    throw ParameterError("frames_per_query must lie in [2, 16]");
  }

  PerceptionResult result;
  RefinementState& state = result.state;
  state.prompt = p0;
  std::optional<int> best;
  for (int t = 0; t <= options.max_iterations; ++t) {
    state.iteration = t;
    IterationRecord rec;
    rec.iteration = t;
    rec.prompt = state.prompt;

    VideoRequest vreq{image, state.prompt, options.video_width, options.video_height, options.video_frames};
    VideoResult clip;
    try {
      clip = generate_video(video, vreq);
    } catch (const AuthError& e) {
      rethrow_tagged(t, e);
    } catch (const TransportError& e) {
      rethrow_tagged(t, e);
    } catch (const ClientError& e) {
      rethrow_tagged(t, e);
    }
    ++result.videos_generated;
    const std::size_t k = std::min(options.frames_per_query, clip.frames.size());
    rec.frame_indices = subsample_indices(clip.frames, k);
    std::vector<Image> frames;
    frames.reserve(rec.frame_indices.size());
    for (std::size_t idx : rec.frame_indices) frames.push_back(clip.frames[idx]);

    try {
      rec.report = run_three_stage_reasoning(llm, frames, state.prompt, options.assets, options.llm, &rec.raw_responses);
    } catch (const InferenceError& e) {
      rec.error = e.what();
    }

    if (rec.report && rec.report->empty) {
      state.report = rec.report;
      state.flagged.clear();
      state.history.push_back(rec);
      result.report = *rec.report;
      result.status = PerceptionStatus::EmptyReport;
      result.selected_iteration = t;
      return result;
    }

    if (rec.report) {
      rec.flagged = low_confidence_mask(*rec.report, options.gamma);
      state.report = rec.report;
      state.flagged = rec.flagged;
      const std::size_t h = state.history.size();
      if (!best || rec.flagged.size() <= state.history[static_cast<std::size_t>(*best)].flagged.size()) {
        best = static_cast<int>(h);
      }
    }
    state.history.push_back(rec);

    if (rec.report && rec.flagged.empty()) {
      result.report = *rec.report;
      result.status = PerceptionStatus::Converged;
      result.selected_iteration = t;
      return result;
    }
    if (t == options.max_iterations) break;

    // An unparseable iteration retries the same prompt.
    if (rec.report) {
      try {
        state.prompt = refine_prompt(llm, state.prompt, rec.flagged, *rec.report, options.assets, options.llm);
      } catch (const AuthError& e) {
        rethrow_tagged(t, e);
      } catch (const TransportError& e) {
        rethrow_tagged(t, e);
      } catch (const ClientError& e) {
        rethrow_tagged(t, e);
      }
      ++result.refinements;
    }
  }

  if (!best) {
    std::string msg = "no iteration produced a usable report";
    for (const auto& rec : state.history) msg += "\n" + with_iteration(rec.iteration, rec.error);
    throw InferenceError(msg);
  }
  const IterationRecord& chosen = state.history[static_cast<std::size_t>(*best)];
  result.report = *chosen.report;
  result.selected_iteration = chosen.iteration;
  result.status = PerceptionStatus::BudgetExhausted;
  return result;
}

nlohmann::ordered_json to_json(const PerceptionResult& result) {
  nlohmann::ordered_json j;
  j["status"] = std::string(to_string(result.status));
  j["selected_iteration"] = result.selected_iteration;
  j["videos_generated"] = result.videos_generated;
  j["refinements"] = result.refinements;
  j["final_prompt"] = result.state.prompt;
  j["flagged"] = result.state.flagged;
  j["report"] = to_json(result.report);
  nlohmann::ordered_json history = nlohmann::ordered_json::array();
  for (const auto& rec : result.state.history) {
    nlohmann::ordered_json h;
    h["iteration"] = rec.iteration;
    h["prompt"] = rec.prompt;
    h["frame_indices"] = rec.frame_indices;
    h["raw_responses"] = rec.raw_responses;
    h["flagged"] = rec.flagged;
    if (rec.report) h["report"] = to_json(*rec.report);
    if (!rec.error.empty()) h["error"] = rec.error;
    history.push_back(std::move(h));
  }
  j["history"] = std::move(history);
  return j;
}

}  // namespace gaussmpm
