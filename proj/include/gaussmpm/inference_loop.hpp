#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaussmpm/gaussian_asset.hpp"
#include "gaussmpm/material_params.hpp"
#include "gaussmpm/media_clients.hpp"

namespace gaussmpm {

// Bundled prompt assets.
std::string_view default_reasoning_prompt();
std::string_view default_refinement_template();

struct AttributeEstimate {
  double value = 0.0;
  double confidence = 0.0;

  friend bool operator==(const AttributeEstimate&, const AttributeEstimate&) = default;
};

struct PropertyReport {
  std::string class_name;
  MaterialClass material_class = MaterialClass::Elastic;
  double material_confidence = 0.0;
  // Canonical attribute names (see attr::).
  std::map<std::string, AttributeEstimate, std::less<>> attributes;
  std::string raw_response;
  std::vector<std::string> warnings;
  // No movable object in the frames; nothing else is meaningful.
  bool empty = false;

  std::map<std::string, AttributeEstimate, std::less<>> static_params() const;
  std::map<std::string, AttributeEstimate, std::less<>> dynamic_params() const;
  // Every confidence c_i, including "material".
  std::map<std::string, double, std::less<>> confidences() const;
  MaterialParams to_params() const;
};

// Accepts bare JSON, JSON inside markdown fences, or JSON embedded in prose.
// A top-level array or {"objects": [...]} yields its first movable entry;
// `[]`, {"objects": []} or {"movable": false} yield an empty report.
// ParseError when no JSON is found; SchemaError when a required attribute
// is missing or a value is not numeric. Confidences outside [0,1] are
// clamped and a missing confidence counts as 0, both with a warning.
PropertyReport parse_property_report(std::string_view text);

// { i : c_i < gamma }. ParameterError unless 0 < gamma <= 1.
std::set<std::string> low_confidence_mask(const PropertyReport& report, double gamma);

struct PromptAssets {
  std::string reasoning = std::string(default_reasoning_prompt());
  std::string refinement = std::string(default_refinement_template());

  // Missing paths keep the bundled text.
  static PromptAssets load(const std::optional<std::filesystem::path>& reasoning_path,
                           const std::optional<std::filesystem::path>& refinement_path);
};

struct LlmSettings {
  std::string model = "gpt-4o";
  double temperature = 0.0;
};

// Fills the refinement template; exposed for tests and auditing.
std::string build_refinement_request(const std::string& template_text, const std::string& prompt,
                                     const std::set<std::string>& flagged, const PropertyReport& report);

// Motion scenario that best reveals an attribute, used in the refinement
// template.
std::string_view motion_hint(std::string_view attribute);

// PreconditionError when `flagged` is empty. Returns the LLM's rewritten
// prompt with surrounding whitespace, quotes and fences removed.
std::string refine_prompt(LlmClient& llm, const std::string& prompt, const std::set<std::string>& flagged,
                          const PropertyReport& report, const PromptAssets& assets = {},
                          const LlmSettings& settings = {});

struct ReasoningAttempt {
  std::vector<std::string> raw_responses;
  std::optional<PropertyReport> report;
  std::string error;
};

// One multimodal query with the reasoning prompt, the video prompt and the
// frames. Re-queries once on a parse or schema failure, then throws
// InferenceError carrying both raw responses. PreconditionError unless
// 1 <= frames <= 16.
PropertyReport run_three_stage_reasoning(LlmClient& llm, const std::vector<Image>& frames, const std::string& prompt,
                                         const PromptAssets& assets = {}, const LlmSettings& settings = {},
                                         std::vector<std::string>* raw_responses = nullptr);

struct IterationRecord {
  int iteration = 0;
  std::string prompt;
  std::optional<PropertyReport> report;
  std::set<std::string> flagged;
  std::vector<std::string> raw_responses;
  std::vector<std::size_t> frame_indices;
  std::string error;
};

struct RefinementState {
  int iteration = 0;
  std::string prompt;
  std::optional<PropertyReport> report;
  std::set<std::string> flagged;
  std::vector<IterationRecord> history;
};

enum class PerceptionStatus { Converged, BudgetExhausted, EmptyReport };
std::string_view to_string(PerceptionStatus s);

struct PerceptionOptions {
  double gamma = 0.8;
  int max_iterations = 3;
  std::size_t frames_per_query = 7;
  int video_width = 720;
  int video_height = 480;
  int video_frames = 50;
  LlmSettings llm;
  PromptAssets assets;
};

struct PerceptionResult {
  PropertyReport report;
  RefinementState state;
  PerceptionStatus status = PerceptionStatus::Converged;
  // Iteration whose report was kept.
  int selected_iteration = 0;
  int videos_generated = 0;
  int refinements = 0;
};

// generate video -> subsample -> reason -> mask -> refine, at most
// max_iterations refinements. A converged iteration wins; otherwise the one
// with the fewest flagged attributes, latest on ties. Iterations whose reply
// never parses keep the prompt unchanged; InferenceError when all fail.
// Client errors propagate with the iteration index in the message.
PerceptionResult run_perception(LlmClient& llm, VideoClient& video, const Image& image, const std::string& p0,
                                const PerceptionOptions& options = {});

// Converted simulation inputs. Dynamic values: km/h -> m/s -> domain
// units/s via the transform scale; force stays in newtons.
struct MaterialAssignment {
  MaterialParams params;
  double initial_speed_mps = 0.0;
  double initial_speed_domain = 0.0;
  double external_force_n = 0.0;
  std::vector<std::string> warnings;
};

inline double kmh_to_mps(double kmh) { return kmh / 3.6; }

// SchemaError when incomplete, ValidationError on an invariant violation.
MaterialAssignment to_material_params(const PropertyReport& report, const DomainTransform& transform);

nlohmann::ordered_json to_json(const PropertyReport& report);
PropertyReport property_report_from_json(const nlohmann::json& j);
nlohmann::ordered_json to_json(const PerceptionResult& result);
// Accepts a full perception document or a bare report object.
PropertyReport load_report_file(const std::filesystem::path& path);

}  // namespace gaussmpm
