#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaussmpm/checkpoint.hpp"
#include "gaussmpm/gaussian_asset.hpp"
#include "gaussmpm/inference_loop.hpp"
#include "gaussmpm/media_clients.hpp"
#include "gaussmpm/mpm_engine.hpp"

namespace gaussmpm {

enum class ExitCode : int {
  Ok = 0,
  Runtime = 1,
  Config = 2,
  ExternalService = 3,
  Validation = 4,
  InferenceParse = 5,
  EmptyReport = 6,
};

// Maps the current exception onto an exit code. Call from a catch block.
ExitCode exit_code_for_current_exception();

struct CameraConfig {
  Vec3 eye{0.5, 0.45, 2.4};
  Vec3 target{0.5, 0.35, 0.5};
  Vec3 up{0.0, 1.0, 0.0};
  double fov_y_deg = 40.0;
  int width = 320;
  int height = 240;

  Camera camera() const { return Camera::look_at(eye, target, up, fov_y_deg, width, height); }
};

enum class FrameFormat { Png, Ppm };

struct OutputConfig {
  std::filesystem::path dir = "out";
  FrameFormat format = FrameFormat::Png;
  // Checkpoint cadence in output frames; frame 0 and the last frame are
  // always written.
  int checkpoint_every = 10;
  bool particle_ply = false;
};

struct DynamicsConfig {
  // Direction of the reported initial velocity.
  Vec3 velocity_direction{1.0, 0.0, 0.0};
  // Direction of the reported external force. Empty: the velocity
  // direction when the speed is nonzero, else against gravity.
  std::optional<Vec3> force_direction;
  // Seconds the force acts for; empty keeps it on for the whole run.
  std::optional<double> force_duration;
};

struct SceneConfig {
  std::filesystem::path asset_path;
  std::string initial_prompt;
  double gamma = 0.8;
  int max_iterations = 3;
  std::size_t frames_per_query = 7;
  int video_width = 720;
  int video_height = 480;
  int video_frames = 50;
  std::string llm_model = "gpt-4o";
  std::optional<std::filesystem::path> reasoning_prompt_path;
  std::optional<std::filesystem::path> refinement_prompt_path;

  // Asset units per metre; domain length scale = transform scale / this.
  double asset_units_per_metre = 1.0;
  double normalize_margin = 0.1;
  SimConfig sim;
  SeedingConfig seeding;
  DynamicsConfig dynamics;
  CameraConfig camera;
  RenderOptions render;
  OutputConfig output;

  void validate() const;
};

// Unset keys keep their defaults; relative paths resolve against `base_dir`.
// ConfigError on malformed values.
SceneConfig scene_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
SceneConfig load_scene(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const SceneConfig& scene);
// SHA-256 of the compact canonical scene JSON.
std::string config_hash(const SceneConfig& scene);

// Command-line values; each set field wins over the scene file.
struct SceneOverrides {
  std::optional<std::filesystem::path> out;
  std::optional<bool> deterministic;
  std::optional<double> gamma;
  std::optional<int> max_iterations;
  std::optional<int> grid_resolution;
  std::optional<int> steps;
  std::optional<int> threads;
};

void apply_overrides(SceneConfig& scene, const SceneOverrides& overrides);

struct Clients {
  std::unique_ptr<LlmClient> llm;
  std::unique_ptr<VideoClient> video;
};

// Replay transcripts `<dir>/llm.jsonl` and `<dir>/video.jsonl` when a
// directory is given, otherwise HTTP endpoints from the environment.
// ConfigError when neither is available.
Clients make_clients(const std::optional<std::filesystem::path>& replay_dir);

struct StageTiming {
  std::string name;
  double seconds = 0.0;
};

struct FrameRecord {
  std::string file;
  std::string sha256;
};

struct FrameDiagnostics {
  int frame = 0;
  std::uint64_t step = 0;
  double time = 0.0;
  double max_speed = 0.0;
  double total_mass = 0.0;
  double min_det_f = 0.0;
};

FrameDiagnostics diagnose(const SimState& state, int frame);

struct InferOutcome {
  PerceptionResult result;
  std::filesystem::path report_path;
};

// Writes <out>/report.json (report plus the full refinement history).
InferOutcome cmd_infer(const SceneConfig& scene, const Image& image, LlmClient& llm, VideoClient& video,
                       std::ostream& log);

struct SimulateOutcome {
  std::vector<std::filesystem::path> checkpoints;
  std::vector<FrameDiagnostics> diagnostics;
  std::vector<FrameRecord> frames;
  SeedingReport seeding;
};

// Called after every output frame (frame 0 is the initial state).
using FrameCallback = std::function<void(int frame, const SimState& state)>;

// Seeds particles from the asset with the report's material and runs
// scene.sim.steps output frames. Checkpoints go to <out>/checkpoints.
SimulateOutcome cmd_simulate(const SceneConfig& scene, const PropertyReport& report, std::ostream& log,
                             const FrameCallback& on_frame = {});

// One frame per checkpoint in `checkpoints` (a file or a directory), written
// to <out>/frames. IoError when none exist.
std::vector<FrameRecord> cmd_render(const SceneConfig& scene, const std::filesystem::path& checkpoints,
                                    std::ostream& log);

struct PipelineOutcome {
  ExitCode code = ExitCode::Ok;
  std::filesystem::path manifest_path;
  std::vector<FrameRecord> frames;
};

// infer -> to_material_params -> simulate (rendering every frame) and a
// manifest at <out>/manifest.json. An empty report stops after inference
// with ExitCode::EmptyReport.
PipelineOutcome cmd_pipeline(const SceneConfig& scene, const Image& image, LlmClient& llm, VideoClient& video,
                             std::ostream& log);

// Report, checkpoint, manifest or Gaussian PLY summary. ParseError for an
// unknown artifact.
void cmd_inspect(const std::filesystem::path& artifact, bool as_json, std::ostream& out);

// Library and format versions recorded in manifests.
nlohmann::ordered_json version_info();

}  // namespace gaussmpm
