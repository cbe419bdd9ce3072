#include <fstream>
#include <set>
#include <string>

#include <Eigen/Core>

#include "gaussmpm/error.hpp"
#include "gaussmpm/pipeline.hpp"

namespace gaussmpm {

namespace {

using json = nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError(section + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) throw ConfigError("unknown key '" + key + "' in " + section);
  }
}

Vec3 vec3(const json& j, const std::string& key) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(key + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

std::filesystem::path resolve(const std::filesystem::path& p, const std::filesystem::path& base) {
  if (p.empty() || p.is_absolute() || base.empty()) return p;
  return base / p;
}

}  // namespace

void SceneConfig::validate() const {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1], got " + std::to_string(gamma));
  if (max_iterations < 1) throw ConfigError("max_iterations must be at least 1");
  if (frames_per_query < 2 || frames_per_query > 16) throw ConfigError("frames_per_query must lie in [2, 16]");
  if (frames_per_query > static_cast<std::size_t>(video_frames)) {
    throw ConfigError("frames_per_query exceeds the generated frame count");
  }
  if (video_width < 1 || video_height < 1 || video_frames < 2) throw ConfigError("invalid video dimensions");
  if (!(asset_units_per_metre > 0.0)) throw ConfigError("asset_units_per_metre must be positive");
  if (!(normalize_margin > 0.0 && normalize_margin < 0.5)) throw ConfigError("normalize_margin must lie in (0, 0.5)");
  if (!(dynamics.velocity_direction.norm() > 0.0)) throw ConfigError("velocity_direction must be nonzero");
  if (dynamics.force_direction && !(dynamics.force_direction->norm() > 0.0)) {
    throw ConfigError("force_direction must be nonzero");
  }
  if (dynamics.force_duration && *dynamics.force_duration < 0.0) throw ConfigError("force_duration must be >= 0");
  if (output.checkpoint_every < 1) throw ConfigError("checkpoint_every must be at least 1");
  if (seeding.particles_per_voxel < 1) throw ConfigError("particles_per_voxel must be at least 1");
  if (render.sh_degree < 0 || render.sh_degree > 3) throw ConfigError("render.sh_degree must lie in [0, 3]");
  if (!(render.fill_opacity_scale >= 0.0 && render.fill_opacity_scale <= 1.0)) {
    throw ConfigError("fill_opacity_scale must lie in [0, 1]");
  }
  try {
    sim.validate();
    camera.camera();
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
}

SceneConfig scene_from_json(const json& j, const std::filesystem::path& base_dir) {
  SceneConfig s;
  check_keys(j,
             {"asset", "prompt", "inference", "asset_units_per_metre", "normalize_margin", "sim", "seeding",
              "dynamics", "camera", "render", "output"},
             "scene");
  try {
    if (j.contains("asset")) s.asset_path = resolve(j["asset"].get<std::string>(), base_dir);
    if (j.contains("prompt")) s.initial_prompt = j["prompt"].get<std::string>();
    if (j.contains("inference")) {
      const json& inf = j["inference"];
      check_keys(inf,
                 {"gamma", "max_iterations", "frames_per_query", "video", "model", "reasoning_prompt",
                  "refinement_prompt"},
                 "inference");
      s.gamma = inf.value("gamma", s.gamma);
      s.max_iterations = inf.value("max_iterations", s.max_iterations);
      s.frames_per_query = inf.value("frames_per_query", s.frames_per_query);
      s.llm_model = inf.value("model", s.llm_model);
      if (inf.contains("video")) {
        const json& v = inf["video"];
        check_keys(v, {"width", "height", "frames"}, "inference.video");
        s.video_width = v.value("width", s.video_width);
        s.video_height = v.value("height", s.video_height);
        s.video_frames = v.value("frames", s.video_frames);
      }
      if (inf.contains("reasoning_prompt") && !inf["reasoning_prompt"].is_null()) {
        s.reasoning_prompt_path = resolve(inf["reasoning_prompt"].get<std::string>(), base_dir);
      }
      if (inf.contains("refinement_prompt") && !inf["refinement_prompt"].is_null()) {
        s.refinement_prompt_path = resolve(inf["refinement_prompt"].get<std::string>(), base_dir);
      }
    }
    s.asset_units_per_metre = j.value("asset_units_per_metre", s.asset_units_per_metre);
    s.normalize_margin = j.value("normalize_margin", s.normalize_margin);
    if (j.contains("sim")) s.sim = sim_config_from_json(j["sim"]);
    if (j.contains("seeding")) {
      const json& sd = j["seeding"];
      check_keys(sd, {"internal_fill", "fill_threshold", "particles_per_voxel", "seed", "volume_m3", "sort_by_cell"},
                 "seeding");
      s.seeding.internal_fill = sd.value("internal_fill", s.seeding.internal_fill);
      s.seeding.fill_threshold = sd.value("fill_threshold", s.seeding.fill_threshold);
      s.seeding.particles_per_voxel = sd.value("particles_per_voxel", s.seeding.particles_per_voxel);
      s.seeding.seed = sd.value("seed", s.seeding.seed);
      s.seeding.sort_by_cell = sd.value("sort_by_cell", s.seeding.sort_by_cell);
      if (sd.contains("volume_m3") && !sd["volume_m3"].is_null()) s.seeding.volume_m3 = sd["volume_m3"].get<double>();
    }
    if (j.contains("dynamics")) {
      const json& d = j["dynamics"];
      check_keys(d, {"velocity_direction", "force_direction", "force_duration"}, "dynamics");
      if (d.contains("velocity_direction")) s.dynamics.velocity_direction = vec3(d["velocity_direction"], "velocity_direction");
      if (d.contains("force_direction") && !d["force_direction"].is_null()) {
        s.dynamics.force_direction = vec3(d["force_direction"], "force_direction");
      }
      if (d.contains("force_duration") && !d["force_duration"].is_null()) {
        s.dynamics.force_duration = d["force_duration"].get<double>();
      }
    }
    if (j.contains("camera")) {
      const json& c = j["camera"];
      check_keys(c, {"eye", "target", "up", "fov_y", "width", "height"}, "camera");
      if (c.contains("eye")) s.camera.eye = vec3(c["eye"], "camera.eye");
      if (c.contains("target")) s.camera.target = vec3(c["target"], "camera.target");
      if (c.contains("up")) s.camera.up = vec3(c["up"], "camera.up");
      s.camera.fov_y_deg = c.value("fov_y", s.camera.fov_y_deg);
      s.camera.width = c.value("width", s.camera.width);
      s.camera.height = c.value("height", s.camera.height);
    }
    if (j.contains("render")) {
      const json& r = j["render"];
      check_keys(r, {"sh_degree", "fill_opacity_scale", "background"}, "render");
      s.render.sh_degree = r.value("sh_degree", s.render.sh_degree);
      s.render.fill_opacity_scale = r.value("fill_opacity_scale", s.render.fill_opacity_scale);
      if (r.contains("background")) s.render.background = vec3(r["background"], "render.background");
    }
    if (j.contains("output")) {
      const json& o = j["output"];
      check_keys(o, {"dir", "format", "checkpoint_every", "particle_ply"}, "output");
      if (o.contains("dir")) s.output.dir = o["dir"].get<std::string>();
      if (o.contains("format")) {
        const auto f = o["format"].get<std::string>();
        if (f == "png") {
          s.output.format = FrameFormat::Png;
        } else if (f == "ppm") {
          s.output.format = FrameFormat::Ppm;
        } else {
          throw ConfigError("unknown frame format '" + f + "'");
        }
      }
      s.output.checkpoint_every = o.value("checkpoint_every", s.output.checkpoint_every);
      s.output.particle_ply = o.value("particle_ply", s.output.particle_ply);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("scene: ") + e.what());
  }
  s.seeding.grid_resolution = s.sim.grid_resolution;
  return s;
}

SceneConfig load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scene file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("scene file " + path.string() + " is not valid JSON");
  return scene_from_json(j, path.parent_path());
}

nlohmann::ordered_json to_json(const SceneConfig& s) {
  nlohmann::ordered_json j;
  j["asset"] = s.asset_path.generic_string();
  j["prompt"] = s.initial_prompt;
  nlohmann::ordered_json inf;
  inf["gamma"] = s.gamma;
  inf["max_iterations"] = s.max_iterations;
  inf["frames_per_query"] = s.frames_per_query;
  inf["video"] = {{"width", s.video_width}, {"height", s.video_height}, {"frames", s.video_frames}};
  inf["model"] = s.llm_model;
  inf["reasoning_prompt"] = s.reasoning_prompt_path ? json(s.reasoning_prompt_path->generic_string()) : json(nullptr);
  inf["refinement_prompt"] =
      s.refinement_prompt_path ? json(s.refinement_prompt_path->generic_string()) : json(nullptr);
  j["inference"] = inf;
  j["asset_units_per_metre"] = s.asset_units_per_metre;
  j["normalize_margin"] = s.normalize_margin;
  j["sim"] = to_json(s.sim);
  j["seeding"] = {{"internal_fill", s.seeding.internal_fill},
                  {"fill_threshold", s.seeding.fill_threshold},
                  {"particles_per_voxel", s.seeding.particles_per_voxel},
                  {"seed", s.seeding.seed},
                  {"volume_m3", s.seeding.volume_m3 ? json(*s.seeding.volume_m3) : json(nullptr)},
                  {"sort_by_cell", s.seeding.sort_by_cell}};
  nlohmann::ordered_json dyn;
  dyn["velocity_direction"] = vec_json(s.dynamics.velocity_direction);
  dyn["force_direction"] = s.dynamics.force_direction ? vec_json(*s.dynamics.force_direction) : json(nullptr);
  dyn["force_duration"] = s.dynamics.force_duration ? json(*s.dynamics.force_duration) : json(nullptr);
  j["dynamics"] = dyn;
  nlohmann::ordered_json cam;
  cam["eye"] = vec_json(s.camera.eye);
  cam["target"] = vec_json(s.camera.target);
  cam["up"] = vec_json(s.camera.up);
  cam["fov_y"] = s.camera.fov_y_deg;
  cam["width"] = s.camera.width;
  cam["height"] = s.camera.height;
  j["camera"] = cam;
  j["render"] = {{"sh_degree", s.render.sh_degree},
                 {"fill_opacity_scale", s.render.fill_opacity_scale},
                 {"background", vec_json(s.render.background)}};
  nlohmann::ordered_json out;
  out["dir"] = s.output.dir.generic_string();
  out["format"] = s.output.format == FrameFormat::Png ? "png" : "ppm";
  out["checkpoint_every"] = s.output.checkpoint_every;
  out["particle_ply"] = s.output.particle_ply;
  j["output"] = out;
  return j;
}

std::string config_hash(const SceneConfig& scene) { return sha256_hex(to_json(scene).dump()); }

void apply_overrides(SceneConfig& scene, const SceneOverrides& o) {
  if (o.out) scene.output.dir = *o.out;
  if (o.deterministic && *o.deterministic) scene.sim.mode = ExecutionMode::Deterministic;
  if (o.gamma) scene.gamma = *o.gamma;
  if (o.max_iterations) scene.max_iterations = *o.max_iterations;
  if (o.grid_resolution) {
    scene.sim.grid_resolution = *o.grid_resolution;
    scene.seeding.grid_resolution = *o.grid_resolution;
  }
  if (o.steps) scene.sim.steps = *o.steps;
  if (o.threads) scene.sim.threads = *o.threads;
}

Clients make_clients(const std::optional<std::filesystem::path>& replay_dir) {
  Clients c;
  if (replay_dir) {
    const auto llm_path = *replay_dir / "llm.jsonl";
    const auto video_path = *replay_dir / "video.jsonl";
    if (!std::filesystem::exists(llm_path) || !std::filesystem::exists(video_path)) {
      throw ConfigError("replay directory " + replay_dir->string() + " needs llm.jsonl and video.jsonl");
    }
    c.llm = std::make_unique<ReplayLlm>(std::make_shared<Transcript>(Transcript::load(llm_path)));
    c.video = std::make_unique<ReplayVideo>(std::make_shared<Transcript>(Transcript::load(video_path)));
    return c;
  }
  auto llm = llm_endpoint_from_env();
  auto video = video_endpoint_from_env();
  if (!llm || !video) {
    throw ConfigError(
        "no model backends: set GAUSSMPM_LLM_ENDPOINT/GAUSSMPM_LLM_API_KEY and "
        "GAUSSMPM_VIDEO_ENDPOINT/GAUSSMPM_VIDEO_API_KEY, or pass --replay <dir>");
  }
  auto llm_transport = make_http_transport(llm->base_url, llm->timeout);
  auto video_transport = make_http_transport(video->base_url, video->timeout);
  c.llm = std::make_unique<ChatCompletionsClient>(*llm, std::move(llm_transport));
  c.video = std::make_unique<VideoJobClient>(*video, std::move(video_transport));
  return c;
}

ExitCode exit_code_for_current_exception() {
  try {
    throw;
  } catch (const ConfigError&) {
    return ExitCode::Config;
  } catch (const ParameterError&) {
    return ExitCode::Config;
  } catch (const ClientError&) {
    return ExitCode::ExternalService;
  } catch (const ValidationError&) {
    return ExitCode::Validation;
  } catch (const SchemaError&) {
    return ExitCode::Validation;
  } catch (const InferenceError&) {
    return ExitCode::InferenceParse;
  } catch (...) {
    return ExitCode::Runtime;
  }
}

nlohmann::ordered_json version_info() {
  nlohmann::ordered_json v;
  v["gaussmpm"] = GAUSSMPM_VERSION;
  v["checkpoint_format"] = kCheckpointVersion;
  v["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
               std::to_string(EIGEN_MINOR_VERSION);
  v["nlohmann_json"] = std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                       std::to_string(NLOHMANN_JSON_VERSION_PATCH);
  v["libpng"] = png_library_version();
  v["compiler"] = __VERSION__;
  return v;
}

}  // namespace gaussmpm
