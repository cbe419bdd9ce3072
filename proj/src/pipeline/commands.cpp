#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#include "gaussmpm/error.hpp"
#include "gaussmpm/pipeline.hpp"

namespace gaussmpm {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string frame_name(int frame, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04d.%s", frame, ext);
  return buf;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

// Writes the frame and returns the hash of the exact bytes on disk.
FrameRecord write_frame(const Image& image, const fs::path& dir, int frame, FrameFormat format) {
  std::string bytes;
  std::string name;
  if (format == FrameFormat::Png) {
    const auto png = encode_png(image);
    bytes.assign(png.begin(), png.end());
    name = frame_name(frame, "png");
  } else {
    bytes = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
    bytes.append(image.rgb.begin(), image.rgb.end());
    name = frame_name(frame, "ppm");
  }
  write_text(dir / name, bytes);
  return {name, sha256_hex(bytes)};
}

GaussianCloud load_normalized(const SceneConfig& scene) {
  if (scene.asset_path.empty()) throw ConfigError("scene has no asset path");
  return normalize_to_domain(load_ply(scene.asset_path), scene.normalize_margin);
}

double length_scale_of(const SceneConfig& scene, const GaussianCloud& normalized) {
  return normalized.domain_transform.scale / scene.asset_units_per_metre;
}

std::string format_diag(const FrameDiagnostics& d) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "frame %4d  step %7llu  t %.5f s  vmax %.4e  mass %.6e  min det F %.4e", d.frame,
                static_cast<unsigned long long>(d.step), d.time, d.max_speed, d.total_mass, d.min_det_f);
  return buf;
}

struct PreparedScene {
  GaussianCloud cloud;
  MaterialAssignment assignment;
  SimConfig sim;
  SeedingConfig seeding;
  SolverMaterial material;
  std::optional<double> force_duration;
};

PreparedScene prepare(const SceneConfig& scene, const PropertyReport& report) {
  if (report.empty) throw PreconditionError("report names no movable object; nothing to simulate");
  PreparedScene p;
  p.cloud = load_normalized(scene);
  const double s = length_scale_of(scene, p.cloud);
  p.assignment = to_material_params(report, DomainTransform{s, p.cloud.domain_transform.translation});
  p.material = make_solver_material(p.assignment.params, s);

  p.sim = scene.sim;
  p.sim.length_scale = s;
  const Vec3 vdir = scene.dynamics.velocity_direction.normalized();
  Vec3 fdir;
  if (scene.dynamics.force_direction) {
    fdir = scene.dynamics.force_direction->normalized();
  } else if (p.assignment.initial_speed_mps > 0.0) {
    fdir = vdir;
  } else if (p.sim.gravity.norm() > 0.0) {
    fdir = -p.sim.gravity.normalized();
  } else {
    fdir = Vec3::UnitY();
  }
  p.sim.external_force = p.sim.external_force + p.assignment.external_force_n * fdir;
  p.force_duration = scene.dynamics.force_duration;

  p.seeding = scene.seeding;
  p.seeding.grid_resolution = p.sim.grid_resolution;
  p.seeding.density = p.assignment.params.get_or(attr::kDensity, p.seeding.density);
  p.seeding.initial_velocity = p.assignment.initial_speed_domain * vdir;
  p.seeding.length_scale = s;
  p.seeding.material_id = 0;
  return p;
}

std::vector<fs::path> list_checkpoints(const fs::path& where) {
  std::vector<fs::path> out;
  if (fs::is_regular_file(where)) {
    out.push_back(where);
    return out;
  }
  if (!fs::is_directory(where)) throw IoError("no checkpoints at " + where.string());
  for (const auto& entry : fs::directory_iterator(where)) {
    if (entry.is_regular_file() && entry.path().extension() == ".gmpm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IoError("no checkpoints in " + where.string());
  return out;
}

std::string read_prefix(const fs::path& path, std::size_t n) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  s.resize(static_cast<std::size_t>(in.gcount()));
  return s;
}

nlohmann::ordered_json bounds_json(const Vec3& lo, const Vec3& hi) {
  return {{"min", {lo.x(), lo.y(), lo.z()}}, {"max", {hi.x(), hi.y(), hi.z()}}};
}

std::string fmt(double v, const char* pattern = "%.6g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

}  // namespace

FrameDiagnostics diagnose(const SimState& state, int frame) {
  FrameDiagnostics d;
  d.frame = frame;
  d.step = state.step_count;
  d.time = state.time;
  d.min_det_f = state.particles.empty() ? 1.0 : std::numeric_limits<double>::infinity();
  for (const auto& p : state.particles) {
    d.max_speed = std::max(d.max_speed, p.velocity.norm());
    d.total_mass += p.mass;
    d.min_det_f = std::min(d.min_det_f, p.deformation_gradient.determinant());
  }
  return d;
}

InferOutcome cmd_infer(const SceneConfig& scene, const Image& image, LlmClient& llm, VideoClient& video,
                       std::ostream& log) {
  scene.validate();
  if (scene.initial_prompt.empty()) throw ConfigError("scene has no initial prompt");
  PerceptionOptions opts;
  opts.gamma = scene.gamma;
  opts.max_iterations = scene.max_iterations;
  opts.frames_per_query = scene.frames_per_query;
  opts.video_width = scene.video_width;
  opts.video_height = scene.video_height;
  opts.video_frames = scene.video_frames;
  opts.llm.model = scene.llm_model;
  opts.assets = PromptAssets::load(scene.reasoning_prompt_path, scene.refinement_prompt_path);

  InferOutcome out;
  out.result = run_perception(llm, video, image, scene.initial_prompt, opts);
  ensure_dir(scene.output.dir);
  out.report_path = scene.output.dir / "report.json";
  write_text(out.report_path, to_json(out.result).dump(2) + "\n");
  log << "inference: " << to_string(out.result.status) << " after " << out.result.videos_generated
      << " video(s), " << out.result.refinements << " refinement(s); kept iteration "
      << out.result.selected_iteration << "\n";
  for (const auto& w : out.result.report.warnings) log << "warning: " << w << "\n";
  return out;
}

SimulateOutcome cmd_simulate(const SceneConfig& scene, const PropertyReport& report, std::ostream& log,
                             const FrameCallback& on_frame) {
  scene.validate();
  PreparedScene prep = prepare(scene, report);
  for (const auto& w : prep.assignment.warnings) log << "warning: " << w << "\n";

  SimulateOutcome out;
  ParticleSet particles = seed_particles(prep.cloud, prep.seeding, &out.seeding);
  log << "seeded " << particles.size() << " particles (" << out.seeding.kernel_particles << " kernel, "
      << out.seeding.fill_particles << " fill), volume " << fmt(out.seeding.volume_m3) << " m^3, mass "
      << fmt(out.seeding.total_mass) << " kg\n";

  SimState state = make_sim_state(std::move(particles), MaterialTable{prep.material}, prep.sim);
  const fs::path ckpt_dir = scene.output.dir / "checkpoints";
  const fs::path ply_dir = scene.output.dir / "particles";
  ensure_dir(ckpt_dir);
  if (scene.output.particle_ply) ensure_dir(ply_dir);
  std::ofstream diag_csv(scene.output.dir / "diagnostics.csv", std::ios::trunc);
  diag_csv << "frame,step,time,max_speed,total_mass,min_det_f\n";

  auto emit = [&](int frame) {
    const FrameDiagnostics d = diagnose(state, frame);
    out.diagnostics.push_back(d);
    log << format_diag(d) << "\n";
    diag_csv << d.frame << ',' << d.step << ',' << fmt(d.time, "%.17g") << ',' << fmt(d.max_speed, "%.17g") << ','
             << fmt(d.total_mass, "%.17g") << ',' << fmt(d.min_det_f, "%.17g") << '\n';
    if (frame % scene.output.checkpoint_every == 0 || frame == prep.sim.steps) {
      const fs::path path = ckpt_dir / frame_name(frame, "gmpm");
      save_checkpoint(path, state, prep.sim);
      out.checkpoints.push_back(path);
    }
    if (scene.output.particle_ply) write_particle_ply(ply_dir / frame_name(frame, "ply"), state.particles);
    if (on_frame) on_frame(frame, state);
  };

  emit(0);
  SimConfig live = prep.sim;
  for (int frame = 1; frame <= prep.sim.steps; ++frame) {
    for (int s = 0; s < prep.sim.substeps; ++s) {
      if (prep.force_duration && state.time >= *prep.force_duration) live.external_force = scene.sim.external_force;
      try {
        step(state, live);
      } catch (const SimulationError& e) {
        throw SimulationError("frame " + std::to_string(frame) + ", step " + std::to_string(state.step_count) +
                              ": " + e.what());
      }
    }
    emit(frame);
  }
  return out;
}

std::vector<FrameRecord> cmd_render(const SceneConfig& scene, const fs::path& checkpoints, std::ostream& log) {
  scene.validate();
  const auto files = list_checkpoints(checkpoints);
  const GaussianCloud cloud = load_normalized(scene);
  const Camera camera = scene.camera.camera();
  const fs::path dir = scene.output.dir / "frames";
  ensure_dir(dir);
  std::vector<FrameRecord> frames;
  for (std::size_t i = 0; i < files.size(); ++i) {
    const Checkpoint c = load_checkpoint(files[i]);
    const Image img = render_frame(cloud, &c.particles, camera, scene.render);
    FrameRecord rec = write_frame(img, dir, static_cast<int>(i), scene.output.format);
    log << files[i].filename().string() << " -> " << rec.file << " (" << c.particles.size() << " particles)\n";
    frames.push_back(std::move(rec));
  }
  return frames;
}

PipelineOutcome cmd_pipeline(const SceneConfig& scene, const Image& image, LlmClient& llm, VideoClient& video,
                             std::ostream& log) {
  scene.validate();
  ensure_dir(scene.output.dir);
  PipelineOutcome out;
  out.manifest_path = scene.output.dir / "manifest.json";
  std::vector<StageTiming> stages;

  nlohmann::ordered_json manifest;
  manifest["tool"] = "gaussmpm";
  manifest["versions"] = version_info();
  manifest["config_hash"] = config_hash(scene);
  manifest["scene"] = to_json(scene);

  auto t0 = Clock::now();
  InferOutcome inferred = cmd_infer(scene, image, llm, video, log);
  stages.push_back({"infer", seconds_since(t0)});
  manifest["perception"] = {{"status", std::string(to_string(inferred.result.status))},
                            {"videos_generated", inferred.result.videos_generated},
                            {"refinements", inferred.result.refinements},
                            {"selected_iteration", inferred.result.selected_iteration},
                            {"report", inferred.report_path.filename().string()}};

  auto finish = [&](const std::string& status) {
    nlohmann::ordered_json st = nlohmann::ordered_json::array();
    for (const auto& s : stages) st.push_back({{"name", s.name}, {"seconds", s.seconds}});
    manifest["stages"] = st;
    nlohmann::ordered_json fr = nlohmann::ordered_json::array();
    for (const auto& f : out.frames) fr.push_back({{"file", "frames/" + f.file}, {"sha256", f.sha256}});
    manifest["frames"] = fr;
    manifest["status"] = status;
    write_text(out.manifest_path, manifest.dump(2) + "\n");
  };

  if (inferred.result.status == PerceptionStatus::EmptyReport) {
    log << "no movable object found; stopping after inference\n";
    out.code = ExitCode::EmptyReport;
    finish("empty_report");
    return out;
  }

  t0 = Clock::now();
  const GaussianCloud cloud = load_normalized(scene);
  const MaterialAssignment assignment =
      to_material_params(inferred.result.report, DomainTransform{length_scale_of(scene, cloud), Vec3::Zero()});
  stages.push_back({"convert", seconds_since(t0)});
  manifest["material"] = to_json(assignment.params);

  const Camera camera = scene.camera.camera();
  const fs::path frame_dir = scene.output.dir / "frames";
  ensure_dir(frame_dir);
  double render_seconds = 0.0;
  t0 = Clock::now();
  SimulateOutcome sim = cmd_simulate(scene, inferred.result.report, log, [&](int frame, const SimState& state) {
    const auto r0 = Clock::now();
    const Image img = render_frame(cloud, &state.particles, camera, scene.render);
    out.frames.push_back(write_frame(img, frame_dir, frame, scene.output.format));
    render_seconds += seconds_since(r0);
  });
  stages.push_back({"simulate", seconds_since(t0) - render_seconds});
  stages.push_back({"render", render_seconds});
  manifest["seeding"] = {{"kernel_particles", sim.seeding.kernel_particles},
                         {"fill_particles", sim.seeding.fill_particles},
                         {"occupied_voxels", sim.seeding.occupied_voxels},
                         {"volume_m3", sim.seeding.volume_m3},
                         {"total_mass", sim.seeding.total_mass}};
  if (!sim.diagnostics.empty()) {
    const auto& last = sim.diagnostics.back();
    manifest["final_state"] = {{"step", last.step},      {"time", last.time},
                               {"max_speed", last.max_speed}, {"total_mass", last.total_mass},
                               {"min_det_f", last.min_det_f}};
  }
  finish("ok");
  return out;
}

void cmd_inspect(const fs::path& artifact, bool as_json, std::ostream& os) {
  const std::string head = read_prefix(artifact, 4);
  nlohmann::ordered_json j;
  std::ostringstream text;

  if (head == "GMPM") {
    const Checkpoint c = load_checkpoint(artifact);
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto& p : c.particles) {
      lo = lo.cwiseMin(p.position);
      hi = hi.cwiseMax(p.position);
    }
    if (c.particles.empty()) lo = hi = Vec3::Zero();
    const double mass = total_mass(c.particles);
    j["kind"] = "checkpoint";
    j["particles"] = c.particles.size();
    j["total_mass"] = mass;
    j["step"] = c.step_count;
    j["time"] = c.time;
    j["grid_resolution"] = c.grid_resolution;
    j["bounds"] = bounds_json(lo, hi);
    j["materials"] = c.materials.size();
    text << "checkpoint " << artifact.filename().string() << "\n"
         << "  particles        " << c.particles.size() << "\n"
         << "  total mass       " << fmt(mass) << " kg\n"
         << "  step / time      " << c.step_count << " / " << fmt(c.time) << " s\n"
         << "  grid resolution  " << c.grid_resolution << "\n"
         << "  bounds           [" << fmt(lo.x()) << ", " << fmt(lo.y()) << ", " << fmt(lo.z()) << "] - ["
         << fmt(hi.x()) << ", " << fmt(hi.y()) << ", " << fmt(hi.z()) << "]\n";
  } else if (head.rfind("ply", 0) == 0) {
    const GaussianCloud cloud = load_ply(artifact);
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto& k : cloud.kernels) {
      lo = lo.cwiseMin(k.position);
      hi = hi.cwiseMax(k.position);
    }
    if (cloud.kernels.empty()) lo = hi = Vec3::Zero();
    j["kind"] = "gaussian_ply";
    j["kernels"] = cloud.kernels.size();
    j["sh_degree"] = cloud.sh_degree;
    j["bounds"] = bounds_json(lo, hi);
    text << "gaussian asset " << artifact.filename().string() << "\n"
         << "  kernels    " << cloud.kernels.size() << "\n"
         << "  SH degree  " << cloud.sh_degree << "\n";
  } else {
    std::ifstream in(artifact);
    nlohmann::json doc = nlohmann::json::parse(in, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw ParseError(artifact.string() + " is not a known artifact");
    if (doc.contains("stages") && doc.contains("config_hash")) {
      j["kind"] = "manifest";
      j["status"] = doc.value("status", "");
      j["config_hash"] = doc["config_hash"];
      j["stages"] = doc["stages"];
      j["frames"] = doc.contains("frames") ? doc["frames"].size() : 0;
      text << "manifest " << artifact.filename().string() << " (status " << doc.value("status", "?") << ")\n"
           << "  config hash  " << doc["config_hash"].get<std::string>() << "\n"
           << "  frames       " << j["frames"].get<std::size_t>() << "\n"
           << "  stage        seconds\n";
      for (const auto& s : doc["stages"]) {
        char line[96];
        std::snprintf(line, sizeof line, "  %-12s %.3f\n", s.value("name", "?").c_str(), s.value("seconds", 0.0));
        text << line;
      }
    } else if (doc.contains("report") || doc.contains("params") || doc.contains("material")) {
      const PropertyReport r = load_report_file(artifact);
      j["kind"] = "report";
      j["empty"] = r.empty;
      if (doc.contains("status")) j["status"] = doc["status"];
      if (!r.empty) {
        j["class_name"] = r.class_name;
        j["material"] = std::string(to_string(r.material_class));
        j["material_confidence"] = r.material_confidence;
        nlohmann::ordered_json attrs;
        for (const auto& [name, est] : r.attributes) attrs[name] = {{"value", est.value}, {"confidence", est.confidence}};
        j["attributes"] = attrs;
      }
      text << "report " << artifact.filename().string();
      if (doc.contains("status")) text << " (status " << doc["status"].get<std::string>() << ")";
      text << "\n";
      if (r.empty) {
        text << "  no movable object\n";
      } else {
        char line[128];
        std::snprintf(line, sizeof line, "  %-18s %-16s %s\n", "attribute", "value", "confidence");
        text << "  object " << r.class_name << "\n" << line;
        std::snprintf(line, sizeof line, "  %-18s %-16s %.2f\n", "material", std::string(to_string(r.material_class)).c_str(),
                      r.material_confidence);
        text << line;
        for (const auto& [name, est] : r.attributes) {
          std::snprintf(line, sizeof line, "  %-18s %-16s %.2f\n", name.c_str(), fmt(est.value).c_str(), est.confidence);
          text << line;
        }
      }
    } else {
      throw ParseError(artifact.string() + " is not a known artifact");
    }
  }
  if (as_json) {
    os << j.dump(2) << "\n";
  } else {
    os << text.str();
  }
}

}  // namespace gaussmpm
