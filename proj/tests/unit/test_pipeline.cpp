#include <cstdlib>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "gaussmpm/error.hpp"
#include "gaussmpm/pipeline.hpp"
#include "test_support.hpp"

using namespace gaussmpm;
using gaussmpm::testing::scratch_dir;
using gaussmpm::testing::source_dir;
using nlohmann::json;

namespace {

std::filesystem::path toy_dir() { return source_dir() / "assets/toy"; }

SceneConfig toy_scene(const std::string& out_name) {
  SceneConfig s = load_scene(toy_dir() / "scene.json");
  s.output.dir = scratch_dir(out_name);
  return s;
}

template <typename E>
ExitCode code_for(E e) {
  try {
    throw e;
  } catch (...) {
    return exit_code_for_current_exception();
  }
}

PropertyReport resting_elastic() {
  PropertyReport r;
  r.class_name = "block";
  r.material_class = MaterialClass::Elastic;
  r.material_confidence = 1.0;
  r.attributes = {{"mass", {1.0, 1.0}},
                  {"density", {1000.0, 1.0}},
                  {"youngsModulus", {1e5, 1.0}},
                  {"poissonsRatio", {0.3, 1.0}}};
  return r;
}

}  // namespace

TEST(Scene, DefaultsAndPathResolution) {
  const SceneConfig s = scene_from_json({{"asset", "a.ply"}, {"prompt", "p"}}, "/data/scenes");
  EXPECT_EQ(s.asset_path, std::filesystem::path("/data/scenes/a.ply"));
  EXPECT_EQ(s.gamma, 0.8);
  EXPECT_EQ(s.max_iterations, 3);
  EXPECT_EQ(s.frames_per_query, 7u);
  EXPECT_EQ(s.video_frames, 50);
  EXPECT_EQ(s.sim.grid_resolution, 64);
  EXPECT_EQ(s.seeding.grid_resolution, 64);
  EXPECT_EQ(s.output.dir, std::filesystem::path("out"));
}

TEST(Scene, FileValuesThenOverrides) {
  SceneConfig s = load_scene(toy_dir() / "scene.json");
  EXPECT_EQ(s.sim.grid_resolution, 32);
  EXPECT_EQ(s.seeding.grid_resolution, 32);
  EXPECT_EQ(s.sim.mode, ExecutionMode::Fast);
  EXPECT_EQ(s.video_width, 160);
  EXPECT_EQ(s.asset_path, toy_dir() / "toy.ply");
  SceneOverrides o;
  o.gamma = 0.5;
  o.grid_resolution = 48;
  o.steps = 9;
  o.deterministic = true;
  o.threads = 2;
  o.out = "/tmp/x";
  o.max_iterations = 1;
  apply_overrides(s, o);
  EXPECT_EQ(s.gamma, 0.5);
  EXPECT_EQ(s.sim.grid_resolution, 48);
  EXPECT_EQ(s.seeding.grid_resolution, 48);
  EXPECT_EQ(s.sim.steps, 9);
  EXPECT_EQ(s.sim.mode, ExecutionMode::Deterministic);
  EXPECT_EQ(s.sim.threads, 2);
  EXPECT_EQ(s.max_iterations, 1);
  EXPECT_EQ(s.output.dir, std::filesystem::path("/tmp/x"));
  // unset overrides leave the scene alone
  const SceneConfig before = s;
  apply_overrides(s, {});
  EXPECT_EQ(config_hash(s), config_hash(before));
}

TEST(Scene, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(scene_from_json({{"asset", "a.ply"}, {"prompt", "p"}, {"gama", 0.5}}), ConfigError);
  EXPECT_THROW(scene_from_json({{"asset", "a.ply"}, {"prompt", "p"}, {"inference", {{"gamma", "high"}}}}),
               ConfigError);
  EXPECT_THROW(scene_from_json({{"asset", "a.ply"}, {"prompt", "p"}, {"camera", {{"eye", {1, 2}}}}}), ConfigError);
  SceneConfig s = scene_from_json({{"asset", "a.ply"}, {"prompt", "p"}});
  s.gamma = 1.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s.gamma = 0.8;
  s.frames_per_query = 1;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(load_scene("/nonexistent/scene.json"), Error);
}

TEST(Scene, JsonRoundTripAndHash) {
  const SceneConfig s = load_scene(toy_dir() / "scene.json");
  const SceneConfig back = scene_from_json(json::parse(to_json(s).dump()));
  EXPECT_EQ(config_hash(back), config_hash(s));
  EXPECT_EQ(config_hash(s).size(), 64u);
  SceneConfig changed = s;
  changed.sim.steps += 1;
  EXPECT_NE(config_hash(changed), config_hash(s));
}

TEST(ExitCodes, Mapping) {
  EXPECT_EQ(code_for(ConfigError("x")), ExitCode::Config);
  EXPECT_EQ(code_for(ParameterError("x")), ExitCode::Config);
  EXPECT_EQ(code_for(ClientError("x")), ExitCode::ExternalService);
  EXPECT_EQ(code_for(AuthError("x")), ExitCode::ExternalService);
  EXPECT_EQ(code_for(TransportError("x")), ExitCode::ExternalService);
  EXPECT_EQ(code_for(ValidationError("x")), ExitCode::Validation);
  EXPECT_EQ(code_for(SchemaError("x")), ExitCode::Validation);
  EXPECT_EQ(code_for(InferenceError("x")), ExitCode::InferenceParse);
  EXPECT_EQ(code_for(SimulationError("x")), ExitCode::Runtime);
  EXPECT_EQ(code_for(std::runtime_error("x")), ExitCode::Runtime);
}

TEST(Clients, ReplayNeedsBothTranscripts) {
  const auto dir = scratch_dir("clients_partial");
  { std::ofstream(dir / "llm.jsonl") << ""; }
  EXPECT_THROW(make_clients(dir), ConfigError);
  ::unsetenv("GAUSSMPM_LLM_ENDPOINT");
  ::unsetenv("GAUSSMPM_VIDEO_ENDPOINT");
  EXPECT_THROW(make_clients(std::nullopt), ConfigError);
  const Clients c = make_clients(toy_dir() / "replay");
  EXPECT_TRUE(c.llm && c.video);
}

TEST(Commands, ReplayedInferenceConverges) {
  const SceneConfig s = toy_scene("cmd_infer");
  const Image image = read_png(toy_dir() / "image.png");
  Clients c = make_clients(toy_dir() / "replay");
  std::ostringstream log;
  const InferOutcome out = cmd_infer(s, image, *c.llm, *c.video, log);
  EXPECT_EQ(out.result.status, PerceptionStatus::Converged);
  EXPECT_EQ(out.result.videos_generated, 2);
  EXPECT_EQ(out.result.refinements, 1);
  EXPECT_TRUE(std::filesystem::exists(out.report_path));
  const PropertyReport back = load_report_file(out.report_path);
  EXPECT_EQ(back.attributes, out.result.report.attributes);
}

TEST(Commands, RestingBodyWithoutGravityIsFixedPoint) {
  SceneConfig s = toy_scene("cmd_fixed");
  s.sim.gravity.setZero();
  s.sim.steps = 4;
  s.sim.substeps = 5;
  s.sim.grid_resolution = 24;
  s.seeding.grid_resolution = 24;
  s.output.checkpoint_every = 2;
  std::ostringstream log;
  ParticleSet initial;
  ParticleSet last;
  const SimulateOutcome out = cmd_simulate(s, resting_elastic(), log, [&](int frame, const SimState& st) {
    if (frame == 0) initial = st.particles;
    last = st.particles;
  });
  ASSERT_FALSE(initial.empty());
  ASSERT_EQ(initial.size(), last.size());
  for (std::size_t i = 0; i < initial.size(); ++i) {
    ASSERT_EQ(initial[i].position, last[i].position);
    ASSERT_EQ(last[i].velocity, Vec3::Zero());
  }
  // frames 0, 2 and 4
  EXPECT_EQ(out.checkpoints.size(), 3u);
  EXPECT_EQ(out.diagnostics.size(), 5u);
  EXPECT_EQ(out.diagnostics.back().max_speed, 0.0);
  EXPECT_TRUE(std::filesystem::exists(s.output.dir / "diagnostics.csv"));

  const auto frames = cmd_render(s, s.output.dir / "checkpoints", log);
  EXPECT_EQ(frames.size(), 3u);
  for (const auto& f : frames) EXPECT_TRUE(std::filesystem::exists(s.output.dir / "frames" / f.file)) << f.file;
  EXPECT_THROW(cmd_render(s, s.output.dir / "nothing", log), IoError);
}

TEST(Commands, MassIsSeededFromDensity) {
  SceneConfig s = toy_scene("cmd_mass");
  s.sim.steps = 1;
  s.sim.substeps = 2;
  std::ostringstream log;
  const SimulateOutcome out = cmd_simulate(s, resting_elastic(), log);
  EXPECT_NEAR(out.seeding.total_mass, 1000.0 * out.seeding.volume_m3, 1e-9 * out.seeding.total_mass);
  EXPECT_NEAR(out.diagnostics.front().total_mass, out.seeding.total_mass, 1e-9 * out.seeding.total_mass);
}

TEST(Commands, PipelineEmptyReportStops) {
  const SceneConfig s = toy_scene("cmd_empty");
  const Image image = read_png(toy_dir() / "image.png");
  Clients c = make_clients(toy_dir() / "replay_empty");
  std::ostringstream log;
  const PipelineOutcome out = cmd_pipeline(s, image, *c.llm, *c.video, log);
  EXPECT_EQ(out.code, ExitCode::EmptyReport);
  EXPECT_TRUE(out.frames.empty());
  std::ifstream in(out.manifest_path);
  const json m = json::parse(in);
  EXPECT_EQ(m["status"], "empty_report");
}

TEST(Commands, PipelineHashesAreReproducible) {
  const Image image = read_png(toy_dir() / "image.png");
  auto run = [&](const std::string& name, int threads) {
    SceneConfig s = toy_scene(name);
    SceneOverrides o;
    o.steps = 6;
    o.deterministic = true;
    o.threads = threads;
    apply_overrides(s, o);
    Clients c = make_clients(toy_dir() / "replay");
    std::ostringstream log;
    return cmd_pipeline(s, image, *c.llm, *c.video, log);
  };
  const PipelineOutcome a = run("pipe_a", 1);
  const PipelineOutcome b = run("pipe_b", 3);
  EXPECT_EQ(a.code, ExitCode::Ok);
  ASSERT_EQ(a.frames.size(), 7u);
  ASSERT_EQ(a.frames.size(), b.frames.size());
  for (std::size_t i = 0; i < a.frames.size(); ++i) EXPECT_EQ(a.frames[i].sha256, b.frames[i].sha256) << i;
  std::ifstream in(a.manifest_path);
  const json m = json::parse(in);
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["frames"].size(), 7u);
  EXPECT_TRUE(m.contains("config_hash"));
  EXPECT_TRUE(m["versions"].contains("eigen"));
}

TEST(Inspect, DetectsArtifactTypes) {
  std::ostringstream out;
  cmd_inspect(toy_dir() / "toy.ply", false, out);
  EXPECT_NE(out.str().find("728"), std::string::npos);
  std::ostringstream js;
  cmd_inspect(toy_dir() / "toy.ply", true, js);
  EXPECT_NO_THROW(json::parse(js.str()));
  const auto dir = scratch_dir("inspect");
  { std::ofstream(dir / "junk.bin") << "garbage"; }
  std::ostringstream sink;
  EXPECT_THROW(cmd_inspect(dir / "junk.bin", false, sink), ParseError);
}
