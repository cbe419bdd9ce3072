#include <cmath>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gaussmpm/error.hpp"
#include "gaussmpm/pipeline.hpp"

namespace {

using namespace gaussmpm;

struct Options {
  std::string scene;
  std::string image;
  std::string report;
  std::string checkpoints;
  std::string artifact;
  std::string replay;
  std::string out;
  bool deterministic = false;
  bool json = false;
  std::optional<double> gamma;
  std::optional<int> max_iter;
  std::optional<int> grid;
  std::optional<int> steps;
  std::optional<int> threads;
};

void add_scene_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--scene", o.scene, "Scene JSON file")->required()->check(CLI::ExistingFile);
  cmd->add_option("--out", o.out, "Output directory (overrides the scene file)");
}

void add_inference_options(CLI::App* cmd, Options& o) {
  cmd->add_option("--image", o.image, "Input image (PNG)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--gamma", o.gamma, "Confidence threshold in (0, 1]")
      ->check(CLI::Validator(
          [](std::string& s) -> std::string {
            double v = 0.0;
            try {
              v = std::stod(s);
            } catch (...) {
              return "gamma must be a number";
            }
            return v > 0.0 && v <= 1.0 ? std::string() : "gamma must lie in (0, 1]";
          },
          "(0,1]"));
  cmd->add_option("--max-iter", o.max_iter, "Refinement budget")->check(CLI::PositiveNumber);
  cmd->add_option("--replay", o.replay, "Directory with llm.jsonl and video.jsonl transcripts")
      ->check(CLI::ExistingDirectory);
}

void add_sim_options(CLI::App* cmd, Options& o) {
  cmd->add_flag("--deterministic", o.deterministic, "Bit-reproducible execution");
  cmd->add_option("--grid", o.grid, "Grid resolution per axis")->check(CLI::Range(8, 512));
  cmd->add_option("--steps", o.steps, "Output frames to simulate")->check(CLI::PositiveNumber);
  cmd->add_option("--threads", o.threads, "Worker threads (0: all cores)")->check(CLI::NonNegativeNumber);
}

SceneConfig scene_for(const Options& o) {
  SceneConfig scene = load_scene(o.scene);
  SceneOverrides ov;
  if (!o.out.empty()) ov.out = o.out;
  if (o.deterministic) ov.deterministic = true;
  ov.gamma = o.gamma;
  ov.max_iterations = o.max_iter;
  ov.grid_resolution = o.grid;
  ov.steps = o.steps;
  ov.threads = o.threads;
  apply_overrides(scene, ov);
  scene.validate();
  return scene;
}

std::optional<std::filesystem::path> replay_dir(const Options& o) {
  if (o.replay.empty()) return std::nullopt;
  return std::filesystem::path(o.replay);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-grounded dynamics for Gaussian splat assets"};
  app.require_subcommand(1);
  Options o;

  auto* infer = app.add_subcommand("infer", "Infer physical properties from an image");
  add_scene_options(infer, o);
  add_inference_options(infer, o);

  auto* simulate = app.add_subcommand("simulate", "Simulate the asset with an inferred report");
  add_scene_options(simulate, o);
  simulate->add_option("--report", o.report, "Report JSON from `infer`")->required()->check(CLI::ExistingFile);
  add_sim_options(simulate, o);

  auto* render = app.add_subcommand("render", "Render checkpoints to frames");
  add_scene_options(render, o);
  render->add_option("--checkpoints", o.checkpoints, "Checkpoint file or directory")->required();

  auto* pipeline = app.add_subcommand("pipeline", "infer, simulate and render in one run");
  add_scene_options(pipeline, o);
  add_inference_options(pipeline, o);
  add_sim_options(pipeline, o);

  auto* inspect = app.add_subcommand("inspect", "Summarize a report, checkpoint, manifest or PLY");
  inspect->add_option("artifact", o.artifact, "Artifact path")->required()->check(CLI::ExistingFile);
  inspect->add_flag("--json", o.json, "Machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::Config);
  }

  try {
    if (*infer) {
      const SceneConfig scene = scene_for(o);
      Clients clients = make_clients(replay_dir(o));
      const InferOutcome r = cmd_infer(scene, read_png(o.image), *clients.llm, *clients.video, std::cerr);
      std::cout << r.report_path.string() << "\n";
      return static_cast<int>(r.result.status == PerceptionStatus::EmptyReport ? ExitCode::EmptyReport : ExitCode::Ok);
    }
    if (*simulate) {
      const SceneConfig scene = scene_for(o);
      const SimulateOutcome r = cmd_simulate(scene, load_report_file(o.report), std::cerr);
      std::cout << r.checkpoints.size() << " checkpoint(s) in " << (scene.output.dir / "checkpoints").string() << "\n";
      return 0;
    }
    if (*render) {
      const SceneConfig scene = scene_for(o);
      const auto frames = cmd_render(scene, o.checkpoints, std::cerr);
      std::cout << frames.size() << " frame(s) in " << (scene.output.dir / "frames").string() << "\n";
      return 0;
    }
    if (*pipeline) {
      const SceneConfig scene = scene_for(o);
      Clients clients = make_clients(replay_dir(o));
      const PipelineOutcome r = cmd_pipeline(scene, read_png(o.image), *clients.llm, *clients.video, std::cerr);
      std::cout << r.manifest_path.string() << "\n";
      return static_cast<int>(r.code);
    }
    if (*inspect) {
      cmd_inspect(o.artifact, o.json, std::cout);
      return 0;
    }
  } catch (const std::exception& e) {
    const ExitCode code = exit_code_for_current_exception();
    std::cerr << "gaussmpm: error: " << e.what() << "\n";
    return static_cast<int>(code);
  }
  return 1;
}
