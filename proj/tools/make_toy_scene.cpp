// Writes the bundled toy scene: a hollow cube of Gaussians, its rendered
// input image, a scene file and replay transcripts recorded against scripted
// mock backends.
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "gaussmpm/error.hpp"
#include "gaussmpm/pipeline.hpp"

namespace {

using namespace gaussmpm;
namespace fs = std::filesystem;

constexpr double kC0 = 0.28209479177387814;

GaussianCloud make_cube_shell(int per_side, double side) {
  GaussianCloud cloud;
  cloud.sh_degree = 1;
  const double h = side / (per_side - 1);
  const std::array<Vec3, 3> tint = {Vec3(0.85, 0.3, 0.25), Vec3(0.25, 0.7, 0.35), Vec3(0.3, 0.4, 0.85)};
  for (int i = 0; i < per_side; ++i) {
    for (int j = 0; j < per_side; ++j) {
      for (int k = 0; k < per_side; ++k) {
        const bool on_x = i == 0 || i == per_side - 1;
        const bool on_y = j == 0 || j == per_side - 1;
        const bool on_z = k == 0 || k == per_side - 1;
        if (!(on_x || on_y || on_z)) continue;
        GaussianKernel g;
        g.position = Vec3(i * h - 0.5 * side, 0.4 + j * h, k * h - 0.5 * side);
        g.scale = Vec3::Constant(0.6 * h);
        g.opacity = 0.9;
        const Vec3 c = on_y ? tint[1] : (on_x ? tint[0] : tint[2]);
        g.sh.assign(4, Vec3::Zero());
        g.sh[0] = (c - Vec3::Constant(0.5)) / kC0;
        // slight view dependence so the degree-1 band is exercised
        g.sh[2] = Vec3::Constant(0.05);
        cloud.kernels.push_back(g);
      }
    }
  }
  return cloud;
}

std::string report_json(double e_conf, double nu_conf) {
  nlohmann::ordered_json j;
  j["class_name"] = "toy block";
  j["material"] = "elastic";
  j["material_confidence"] = 0.9;
  j["mass"] = 29.7;
  j["mass_confidence"] = 0.85;
  j["density"] = 1100;
  j["density_confidence"] = 0.85;
  j["youngsModulus"] = 2.0e5;
  j["youngsModulus_confidence"] = e_conf;
  j["poissonsRatio"] = 0.4;
  j["poissonsRatio_confidence"] = nu_conf;
  j["external force"] = 0;
  j["externalForce_confidence"] = 0.9;
  j["initial velocity"] = 3.6;
  j["initialVelocity_confidence"] = 0.8;
  return "Step 1: the toy block is the only movable class.\nStep 2: it deforms and recovers, so elastic.\n"
         "Step 3:\n```json\n" + j.dump(2) + "\n```\n";
}

// The verbatim output template from the reasoning prompt.
std::string car_template() {
  const std::string_view prompt = default_reasoning_prompt();
  const std::size_t open = prompt.rfind("{\n");
  return std::string(prompt.substr(open));
}

void record(const SceneConfig& scene, const Image& image, LlmClient& llm, VideoClient& video, const fs::path& dir) {
  fs::create_directories(dir);
  auto llm_t = std::make_shared<Transcript>();
  auto video_t = std::make_shared<Transcript>();
  RecordingLlm rec_llm(llm, llm_t);
  RecordingVideo rec_video(video, video_t);
  SceneConfig s = scene;
  s.output.dir = fs::temp_directory_path() / "gaussmpm_make_toy";
  std::ostringstream log;
  const InferOutcome out = cmd_infer(s, image, rec_llm, rec_video, log);
  llm_t->save(dir / "llm.jsonl");
  video_t->save(dir / "video.jsonl");
  std::cout << dir.string() << ": " << to_string(out.result.status) << ", " << out.result.videos_generated
            << " video(s)\n";
  fs::remove_all(s.output.dir);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: gaussmpm_make_toy <output-dir>\n";
    return 2;
  }
  try {
    const fs::path dir = argv[1];
    fs::create_directories(dir);
    save_ply(make_cube_shell(12, 0.3), dir / "toy.ply");

    nlohmann::ordered_json scene;
    scene["asset"] = "toy.ply";
    scene["prompt"] = "A soft toy block slides to the right and tumbles onto the floor.";
    scene["inference"] = {{"gamma", 0.8},
                          {"max_iterations", 3},
                          {"frames_per_query", 7},
                          {"video", {{"width", 160}, {"height", 120}, {"frames", 24}}}};
    scene["normalize_margin"] = 0.3;
    scene["sim"] = {{"grid_resolution", 32}, {"steps", 150}, {"substeps", 20}, {"mode", "fast"}};
    scene["seeding"] = {{"particles_per_voxel", 4}, {"seed", 7}};
    scene["camera"] = {{"eye", {0.5, 0.45, 2.4}}, {"target", {0.5, 0.35, 0.5}}, {"fov_y", 40.0},
                       {"width", 320},          {"height", 240}};
    scene["output"] = {{"dir", "out/toy"}, {"checkpoint_every", 10}};
    {
      std::ofstream out(dir / "scene.json");
      out << scene.dump(2) << "\n";
    }

    const SceneConfig cfg = load_scene(dir / "scene.json");
    const GaussianCloud cloud = normalize_to_domain(load_ply(cfg.asset_path), cfg.normalize_margin);
    const Image image = render_frame(cloud, nullptr, cfg.camera.camera(), cfg.render);
    write_png(image, dir / "image.png");
    const Image input = read_png(dir / "image.png");

    // Low stiffness confidence first, then a converged second look.
    ScriptedLlm toy_llm({report_json(0.6, 0.7),
                         "A soft toy block is dropped, bounces off the floor and is squeezed so its sides bulge.",
                         report_json(0.85, 0.82)});
    TranslatingSquareVideo toy_video(24, 10, 4);
    record(cfg, input, toy_llm, toy_video, dir / "replay");

    // The verbatim template: every confidence 0, so the budget runs out.
    const std::string tpl = car_template();
    ScriptedLlm car_llm({tpl, "A car falls freely onto the road and bounces.", tpl,
                         "A car is pushed hard, dents its door and rolls forward.", tpl,
                         "A car drives forward at speed and brakes.", tpl});
    TranslatingSquareVideo car_video(24, 10, 4);
    record(cfg, input, car_llm, car_video, dir / "replay_car");

    // No movable object.
    ScriptedLlm empty_llm({"```json\n{\"objects\": []}\n```"});
    TranslatingSquareVideo empty_video(24, 10, 4);
    record(cfg, input, empty_llm, empty_video, dir / "replay_empty");
  } catch (const std::exception& e) {
    std::cerr << "gaussmpm_make_toy: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
