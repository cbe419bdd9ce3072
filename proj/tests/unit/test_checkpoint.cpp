#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "gaussmpm/checkpoint.hpp"
#include "gaussmpm/error.hpp"
#include "test_support.hpp"

using namespace gaussmpm;
using gaussmpm::testing::elastic_material;
using gaussmpm::testing::make_block;
using gaussmpm::testing::scratch_dir;

namespace {

SimState stepped_state(SimConfig& c) {
  std::mt19937_64 rng(9);
  c.grid_resolution = 24;
  c.threads = 1;
  c.steps = 12;
  c.boundary.ground = GroundPlane{0.1, 0.3};
  ParticleSet ps = make_block(Vec3(0.3, 0.3, 0.3), Vec3(0.6, 0.6, 0.6), 0.04, 900.0, rng);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ps[i].kernel_ref = static_cast<std::int64_t>(i % 7) - 1;
    ps[i].internal_fill = i % 3 == 0;
  }
  SimState s = make_sim_state(ps, {elastic_material(3e4, 0.25, 900.0)}, c);
  for (int i = 0; i < 5; ++i) step(s, c);
  return s;
}

std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = scratch_dir("ckpt_roundtrip");
  SimConfig c;
  const SimState s = stepped_state(c);
  const auto path = dir / "a.gmpm";
  save_checkpoint(path, s, c);
  EXPECT_TRUE(std::filesystem::exists(sidecar_path(path)));
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.step_count, s.step_count);
  EXPECT_EQ(back.time, s.time);
  EXPECT_EQ(back.grid_resolution, 24);
  ASSERT_EQ(back.particles.size(), s.particles.size());
  for (std::size_t i = 0; i < s.particles.size(); ++i) {
    const auto& a = s.particles[i];
    const auto& b = back.particles[i];
    ASSERT_EQ(a.position, b.position);
    ASSERT_EQ(a.velocity, b.velocity);
    ASSERT_EQ(a.deformation_gradient, b.deformation_gradient);
    ASSERT_EQ(a.affine_velocity, b.affine_velocity);
    ASSERT_EQ(a.kirchhoff_stress, b.kirchhoff_stress);
    ASSERT_EQ(a.mass, b.mass);
    ASSERT_EQ(a.volume, b.volume);
    ASSERT_EQ(a.material_id, b.material_id);
    ASSERT_EQ(a.plastic, b.plastic);
    ASSERT_EQ(a.kernel_ref, b.kernel_ref);
    ASSERT_EQ(a.internal_fill, b.internal_fill);
  }
  ASSERT_TRUE(back.config.has_value());
  EXPECT_EQ(to_json(*back.config), to_json(c));
  ASSERT_EQ(back.materials.size(), 1u);
  EXPECT_EQ(to_json(back.materials[0]), to_json(s.materials[0]));

  // Saving the loaded checkpoint again reproduces the file byte for byte.
  save_checkpoint(dir / "b.gmpm", back);
  EXPECT_EQ(slurp(path), slurp(dir / "b.gmpm"));
}

TEST(Checkpoint, ResumeMatchesUninterruptedRun) {
  const auto dir = scratch_dir("ckpt_resume");
  SimConfig c;
  SimState s = stepped_state(c);
  save_checkpoint(dir / "mid.gmpm", s, c);
  const Checkpoint ck = load_checkpoint(dir / "mid.gmpm");
  SimState resumed = make_sim_state(ck.particles, ck.materials, *ck.config);
  resumed.step_count = ck.step_count;
  resumed.time = ck.time;
  for (int i = 0; i < 5; ++i) {
    step(s, c);
    step(resumed, *ck.config);
  }
  for (std::size_t i = 0; i < s.particles.size(); ++i) {
    ASSERT_EQ(s.particles[i].position, resumed.particles[i].position);
  }
}

TEST(Checkpoint, TruncatedFileIsParseError) {
  const auto dir = scratch_dir("ckpt_trunc");
  SimConfig c;
  const SimState s = stepped_state(c);
  save_checkpoint(dir / "a.gmpm", s, c);
  auto bytes = slurp(dir / "a.gmpm");
  bytes.resize(bytes.size() / 2);
  {
    std::ofstream out(dir / "a.gmpm", std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  EXPECT_THROW(load_checkpoint(dir / "a.gmpm"), ParseError);
}

TEST(Checkpoint, BadMagicAndMissingFile) {
  const auto dir = scratch_dir("ckpt_magic");
  {
    std::ofstream out(dir / "x.gmpm", std::ios::binary);
    out << "NOPE and some more bytes to pass the header length";
  }
  EXPECT_THROW(load_checkpoint(dir / "x.gmpm"), ParseError);
  EXPECT_THROW(load_checkpoint(dir / "missing.gmpm"), IoError);
}

TEST(Checkpoint, WorksWithoutSidecar) {
  const auto dir = scratch_dir("ckpt_nosidecar");
  SimConfig c;
  const SimState s = stepped_state(c);
  save_checkpoint(dir / "a.gmpm", s, c);
  std::filesystem::remove(sidecar_path(dir / "a.gmpm"));
  const Checkpoint back = load_checkpoint(dir / "a.gmpm");
  EXPECT_FALSE(back.config.has_value());
  EXPECT_EQ(back.particles.size(), s.particles.size());
}

TEST(SimConfigJson, RoundTripAndDefaults) {
  SimConfig c;
  c.dt = 2e-5;
  c.cfl = 0.3;
  c.gravity = Vec3(0.0, -3.0, 1.0);
  c.external_force = Vec3(1.0, 2.0, 3.0);
  c.length_scale = 0.25;
  c.steps = 7;
  c.substeps = 3;
  c.grid_resolution = 48;
  c.transfer = TransferScheme::PicFlip;
  c.flip_ratio = 0.9;
  c.boundary = BoundaryConfig::all(BoundaryCondition::Slip);
  c.boundary.faces[kMinY] = BoundaryCondition::Sticky;
  c.boundary.ground = GroundPlane{0.05, 0.7};
  c.mode = ExecutionMode::Fast;
  c.threads = 3;
  const nlohmann::json j = to_json(c);
  EXPECT_EQ(to_json(sim_config_from_json(j)), j);

  const SimConfig d = sim_config_from_json(nlohmann::json::object());
  EXPECT_EQ(to_json(d), to_json(SimConfig{}));
  const SimConfig automatic = sim_config_from_json({{"dt", "auto"}});
  EXPECT_FALSE(automatic.dt.has_value());
}

TEST(SimConfigJson, MalformedValuesAreConfigErrors) {
  EXPECT_THROW(sim_config_from_json({{"transfer", "sph"}}), ConfigError);
  EXPECT_THROW(sim_config_from_json({{"gravity", {0, 1}}}), ConfigError);
  EXPECT_THROW(sim_config_from_json({{"dt", "fast"}}), ConfigError);
  EXPECT_THROW(sim_config_from_json({{"mode", "turbo"}}), ConfigError);
  EXPECT_THROW(sim_config_from_json(nlohmann::json::array()), ConfigError);
}

TEST(ParticlePly, HeaderAndSize) {
  const auto dir = scratch_dir("ckpt_ply");
  SimConfig c;
  const SimState s = stepped_state(c);
  write_particle_ply(dir / "p.ply", s.particles);
  const auto bytes = slurp(dir / "p.ply");
  const std::string text(bytes.begin(), bytes.end());
  const auto end = text.find("end_header\n");
  ASSERT_NE(end, std::string::npos);
  EXPECT_NE(text.find("element vertex " + std::to_string(s.particles.size())), std::string::npos);
  EXPECT_EQ(bytes.size() - (end + 11), s.particles.size() * 7 * sizeof(float));
}
