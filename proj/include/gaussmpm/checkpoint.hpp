#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include <nlohmann/json.hpp>

#include "gaussmpm/mpm_engine.hpp"

namespace gaussmpm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json to_json(const SimConfig& config);
// Missing keys keep their defaults. Throws ConfigError on malformed values.
SimConfig sim_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const SolverMaterial& material);
SolverMaterial solver_material_from_json(const nlohmann::json& j);

struct Checkpoint {
  ParticleSet particles;
  std::uint64_t step_count = 0;
  double time = 0.0;
  int grid_resolution = 64;
  // Present when the JSON sidecar was found next to the binary.
  std::optional<SimConfig> config;
  MaterialTable materials;
};

// Binary layout (little-endian): "GMPM", u32 version, u64 count,
// u64 step_count, f64 time, u32 grid_resolution, then one array per field:
// position, velocity, F, C, stress (f64), mass, volume (f64), material_id
// (u32), volume_ratio, plastic_strain (f64), kernel_ref (i64),
// internal_fill (u8). Matrices are row-major. The sidecar `<path>.json`
// holds the SimConfig and material table.
void save_checkpoint(const std::filesystem::path& path, const SimState& state, const SimConfig& config);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);

// Throws IoError when unreadable and ParseError on a bad magic, version or
// truncated payload.
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

// Binary little-endian PLY point cloud (float x, y, z, vx, vy, vz, J).
void write_particle_ply(const std::filesystem::path& path, const ParticleSet& particles);

}  // namespace gaussmpm
