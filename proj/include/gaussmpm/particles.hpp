#pragma once

#include <cstdint>
#include <vector>

#include "gaussmpm/linalg.hpp"

namespace gaussmpm {

// Per-particle history carried across steps by the return maps.
struct PlasticState {
  // Volume ratio J tracked for fluids (their F is reset to J^(1/3) I).
  double volume_ratio = 1.0;
  // Accumulated plastic strain magnitude (von Mises, Bingham, sand).
  double plastic_strain = 0.0;

  friend bool operator==(const PlasticState&, const PlasticState&) = default;
};

// One Lagrangian material point. Positions are in simulation-domain units
// ([0,1]^3), mass in kg; the cached Kirchhoff stress is the one produced by
// the last return map and feeds the next particle-to-grid transfer.
struct MaterialParticle {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
  Mat3 deformation_gradient = Mat3::Identity();
  Mat3 affine_velocity = Mat3::Zero();
  Mat3 kirchhoff_stress = Mat3::Zero();
  double mass = 0.0;
  // Rest volume V_p^0 in domain units^3.
  double volume = 0.0;
  std::uint32_t material_id = 0;
  PlasticState plastic;
  // Source Gaussian kernel; internal-fill particles point at the nearest one.
  std::int64_t kernel_ref = -1;
  bool internal_fill = false;
};

using ParticleSet = std::vector<MaterialParticle>;

inline double total_mass(const ParticleSet& particles) {
  double m = 0.0;
  for (const auto& p : particles) m += p.mass;
  return m;
}

inline Vec3 total_momentum(const ParticleSet& particles) {
  Vec3 m = Vec3::Zero();
  for (const auto& p : particles) m += p.mass * p.velocity;
  return m;
}

}  // namespace gaussmpm
