#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "gaussmpm/constitutive.hpp"
#include "gaussmpm/linalg.hpp"
#include "gaussmpm/particles.hpp"

namespace gaussmpm {

enum class BoundaryCondition { Sticky, Slip, Open };

// Face order: -x, +x, -y, +y, -z, +z.
enum Face : int { kMinX = 0, kMaxX, kMinY, kMaxY, kMinZ, kMaxZ };

struct GroundPlane {
  // Height along +y in domain units; nodes at or below it get Coulomb friction.
  double height = 0.0;
  double friction = 0.5;
};

struct BoundaryConfig {
  std::array<BoundaryCondition, 6> faces{BoundaryCondition::Sticky, BoundaryCondition::Sticky,
                                         BoundaryCondition::Sticky, BoundaryCondition::Sticky,
                                         BoundaryCondition::Sticky, BoundaryCondition::Sticky};
  std::optional<GroundPlane> ground;
  // Node layers next to each face that the face condition applies to.
  int thickness = 3;

  static BoundaryConfig all(BoundaryCondition c) {
    BoundaryConfig b;
    b.faces.fill(c);
    return b;
  }
};

enum class TransferScheme { Apic, PicFlip };

// Deterministic: fixed particle order and tile-colored scatter; results are
// bit-identical for any thread count. Fast: same scatter on every hardware
// thread (see README for why the two share numerics).
enum class ExecutionMode { Deterministic, Fast };

struct SimConfig {
  // Fixed step size in seconds; empty selects the CFL-limited step.
  std::optional<double> dt;
  double dt_max = 1e-4;
  double cfl = 0.4;
  // World units (m/s^2 and N); scaled by length_scale inside the solver.
  Vec3 gravity{0.0, -9.8, 0.0};
  Vec3 external_force = Vec3::Zero();
  // Domain units per metre.
  double length_scale = 1.0;
  // Output frames, each advanced by `substeps` solver steps.
  int steps = 150;
  int substeps = 20;
  int grid_resolution = 64;
  TransferScheme transfer = TransferScheme::Apic;
  // FLIP share of the PIC/FLIP blend.
  double flip_ratio = 0.95;
  BoundaryConfig boundary;
  ExecutionMode mode = ExecutionMode::Deterministic;
  // 0 selects std::thread::hardware_concurrency().
  int threads = 0;

  // Throws ParameterError when an invariant fails.
  void validate() const;
  int worker_count() const;
};

inline constexpr double kGridMassEpsilon = 1e-12;

// Uniform background grid with (n + 1)^3 nodes at spacing 1/n covering [0, 1]^3.
// Each node stores (momentum or velocity, mass); which one depends on the phase.
class MpmGrid {
 public:
  MpmGrid() : MpmGrid(64) {}
  explicit MpmGrid(int resolution, BoundaryConfig boundary = {});

  int resolution() const { return resolution_; }
  int nodes_per_axis() const { return resolution_ + 1; }
  double dx() const { return dx_; }
  double inv_dx() const { return inv_dx_; }

  std::size_t index(int i, int j, int k) const {
    const auto n = static_cast<std::size_t>(nodes_per_axis());
    return (static_cast<std::size_t>(i) * n + static_cast<std::size_t>(j)) * n + static_cast<std::size_t>(k);
  }
  Vec3 node_position(int i, int j, int k) const { return Vec3(i, j, k) * dx_; }

  double node_mass(int i, int j, int k) const { return nodes_[index(i, j, k)][3]; }
  Vec3 node_vector(int i, int j, int k) const { return nodes_[index(i, j, k)].head<3>(); }

  std::vector<Vec4>& nodes() { return nodes_; }
  const std::vector<Vec4>& nodes() const { return nodes_; }
  // Pre-force velocities, populated for the PIC/FLIP blend only.
  std::vector<Vec3>& previous_velocity() { return previous_velocity_; }
  const std::vector<Vec3>& previous_velocity() const { return previous_velocity_; }

  const BoundaryConfig& boundary() const { return boundary_; }
  void set_boundary(const BoundaryConfig& b) { boundary_ = b; }

  // Sum of particle mass scattered by the last p2g.
  double particle_mass() const { return particle_mass_; }
  void set_particle_mass(double m) { particle_mass_ = m; }

  bool holds_velocity() const { return holds_velocity_; }
  void set_holds_velocity(bool v) { holds_velocity_ = v; }

  // Particle visit order chosen by the last p2g (grouped by cell column).
  // g2p reuses it for locality; it never affects results.
  std::vector<std::uint32_t>& visit_order() { return visit_order_; }
  const std::vector<std::uint32_t>& visit_order() const { return visit_order_; }

  // Inclusive node-index box holding every node written since the last
  // clear(). A new grid covers all nodes; clear() zeroes the box and empties
  // it; p2g grows it to the particle footprint. grid_update visits only it.
  struct NodeBox {
    std::array<int, 3> lo{0, 0, 0};
    std::array<int, 3> hi{-1, -1, -1};
    bool empty() const { return hi[0] < lo[0] || hi[1] < lo[1] || hi[2] < lo[2]; }
  };
  const NodeBox& active_box() const { return active_; }
  void include_in_active(const NodeBox& box);
  void mark_all_active();

  void clear();

  double total_mass() const;
  // Sum of m_i v_i (after grid_update) or of stored momenta (after p2g).
  Vec3 total_momentum() const;

 private:
  int resolution_;
  double dx_;
  double inv_dx_;
  std::vector<Vec4> nodes_;
  std::vector<Vec3> previous_velocity_;
  std::vector<std::uint32_t> visit_order_;
  NodeBox active_;
  BoundaryConfig boundary_;
  double particle_mass_ = 0.0;
  bool holds_velocity_ = false;
};

struct SimState {
  ParticleSet particles;
  MaterialTable materials;
  MpmGrid grid;
  std::uint64_t step_count = 0;
  double time = 0.0;
};

// Builds a state with a grid matching the config and caches each particle's
// initial stress.
SimState make_sim_state(ParticleSet particles, MaterialTable materials, const SimConfig& config);

// Recomputes every particle's cached Kirchhoff stress from its current F.
void refresh_stress(SimState& state);

// Quadratic B-spline stencil of one particle: base node plus per-axis weights.
struct Stencil {
  std::array<int, 3> base{};
  // weights[axis][offset]
  std::array<std::array<double, 3>, 3> weights{};
  // Fractional position relative to base, in cells.
  Vec3 fx = Vec3::Zero();
};

// Throws SimulationError when the stencil leaves the grid.
Stencil make_stencil(const Vec3& position, const MpmGrid& grid, std::size_t particle_index);

// Scatter mass and APIC momentum plus the MLS stress impulse. Expects a
// cleared grid.
void p2g(const ParticleSet& particles, MpmGrid& grid, double dt, const SimConfig& config);

// Momentum -> velocity, body forces, boundary conditions.
void grid_update(MpmGrid& grid, const SimConfig& config, double dt);

// Gather velocity and its gradient, advect, update F through the return maps.
void g2p(const MpmGrid& grid, ParticleSet& particles, const MaterialTable& materials, double dt,
         const SimConfig& config, std::uint64_t step_index = 0);

double stable_dt(const SimState& state, const SimConfig& config);

// One clear -> p2g -> grid_update -> g2p step. Returns the dt used.
double step(SimState& state, const SimConfig& config);

// Uniform body acceleration from gravity and external force, in domain units.
Vec3 body_acceleration(const SimConfig& config, double total_mass);

}  // namespace gaussmpm
