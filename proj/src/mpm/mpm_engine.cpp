#include "gaussmpm/mpm_engine.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <thread>

#include "gaussmpm/error.hpp"
#include "gaussmpm/parallel.hpp"

namespace gaussmpm {

namespace {

// Particles are binned into slabs of kSlabWidth cells along x. A stencil
// spans three nodes, so slabs of the same parity never write the same node
// and can scatter concurrently; the order of writes into any node depends
// only on particle order, never on the thread count.
constexpr int kSlabWidth = 4;

// Stable counting sort of particles by (base x, base y) column. Slabs are
// unions of consecutive columns, so the same order also groups by slab.
void sort_by_column(const std::vector<int>& column_of, int columns, std::vector<std::size_t>& offsets,
                    std::vector<std::uint32_t>& order) {
  offsets.assign(static_cast<std::size_t>(columns) + 1, 0);
  for (int c : column_of) ++offsets[static_cast<std::size_t>(c) + 1];
  for (std::size_t c = 0; c < static_cast<std::size_t>(columns); ++c) offsets[c + 1] += offsets[c];
  order.resize(column_of.size());
  std::vector<std::size_t> cursor(offsets.begin(), offsets.end() - 1);
  for (std::size_t p = 0; p < column_of.size(); ++p) {
    order[cursor[static_cast<std::size_t>(column_of[p])]++] = static_cast<std::uint32_t>(p);
  }
}

void apply_boundary(Vec3& v, int i, int j, int k, int n, double dx, const BoundaryConfig& bc) {
  if (bc.ground && j * dx <= bc.ground->height) {
    const double vn = v.y();
    if (vn < 0.0) {
      Vec3 vt(v.x(), 0.0, v.z());
      const double vt_norm = vt.norm();
      const double mu = bc.ground->friction;
      if (vt_norm <= -mu * vn) {
        v.setZero();
      } else {
        v = vt * (1.0 + mu * vn / vt_norm);
      }
    }
  }
  const int idx[3] = {i, j, k};
  const int t = bc.thickness;
  for (int axis = 0; axis < 3; ++axis) {
    const bool low = idx[axis] < t;
    const bool high = idx[axis] > n - t;
    if (!low && !high) continue;
    const BoundaryCondition c = bc.faces[static_cast<std::size_t>(2 * axis + (high ? 1 : 0))];
    if (c == BoundaryCondition::Sticky) {
      v.setZero();
      return;
    }
    if (c == BoundaryCondition::Slip) {
      if ((low && v[axis] < 0.0) || (high && v[axis] > 0.0)) v[axis] = 0.0;
    }
  }
}

}  // namespace

void SimConfig::validate() const {
  if (dt && !(*dt > 0.0)) throw ParameterError("dt must be positive");
  if (!(dt_max > 0.0)) throw ParameterError("dt_max must be positive");
  if (!(cfl > 0.0 && cfl <= 1.0)) throw ParameterError("cfl must lie in (0, 1]");
  if (steps < 1) throw ParameterError("steps must be at least 1");
  if (substeps < 1) throw ParameterError("substeps must be at least 1");
  if (grid_resolution < 8 || grid_resolution > 512) throw ParameterError("grid resolution must lie in [8, 512]");
  if (!(length_scale > 0.0)) throw ParameterError("length scale must be positive");
  if (!(flip_ratio >= 0.0 && flip_ratio <= 1.0)) throw ParameterError("flip ratio must lie in [0, 1]");
  if (boundary.thickness < 1) throw ParameterError("boundary thickness must be at least 1");
  if (boundary.ground && !(boundary.ground->friction >= 0.0)) {
    throw ParameterError("ground friction must be non-negative");
  }
  if (!gravity.allFinite() || !external_force.allFinite()) throw ParameterError("forces must be finite");
}

int SimConfig::worker_count() const {
  if (threads > 0) return threads;
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

MpmGrid::MpmGrid(int resolution, BoundaryConfig boundary)
    : resolution_(resolution), dx_(1.0 / resolution), inv_dx_(static_cast<double>(resolution)), boundary_(boundary) {
  if (resolution < 4) throw ParameterError("grid resolution must be at least 4");
  const auto n = static_cast<std::size_t>(nodes_per_axis());
  nodes_.assign(n * n * n, Vec4::Zero());
  mark_all_active();
}

void MpmGrid::mark_all_active() {
  active_.lo = {0, 0, 0};
  active_.hi = {resolution_, resolution_, resolution_};
}

void MpmGrid::include_in_active(const NodeBox& box) {
  if (box.empty()) return;
  if (active_.empty()) {
    active_ = box;
    return;
  }
  for (std::size_t a = 0; a < 3; ++a) {
    active_.lo[a] = std::min(active_.lo[a], box.lo[a]);
    active_.hi[a] = std::max(active_.hi[a], box.hi[a]);
  }
}

void MpmGrid::clear() {
  if (!active_.empty()) {
    for (int i = active_.lo[0]; i <= active_.hi[0]; ++i) {
      for (int j = active_.lo[1]; j <= active_.hi[1]; ++j) {
        Vec4* row = nodes_.data() + index(i, j, active_.lo[2]);
        std::fill(row, row + (active_.hi[2] - active_.lo[2] + 1), Vec4::Zero());
      }
    }
  }
  active_ = NodeBox{};
  particle_mass_ = 0.0;
  holds_velocity_ = false;
}

double MpmGrid::total_mass() const {
  double m = 0.0;
  for (const auto& node : nodes_) m += node[3];
  return m;
}

Vec3 MpmGrid::total_momentum() const {
  Vec3 sum = Vec3::Zero();
  for (const auto& node : nodes_) {
    if (holds_velocity_) {
      sum += node[3] * node.head<3>();
    } else {
      sum += node.head<3>();
    }
  }
  return sum;
}

Stencil make_stencil(const Vec3& position, const MpmGrid& grid, std::size_t particle_index) {
  Stencil s;
  const int last_base = grid.resolution() - 2;
  for (int a = 0; a < 3; ++a) {
    const double scaled = position[a] * grid.inv_dx();
    const double b = std::floor(scaled - 0.5);
    if (!(b >= 0.0 && b <= last_base)) {
      throw SimulationError("particle " + std::to_string(particle_index) + " at (" + std::to_string(position.x()) +
                            ", " + std::to_string(position.y()) + ", " + std::to_string(position.z()) +
                            ") is outside the grid support");
    }
    const int base = static_cast<int>(b);
    const double fx = scaled - base;
    s.base[static_cast<std::size_t>(a)] = base;
    s.fx[a] = fx;
    auto& w = s.weights[static_cast<std::size_t>(a)];
    w[0] = 0.5 * (1.5 - fx) * (1.5 - fx);
    w[1] = 0.75 - (fx - 1.0) * (fx - 1.0);
    w[2] = 0.5 * (fx - 0.5) * (fx - 0.5);
  }
  return s;
}

void p2g(const ParticleSet& particles, MpmGrid& grid, double dt, const SimConfig& config) {
  const double dx = grid.dx();
  const double stress_coeff = -dt * 4.0 * grid.inv_dx() * grid.inv_dx();
  const bool apic = config.transfer == TransferScheme::Apic;
  const int n_nodes = grid.nodes_per_axis();
  const std::size_t stride_j = static_cast<std::size_t>(n_nodes);
  const std::size_t stride_i = stride_j * stride_j;
  const int slabs = (grid.resolution() + kSlabWidth - 1) / kSlabWidth;
  const int workers = config.worker_count();

  std::vector<int> column_of(particles.size());
  MpmGrid::NodeBox footprint;
  if (!particles.empty()) {
    footprint.lo = {grid.resolution(), grid.resolution(), grid.resolution()};
    footprint.hi = {0, 0, 0};
  }
  for (std::size_t p = 0; p < particles.size(); ++p) {
    const Stencil st = make_stencil(particles[p].position, grid, p);
    column_of[p] = st.base[0] / kSlabWidth;
    for (std::size_t a = 0; a < 3; ++a) {
      footprint.lo[a] = std::min(footprint.lo[a], st.base[a]);
      footprint.hi[a] = std::max(footprint.hi[a], st.base[a] + 2);
    }
  }
  grid.include_in_active(footprint);
  std::vector<std::size_t> column_offsets;
  auto& order = grid.visit_order();
  sort_by_column(column_of, slabs, column_offsets, order);
  auto slab_begin = [&](int slab) {
    return column_offsets[static_cast<std::size_t>(std::min(slab, slabs))];
  };

  auto& nodes = grid.nodes();
  auto scatter_slab = [&](int slab) {
    const std::size_t stop = slab_begin(slab + 1);
    for (std::size_t o = slab_begin(slab); o < stop; ++o) {
      const std::size_t p = order[o];
      const MaterialParticle& part = particles[p];
      const Stencil st = make_stencil(part.position, grid, p);
      Mat3 affine = (stress_coeff * part.volume) * part.kirchhoff_stress;
      if (apic) affine += part.mass * part.affine_velocity;
      // momentum contribution at node offset (a,b,c): mv + affine * ((a,b,c) - fx) * dx
      const Vec3 base_momentum = part.mass * part.velocity - affine * st.fx * dx;
      const Vec3 col0 = affine.col(0) * dx;
      const Vec3 col1 = affine.col(1) * dx;
      const Vec3 col2 = affine.col(2) * dx;
      const std::size_t origin = static_cast<std::size_t>(st.base[0]) * stride_i +
                                 static_cast<std::size_t>(st.base[1]) * stride_j + static_cast<std::size_t>(st.base[2]);
      for (int a = 0; a < 3; ++a) {
        const Vec3 ma = base_momentum + a * col0;
        for (int b = 0; b < 3; ++b) {
          const Vec3 mab = ma + b * col1;
          const double wab = st.weights[0][static_cast<std::size_t>(a)] * st.weights[1][static_cast<std::size_t>(b)];
          Vec4* row = nodes.data() + origin + static_cast<std::size_t>(a) * stride_i + static_cast<std::size_t>(b) * stride_j;
          for (int c = 0; c < 3; ++c) {
            const double w = wab * st.weights[2][static_cast<std::size_t>(c)];
            const Vec3 mom = mab + c * col2;
            Vec4 contrib(mom.x(), mom.y(), mom.z(), part.mass);
            row[c] += w * contrib;
          }
        }
      }
    }
  };

  for (int color = 0; color < 2; ++color) {
    std::vector<int> batch;
    for (int s = color; s < slabs; s += 2) batch.push_back(s);
    parallel_for(batch.size(), workers, [&](std::size_t begin, std::size_t end) {
      for (std::size_t b = begin; b < end; ++b) scatter_slab(batch[b]);
    });
  }

  double mass = 0.0;
  for (const auto& p : particles) mass += p.mass;
  grid.set_particle_mass(mass);
  grid.set_holds_velocity(false);
}

Vec3 body_acceleration(const SimConfig& config, double total_mass) {
  Vec3 acc = config.gravity * config.length_scale;
  if (total_mass > 0.0) acc += config.external_force * (config.length_scale / total_mass);
  return acc;
}

void grid_update(MpmGrid& grid, const SimConfig& config, double dt) {
  const Vec3 acc = body_acceleration(config, grid.particle_mass());
  const bool flip = config.transfer == TransferScheme::PicFlip;
  auto& nodes = grid.nodes();
  auto& previous = grid.previous_velocity();
  if (flip && previous.size() != nodes.size()) previous.assign(nodes.size(), Vec3::Zero());
  const int n = grid.resolution();
  const double dx = grid.dx();
  const BoundaryConfig& bc = grid.boundary();
  const int workers = config.worker_count();
  const MpmGrid::NodeBox box = grid.active_box();
  if (box.empty()) {
    grid.set_holds_velocity(true);
    return;
  }
  const auto slices = static_cast<std::size_t>(box.hi[0] - box.lo[0] + 1);
  parallel_for(slices, workers, [&](std::size_t begin, std::size_t end) {
    for (int i = box.lo[0] + static_cast<int>(begin); i < box.lo[0] + static_cast<int>(end); ++i) {
      for (int j = box.lo[1]; j <= box.hi[1]; ++j) {
        for (int k = box.lo[2]; k <= box.hi[2]; ++k) {
          const std::size_t idx = grid.index(i, j, k);
          Vec4& node = nodes[idx];
          const double m = node[3];
          if (m < kGridMassEpsilon) {
            node.head<3>().setZero();
            if (flip) previous[idx].setZero();
            continue;
          }
          Vec3 v = node.head<3>() / m;
          if (flip) previous[idx] = v;
          v += dt * acc;
          apply_boundary(v, i, j, k, n, dx, bc);
          node.head<3>() = v;
        }
      }
    }
  });
  grid.set_holds_velocity(true);
}

void g2p(const MpmGrid& grid, ParticleSet& particles, const MaterialTable& materials, double dt,
         const SimConfig& config, std::uint64_t step_index) {
  const double dx = grid.dx();
  const double four_inv_dx = 4.0 * grid.inv_dx();
  const double lo = dx;
  const double hi = 1.0 - dx;
  const bool flip = config.transfer == TransferScheme::PicFlip;
  const double flip_ratio = config.flip_ratio;
  const auto& nodes = grid.nodes();
  const auto& previous = grid.previous_velocity();
  const std::size_t stride_j = static_cast<std::size_t>(grid.nodes_per_axis());
  const std::size_t stride_i = stride_j * stride_j;

  const auto& order = grid.visit_order();
  const bool use_order = order.size() == particles.size();
  parallel_for(particles.size(), config.worker_count(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t o = begin; o < end; ++o) {
      const std::size_t p = use_order ? order[o] : o;
      MaterialParticle& part = particles[p];
      const Stencil st = make_stencil(part.position, grid, p);
      Vec3 v = Vec3::Zero();
      Vec3 v_old = Vec3::Zero();
      // sum of w * v_i * offset^T, offset in {0,1,2}^3
      Mat3 moment = Mat3::Zero();
      const std::size_t origin = static_cast<std::size_t>(st.base[0]) * stride_i +
                                 static_cast<std::size_t>(st.base[1]) * stride_j + static_cast<std::size_t>(st.base[2]);
      for (int a = 0; a < 3; ++a) {
        for (int b = 0; b < 3; ++b) {
          const double wab = st.weights[0][static_cast<std::size_t>(a)] * st.weights[1][static_cast<std::size_t>(b)];
          const std::size_t row = origin + static_cast<std::size_t>(a) * stride_i + static_cast<std::size_t>(b) * stride_j;
          const Vec3 v0 = nodes[row].head<3>();
          const Vec3 v1 = nodes[row + 1].head<3>();
          const Vec3 v2 = nodes[row + 2].head<3>();
          const Vec3 w1v1 = st.weights[2][1] * v1;
          const Vec3 w2v2 = st.weights[2][2] * v2;
          // row sum and its first moment in c
          const Vec3 sum = wab * (st.weights[2][0] * v0 + w1v1 + w2v2);
          const Vec3 first = wab * (w1v1 + 2.0 * w2v2);
          v += sum;
          moment.col(0) += a * sum;
          moment.col(1) += b * sum;
          moment.col(2) += first;
          if (flip) {
            v_old += wab * (st.weights[2][0] * previous[row] + st.weights[2][1] * previous[row + 1] +
                            st.weights[2][2] * previous[row + 2]);
          }
        }
      }
      const Mat3 grad_v = four_inv_dx * (moment - v * st.fx.transpose());
      if (!v.allFinite() || !grad_v.allFinite()) {
        throw SimulationError("non-finite velocity at particle " + std::to_string(p) + ", step " +
                              std::to_string(step_index));
      }
      if (flip) {
        const Vec3 v_flip = part.velocity + (v - v_old);
        part.velocity = (1.0 - flip_ratio) * v + flip_ratio * v_flip;
      } else {
        part.velocity = v;
      }
      part.affine_velocity = grad_v;
      part.position = (part.position + dt * part.velocity).cwiseMax(lo).cwiseMin(hi);

      const Mat3 f_trial = (Mat3::Identity() + dt * grad_v) * part.deformation_gradient;
      const StressResult r = material_stress(f_trial, part.plastic, materials[part.material_id], grad_v, dt);
      part.deformation_gradient = r.f;
      part.plastic = r.plastic;
      part.kirchhoff_stress = r.kirchhoff_stress;
    }
  });
}

double stable_dt(const SimState& state, const SimConfig& config) {
  double v_max = 0.0;
  for (const auto& p : state.particles) v_max = std::max(v_max, p.velocity.norm());
  double c_wave = 0.0;
  std::vector<bool> used(state.materials.size(), false);
  for (const auto& p : state.particles) {
    if (p.material_id < used.size()) used[p.material_id] = true;
  }
  for (std::size_t m = 0; m < state.materials.size(); ++m) {
    if (used[m]) c_wave = std::max(c_wave, state.materials[m].wave_speed());
  }
  const double speed = v_max + c_wave;
  if (!(speed > 0.0)) return config.dt_max;
  return std::min(config.dt_max, config.cfl * state.grid.dx() / speed);
}

namespace {

void check_material_ids(const ParticleSet& particles, const MaterialTable& materials) {
  for (std::size_t p = 0; p < particles.size(); ++p) {
    if (particles[p].material_id >= materials.size()) {
      throw SimulationError("particle " + std::to_string(p) + " references unknown material " +
                            std::to_string(particles[p].material_id));
    }
  }
}

}  // namespace

void refresh_stress(SimState& state) {
  check_material_ids(state.particles, state.materials);
  for (auto& p : state.particles) {
    const StressResult r =
        material_stress(p.deformation_gradient, p.plastic, state.materials[p.material_id], p.affine_velocity, 0.0);
    p.deformation_gradient = r.f;
    p.plastic = r.plastic;
    p.kirchhoff_stress = r.kirchhoff_stress;
  }
}

SimState make_sim_state(ParticleSet particles, MaterialTable materials, const SimConfig& config) {
  config.validate();
  SimState state;
  state.particles = std::move(particles);
  state.materials = std::move(materials);
  state.grid = MpmGrid(config.grid_resolution, config.boundary);
  refresh_stress(state);
  return state;
}

double step(SimState& state, const SimConfig& config) {
  const double dt = config.dt ? *config.dt : stable_dt(state, config);
  state.grid.set_boundary(config.boundary);
  state.grid.clear();
  p2g(state.particles, state.grid, dt, config);
  grid_update(state.grid, config, dt);
  g2p(state.grid, state.particles, state.materials, dt, config, state.step_count);
  ++state.step_count;
  state.time += dt;
  return dt;
}

}  // namespace gaussmpm
