#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "gaussmpm/error.hpp"
#include "gaussmpm/gaussian_asset.hpp"

namespace gaussmpm {

namespace {

// Density splats are truncated at 3 sigma and at this many voxels per side.
constexpr int kMaxSplatRadius = 16;

int voxel_of(double x, int n) { return std::clamp(static_cast<int>(std::floor(x * n)), 0, n - 1); }

std::size_t flat(int i, int j, int k, int n) {
  return (static_cast<std::size_t>(i) * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)) *
             static_cast<std::size_t>(n) +
         static_cast<std::size_t>(k);
}

// Kernels bucketed by voxel (compressed rows) for nearest-neighbour queries.
struct KernelBuckets {
  int n = 0;
  std::vector<std::size_t> start;
  std::vector<std::uint32_t> items;

  KernelBuckets(const GaussianCloud& cloud, int resolution) : n(resolution) {
    const std::size_t cells = static_cast<std::size_t>(n) * n * n;
    start.assign(cells + 1, 0);
    std::vector<std::size_t> cell_of(cloud.kernels.size());
    for (std::size_t k = 0; k < cloud.kernels.size(); ++k) {
      const Vec3& x = cloud.kernels[k].position;
      cell_of[k] = flat(voxel_of(x.x(), n), voxel_of(x.y(), n), voxel_of(x.z(), n), n);
      ++start[cell_of[k] + 1];
    }
    std::partial_sum(start.begin(), start.end(), start.begin());
    items.resize(cloud.kernels.size());
    std::vector<std::size_t> cursor(start.begin(), start.end() - 1);
    for (std::size_t k = 0; k < cloud.kernels.size(); ++k) items[cursor[cell_of[k]]++] = static_cast<std::uint32_t>(k);
  }

  bool occupied(int i, int j, int k) const {
    const std::size_t c = flat(i, j, k, n);
    return start[c + 1] > start[c];
  }

  // Nearest kernel centre; ties go to the lower index.
  std::int64_t nearest(const GaussianCloud& cloud, const Vec3& x) const {
    const int ci = voxel_of(x.x(), n), cj = voxel_of(x.y(), n), ck = voxel_of(x.z(), n);
    const double h = 1.0 / n;
    double best_d2 = std::numeric_limits<double>::infinity();
    std::int64_t best = -1;
    for (int r = 0; r <= n; ++r) {
      for (int i = std::max(0, ci - r); i <= std::min(n - 1, ci + r); ++i) {
        for (int j = std::max(0, cj - r); j <= std::min(n - 1, cj + r); ++j) {
          for (int k = std::max(0, ck - r); k <= std::min(n - 1, ck + r); ++k) {
            if (std::max({std::abs(i - ci), std::abs(j - cj), std::abs(k - ck)}) != r) continue;
            const std::size_t c = flat(i, j, k, n);
            for (std::size_t s = start[c]; s < start[c + 1]; ++s) {
              const std::uint32_t idx = items[s];
              const double d2 = (cloud.kernels[idx].position - x).squaredNorm();
              if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
                best_d2 = d2;
                best = idx;
              }
            }
          }
        }
      }
      // Anything in ring r + 1 is at least r * h away.
      if (best >= 0 && std::sqrt(best_d2) <= r * h) break;
    }
    return best;
  }
};

}  // namespace

GaussianCloud normalize_to_domain(const GaussianCloud& cloud, double margin) {
  if (cloud.kernels.empty()) throw PreconditionError("cannot normalize an empty cloud");
  if (!(margin > 0.0 && margin < 0.5)) throw ParameterError("margin must lie in (0, 0.5)");
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 hi = -lo;
  for (const auto& k : cloud.kernels) {
    lo = lo.cwiseMin(k.position);
    hi = hi.cwiseMax(k.position);
  }
  const double extent = (hi - lo).maxCoeff();
  DomainTransform step;
  if (extent > 0.0) {
    step.scale = (1.0 - 2.0 * margin) / extent;
    step.translation = Vec3::Constant(0.5) - step.scale * 0.5 * (lo + hi);
  } else {
    step.translation = Vec3::Constant(0.5) - lo;
  }
  GaussianCloud out = cloud;
  for (auto& k : out.kernels) {
    k.position = step.apply(k.position);
    k.scale *= step.scale;
  }
  if (extent == 0.0) {
    for (auto& k : out.kernels) k.position = Vec3::Constant(0.5);
  }
  out.domain_transform = step.after(cloud.domain_transform);
  return out;
}

std::vector<std::uint8_t> occupancy_voxels(const GaussianCloud& cloud, int n, double threshold) {
  if (n < 1) throw ParameterError("voxel resolution must be positive");
  const double dx = 1.0 / n;
  const std::size_t cells = static_cast<std::size_t>(n) * n * n;
  std::vector<double> density(cells, 0.0);
  for (const auto& kernel : cloud.kernels) {
    const Mat3 cov = kernel.covariance();
    const Mat3 inv = cov.inverse();
    int lo[3], hi[3];
    for (int a = 0; a < 3; ++a) {
      const double r = 3.0 * std::sqrt(cov(a, a));
      const int centre = voxel_of(kernel.position[a], n);
      lo[a] = std::max({0, static_cast<int>(std::ceil((kernel.position[a] - r) / dx - 0.5)), centre - kMaxSplatRadius});
      hi[a] = std::min({n - 1, static_cast<int>(std::floor((kernel.position[a] + r) / dx - 0.5)),
                        centre + kMaxSplatRadius});
    }
    for (int i = lo[0]; i <= hi[0]; ++i) {
      for (int j = lo[1]; j <= hi[1]; ++j) {
        for (int k = lo[2]; k <= hi[2]; ++k) {
          const Vec3 d = Vec3((i + 0.5) * dx, (j + 0.5) * dx, (k + 0.5) * dx) - kernel.position;
          density[flat(i, j, k, n)] += kernel.opacity * std::exp(-0.5 * d.dot(inv * d));
        }
      }
    }
  }
  std::vector<std::uint8_t> marked(cells, 0);
  for (std::size_t c = 0; c < cells; ++c) marked[c] = density[c] > threshold ? 1 : 0;
  for (const auto& kernel : cloud.kernels) {
    const Vec3& x = kernel.position;
    marked[flat(voxel_of(x.x(), n), voxel_of(x.y(), n), voxel_of(x.z(), n), n)] = 1;
  }

  // enclosed[c] counts the axes along which c has marked voxels on both sides
  std::vector<std::uint8_t> enclosed(cells, 0);
  for (int axis = 0; axis < 3; ++axis) {
    for (int u = 0; u < n; ++u) {
      for (int v = 0; v < n; ++v) {
        auto at = [&](int t) {
          switch (axis) {
            case 0:
              return flat(t, u, v, n);
            case 1:
              return flat(u, t, v, n);
            default:
              return flat(u, v, t, n);
          }
        };
        int first = -1, last = -1;
        for (int t = 0; t < n; ++t) {
          if (marked[at(t)]) {
            if (first < 0) first = t;
            last = t;
          }
        }
        for (int t = first + 1; t < last; ++t) ++enclosed[at(t)];
      }
    }
  }
  for (std::size_t c = 0; c < cells; ++c) {
    if (enclosed[c] == 3) marked[c] = 1;
  }
  return marked;
}

ParticleSet seed_particles(const GaussianCloud& cloud, const SeedingConfig& config, SeedingReport* report) {
  if (!(config.density > 0.0)) throw ParameterError("seeding density must be positive");
  if (config.particles_per_voxel < 1) throw ParameterError("particles per voxel must be at least 1");
  if (config.grid_resolution < 4) throw ParameterError("seeding grid resolution must be at least 4");
  if (cloud.kernels.empty()) throw PreconditionError("cannot seed particles from an empty cloud");
  for (std::size_t k = 0; k < cloud.kernels.size(); ++k) {
    const Vec3& x = cloud.kernels[k].position;
    if (!((x.array() >= 0.0).all() && (x.array() <= 1.0).all())) {
      throw PreconditionError("kernel " + std::to_string(k) + " lies outside [0,1]^3; normalize the cloud first");
    }
  }
  const double length_scale = config.length_scale.value_or(cloud.domain_transform.scale);
  if (!(length_scale > 0.0)) throw ParameterError("length scale must be positive");

  const int n = config.grid_resolution;
  const double dx = 1.0 / n;
  const auto marked = occupancy_voxels(cloud, n, config.fill_threshold);
  const std::size_t occupied = static_cast<std::size_t>(std::count(marked.begin(), marked.end(), 1));

  ParticleSet particles;
  particles.reserve(cloud.kernels.size());
  for (std::size_t k = 0; k < cloud.kernels.size(); ++k) {
    MaterialParticle p;
    p.position = cloud.kernels[k].position;
    p.velocity = config.initial_velocity;
    p.material_id = config.material_id;
    p.kernel_ref = static_cast<std::int64_t>(k);
    particles.push_back(p);
  }
  const std::size_t kernel_particles = particles.size();

  if (config.internal_fill) {
    const KernelBuckets buckets(cloud, n);
    std::mt19937_64 rng(config.seed);
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        for (int k = 0; k < n; ++k) {
          if (!marked[flat(i, j, k, n)] || buckets.occupied(i, j, k)) continue;
          for (int s = 0; s < config.particles_per_voxel; ++s) {
            MaterialParticle p;
            const double a = jitter(rng), b = jitter(rng), c = jitter(rng);
            p.position = Vec3((i + a) * dx, (j + b) * dx, (k + c) * dx);
            p.velocity = config.initial_velocity;
            p.material_id = config.material_id;
            p.kernel_ref = buckets.nearest(cloud, p.position);
            p.internal_fill = true;
            particles.push_back(p);
          }
        }
      }
    }
  }

  const double domain_volume = config.volume_m3 ? *config.volume_m3 * std::pow(length_scale, 3)
                                                : static_cast<double>(occupied) * dx * dx * dx;
  const double volume_m3 = config.volume_m3 ? *config.volume_m3 : domain_volume / std::pow(length_scale, 3);
  if (!(volume_m3 > 0.0)) throw ParameterError("volume estimate must be positive");
  const double count = static_cast<double>(particles.size());
  const double total_mass = config.density * volume_m3;
  for (auto& p : particles) {
    p.mass = total_mass / count;
    p.volume = domain_volume / count;
  }

  if (config.sort_by_cell) {
    std::vector<std::size_t> key(particles.size());
    for (std::size_t p = 0; p < particles.size(); ++p) {
      const Vec3& x = particles[p].position;
      key[p] = flat(voxel_of(x.x(), n), voxel_of(x.y(), n), voxel_of(x.z(), n), n);
    }
    std::vector<std::size_t> order(particles.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key[a] < key[b]; });
    ParticleSet sorted;
    sorted.reserve(particles.size());
    for (std::size_t idx : order) sorted.push_back(particles[idx]);
    particles = std::move(sorted);
  }

  if (report) {
    report->kernel_particles = kernel_particles;
    report->fill_particles = particles.size() - kernel_particles;
    report->occupied_voxels = occupied;
    report->volume_m3 = volume_m3;
    report->total_mass = total_mass;
  }
  return particles;
}

Mat3 deform_covariance(const Mat3& sigma0, const Mat3& f) { return symmetrized(f * sigma0 * f.transpose()); }

}  // namespace gaussmpm
