#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "gaussmpm/image.hpp"
#include "gaussmpm/linalg.hpp"
#include "gaussmpm/particles.hpp"

namespace gaussmpm {

using Quat = Eigen::Vector4d;  // (w, x, y, z), possibly unnormalized as stored

// Smallest covariance eigenvalue handed to the renderer and density field.
inline constexpr double kMinCovarianceEigenvalue = 1e-12;

struct GaussianKernel {
  Vec3 position = Vec3::Zero();
  // Per-axis standard deviation (linear, not log).
  Vec3 scale = Vec3::Ones();
  Quat rotation{1.0, 0.0, 0.0, 0.0};
  double opacity = 1.0;
  // (degree + 1)^2 RGB coefficients, DC first.
  std::vector<Vec3> sh{Vec3::Zero()};

  Mat3 rotation_matrix() const;
  // R diag(s^2) R^T with eigenvalues clamped to kMinCovarianceEigenvalue.
  Mat3 covariance() const;

  friend bool operator==(const GaussianKernel&, const GaussianKernel&) = default;
};

// x_domain = scale * x_world + translation.
struct DomainTransform {
  double scale = 1.0;
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& x) const { return scale * x + translation; }
  Vec3 invert(const Vec3& x) const { return (x - translation) / scale; }
  // (this o inner)(x) = this(inner(x))
  DomainTransform after(const DomainTransform& inner) const {
    return {scale * inner.scale, scale * inner.translation + translation};
  }

  friend bool operator==(const DomainTransform&, const DomainTransform&) = default;
};

enum class OpacityEncoding { Logit, Linear };

struct GaussianCloud {
  std::vector<GaussianKernel> kernels;
  int sh_degree = 0;
  DomainTransform domain_transform;
  // Only affects how save_ply writes opacity.
  OpacityEncoding opacity_encoding = OpacityEncoding::Logit;

  friend bool operator==(const GaussianCloud&, const GaussianCloud&) = default;
};

inline int sh_coefficient_count(int degree) { return (degree + 1) * (degree + 1); }

enum class PlyFormat { BinaryLittleEndian, Ascii };

// Reads the usual splat vertex layout: x y z, opacity (logit) or alpha
// (linear), scale_0..2 (log), rot_0..3 (w x y z), f_dc_0..2, f_rest_*
// (channel-major). ParseError names a missing property; DataError names the
// vertex carrying a non-finite value.
GaussianCloud load_ply(const std::filesystem::path& path);

// Inverse of load_ply; loading the result gives back identical doubles for
// every field that load_ply produced.
void save_ply(const GaussianCloud& cloud, const std::filesystem::path& path,
              PlyFormat format = PlyFormat::BinaryLittleEndian);

// Isotropic scale and translation fitting the positions' bounding box into
// [margin, 1 - margin]^3, centred. Kernel scales are multiplied by the same
// factor. A cloud whose positions all coincide is moved to the centre
// unscaled.
GaussianCloud normalize_to_domain(const GaussianCloud& cloud, double margin = 0.1);

struct SeedingConfig {
  // kg / m^3
  double density = 1000.0;
  // Domain units per second.
  Vec3 initial_velocity = Vec3::Zero();
  std::uint32_t material_id = 0;
  // Voxel resolution of the occupancy estimate; matches the MPM grid.
  int grid_resolution = 64;
  bool internal_fill = true;
  double fill_threshold = 2.0;
  int particles_per_voxel = 8;
  std::uint64_t seed = 0;
  // Overrides the voxel volume estimate (m^3).
  std::optional<double> volume_m3;
  // Domain units per metre. Empty: the cloud's domain_transform scale,
  // i.e. world units are taken to be metres.
  std::optional<double> length_scale;
  // Reorder particles by grid cell so scatter and gather stay cache-friendly.
  bool sort_by_cell = true;
};

struct SeedingReport {
  std::size_t kernel_particles = 0;
  std::size_t fill_particles = 0;
  std::size_t occupied_voxels = 0;
  double volume_m3 = 0.0;
  double total_mass = 0.0;
};

// Voxel occupancy of a normalized cloud: density field above threshold,
// voxels holding a kernel centre, and voxels enclosed along all six axis
// directions. Index (i * n + j) * n + k.
std::vector<std::uint8_t> occupancy_voxels(const GaussianCloud& cloud, int resolution, double threshold);

ParticleSet seed_particles(const GaussianCloud& cloud, const SeedingConfig& config, SeedingReport* report = nullptr);

// F Sigma0 F^T, symmetrized.
Mat3 deform_covariance(const Mat3& sigma0, const Mat3& f);

// Real SH up to degree 3 contracted with the coefficients, +0.5, clamped to
// [0, 1]. ShapeError when coeffs.size() != (degree + 1)^2; PreconditionError
// when the direction is not unit length.
Vec3 evaluate_sh(std::span<const Vec3> coeffs, int degree, const Vec3& direction);

// Pinhole camera, OpenCV convention: x_cam = R x_world + t, +z forward,
// +y down the image.
struct Camera {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();
  double fx = 500.0;
  double fy = 500.0;
  double cx = 320.0;
  double cy = 240.0;
  int width = 640;
  int height = 480;

  static Camera look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg, int width,
                        int height);
  Vec3 center() const { return -rotation.transpose() * translation; }
  // Throws ParameterError when an invariant fails.
  void validate() const;
};

struct RenderOptions {
  // Capped at the cloud's degree.
  int sh_degree = 3;
  double fill_opacity_scale = 0.2;
  Vec3 background = Vec3::Zero();
};

// Front-to-back alpha blending of EWA-projected kernels, globally sorted by
// camera depth. With particles, each particle is drawn at its own position
// with its source kernel's covariance deformed by F.
Image render_frame(const GaussianCloud& cloud, const ParticleSet* particles, const Camera& camera,
                   const RenderOptions& options = {});

}  // namespace gaussmpm
