#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "gaussmpm/error.hpp"
#include "gaussmpm/gaussian_asset.hpp"

namespace gaussmpm {

namespace {

constexpr double kC0 = 0.28209479177387814;
constexpr double kC1 = 0.4886025119029199;
constexpr double kC2[] = {1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792,
                          0.5462742152960396};
constexpr double kC3[] = {-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
                          -0.4570457994644658, 1.445305721320277,  -0.5900435899266435};

// Screen-space low-pass added to every projected covariance.
constexpr double kDilation = 0.3;
constexpr double kNearPlane = 0.01;
constexpr double kMinTransmittance = 1e-4;

Vec3 sh_unclamped(std::span<const Vec3> c, int degree, const Vec3& d) {
  Vec3 rgb = kC0 * c[0];
  if (degree < 1) return rgb;
  const double x = d.x(), y = d.y(), z = d.z();
  rgb += -kC1 * y * c[1] + kC1 * z * c[2] - kC1 * x * c[3];
  if (degree < 2) return rgb;
  const double xx = x * x, yy = y * y, zz = z * z, xy = x * y, yz = y * z, xz = x * z;
  rgb += kC2[0] * xy * c[4] + kC2[1] * yz * c[5] + kC2[2] * (2.0 * zz - xx - yy) * c[6] + kC2[3] * xz * c[7] +
         kC2[4] * (xx - yy) * c[8];
  if (degree < 3) return rgb;
  rgb += kC3[0] * y * (3.0 * xx - yy) * c[9] + kC3[1] * xy * z * c[10] + kC3[2] * y * (4.0 * zz - xx - yy) * c[11] +
         kC3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy) * c[12] + kC3[4] * x * (4.0 * zz - xx - yy) * c[13] +
         kC3[5] * z * (xx - yy) * c[14] + kC3[6] * x * (xx - 3.0 * yy) * c[15];
  return rgb;
}

struct Splat {
  double depth = 0.0;
  std::size_t order = 0;
  double u = 0.0, v = 0.0;
  // inverse of the 2x2 screen covariance
  double ia = 0.0, ib = 0.0, ic = 0.0;
  int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double alpha = 0.0;
  Vec3 color = Vec3::Zero();
};

}  // namespace

Vec3 evaluate_sh(std::span<const Vec3> coeffs, int degree, const Vec3& direction) {
  if (degree < 0 || degree > 3) throw ShapeError("SH degree must lie in [0, 3], got " + std::to_string(degree));
  if (coeffs.size() != static_cast<std::size_t>(sh_coefficient_count(degree))) {
    throw ShapeError("degree " + std::to_string(degree) + " needs " + std::to_string(sh_coefficient_count(degree)) +
                     " SH coefficients, got " + std::to_string(coeffs.size()));
  }
  if (std::abs(direction.norm() - 1.0) > 1e-6) throw PreconditionError("SH direction must be a unit vector");
  return (sh_unclamped(coeffs, degree, direction) + Vec3::Constant(0.5)).cwiseMax(0.0).cwiseMin(1.0);
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, const Vec3& up, double fov_y_deg, int width,
                       int height) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Camera c;
  c.rotation.row(0) = right.transpose();
  c.rotation.row(1) = down.transpose();
  c.rotation.row(2) = forward.transpose();
  c.translation = -c.rotation * eye;
  c.width = width;
  c.height = height;
  c.fy = 0.5 * height / std::tan(0.5 * fov_y_deg * std::numbers::pi / 180.0);
  c.fx = c.fy;
  c.cx = 0.5 * width;
  c.cy = 0.5 * height;
  c.validate();
  return c;
}

void Camera::validate() const {
  if (!(fx > 0.0 && fy > 0.0)) throw ParameterError("camera focal lengths must be positive");
  if (width < 1 || height < 1) throw ParameterError("camera resolution must be at least 1x1");
  if (!rotation.allFinite() || !translation.allFinite()) throw ParameterError("camera pose must be finite");
}

Image render_frame(const GaussianCloud& cloud, const ParticleSet* particles, const Camera& camera,
                   const RenderOptions& options) {
  camera.validate();
  const int degree = std::clamp(std::min(options.sh_degree, cloud.sh_degree), 0, 3);
  const Vec3 eye = camera.center();
  const std::size_t count = particles ? particles->size() : cloud.kernels.size();

  std::vector<Splat> splats;
  splats.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const GaussianKernel* kernel = nullptr;
    Vec3 position;
    Mat3 cov;
    double alpha;
    if (particles) {
      const MaterialParticle& p = (*particles)[i];
      if (p.kernel_ref < 0 || static_cast<std::size_t>(p.kernel_ref) >= cloud.kernels.size()) continue;
      kernel = &cloud.kernels[static_cast<std::size_t>(p.kernel_ref)];
      position = p.position;
      cov = deform_covariance(kernel->covariance(), p.deformation_gradient);
      alpha = kernel->opacity * (p.internal_fill ? options.fill_opacity_scale : 1.0);
    } else {
      kernel = &cloud.kernels[i];
      position = kernel->position;
      cov = kernel->covariance();
      alpha = kernel->opacity;
    }
    if (kernel->sh.size() < static_cast<std::size_t>(sh_coefficient_count(degree))) {
      throw ShapeError("kernel has fewer SH coefficients than degree " + std::to_string(degree) + " needs");
    }
    if (!(alpha > 0.0)) continue;
    const Vec3 pc = camera.rotation * position + camera.translation;
    if (!(pc.z() > kNearPlane)) continue;
    const double iz = 1.0 / pc.z();
    Eigen::Matrix<double, 2, 3> j;
    j << camera.fx * iz, 0.0, -camera.fx * pc.x() * iz * iz, 0.0, camera.fy * iz, -camera.fy * pc.y() * iz * iz;
    const Eigen::Matrix<double, 2, 3> jr = j * camera.rotation;
    Eigen::Matrix2d s = jr * cov * jr.transpose();
    s(0, 0) += kDilation;
    s(1, 1) += kDilation;
    const double det = s(0, 0) * s(1, 1) - s(0, 1) * s(1, 0);
    if (!(det > 0.0)) continue;
    Splat sp;
    sp.depth = pc.z();
    sp.order = i;
    sp.u = camera.fx * pc.x() * iz + camera.cx;
    sp.v = camera.fy * pc.y() * iz + camera.cy;
    sp.ia = s(1, 1) / det;
    sp.ib = -0.5 * (s(0, 1) + s(1, 0)) / det;
    sp.ic = s(0, 0) / det;
    const double mid = 0.5 * (s(0, 0) + s(1, 1));
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = 3.0 * std::sqrt(lambda_max);
    // pixel x covers [x, x + 1); its centre is x + 0.5
    sp.x0 = std::max(0, static_cast<int>(std::floor(sp.u - radius - 0.5)));
    sp.x1 = std::min(camera.width - 1, static_cast<int>(std::ceil(sp.u + radius - 0.5)));
    sp.y0 = std::max(0, static_cast<int>(std::floor(sp.v - radius - 0.5)));
    sp.y1 = std::min(camera.height - 1, static_cast<int>(std::ceil(sp.v + radius - 0.5)));
    if (sp.x0 > sp.x1 || sp.y0 > sp.y1) continue;
    sp.alpha = alpha;
    const Vec3 dir = (position - eye).normalized();
    sp.color = (sh_unclamped(std::span<const Vec3>(kernel->sh.data(), static_cast<std::size_t>(sh_coefficient_count(degree))),
                             degree, dir) +
                Vec3::Constant(0.5))
                   .cwiseMax(0.0)
                   .cwiseMin(1.0);
    splats.push_back(sp);
  }
  std::sort(splats.begin(), splats.end(), [](const Splat& a, const Splat& b) {
    return a.depth < b.depth || (a.depth == b.depth && a.order < b.order);
  });

  const std::size_t pixels = static_cast<std::size_t>(camera.width) * static_cast<std::size_t>(camera.height);
  std::vector<double> transmittance(pixels, 1.0);
  std::vector<Vec3> accum(pixels, Vec3::Zero());
  for (const Splat& sp : splats) {
    for (int y = sp.y0; y <= sp.y1; ++y) {
      const double dy = y + 0.5 - sp.v;
      for (int x = sp.x0; x <= sp.x1; ++x) {
        const std::size_t idx = static_cast<std::size_t>(y) * static_cast<std::size_t>(camera.width) +
                                static_cast<std::size_t>(x);
        double& t = transmittance[idx];
        if (t < kMinTransmittance) continue;
        const double dxp = x + 0.5 - sp.u;
        const double power = -0.5 * (sp.ia * dxp * dxp + 2.0 * sp.ib * dxp * dy + sp.ic * dy * dy);
        const double a = sp.alpha * std::min(1.0, std::exp(power));
        accum[idx] += (t * a) * sp.color;
        t *= 1.0 - a;
      }
    }
  }

  Image image(camera.width, camera.height);
  for (std::size_t idx = 0; idx < pixels; ++idx) {
    const Vec3 c = accum[idx] + transmittance[idx] * options.background;
    for (int ch = 0; ch < 3; ++ch) {
      image.rgb[idx * 3 + static_cast<std::size_t>(ch)] =
          static_cast<std::uint8_t>(std::lround(std::clamp(c[ch], 0.0, 1.0) * 255.0));
    }
  }
  return image;
}

}  // namespace gaussmpm
