#include "gaussmpm/linalg.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace gaussmpm {

namespace {

Svd3 jacobi_svd(const Mat3& f) {
  Eigen::JacobiSVD<Mat3, Eigen::NoQRPreconditioner> svd(f, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Svd3 out{svd.matrixU(), svd.singularValues(), svd.matrixV()};
  if (out.u.determinant() < 0.0) {
    out.u.col(2) *= -1.0;
    out.sigma(2) *= -1.0;
  }
  if (out.v.determinant() < 0.0) {
    out.v.col(2) *= -1.0;
    out.sigma(2) *= -1.0;
  }
  return out;
}

// SVD from the closed-form eigen decomposition of F^T F. Returns false when
// the result does not diagonalize F to near machine precision.
bool direct_svd(const Mat3& f, Svd3& out) {
  Eigen::SelfAdjointEigenSolver<Mat3> eig;
  eig.computeDirect(f.transpose() * f);
  const Vec3 ev = eig.eigenvalues();
  // ascending -> descending
  Mat3 v;
  v.col(0) = eig.eigenvectors().col(2);
  v.col(1) = eig.eigenvectors().col(1);
  v.col(2) = v.col(0).cross(v.col(1));
  const double s0 = std::sqrt(std::max(ev(2), 0.0));
  const double s1 = std::sqrt(std::max(ev(1), 0.0));
  if (!(s0 > 0.0) || !(s1 > 1e-6 * s0) || !std::isfinite(s0)) return false;
  const Vec3 fv0 = f * v.col(0);
  const Vec3 fv1 = f * v.col(1);
  Mat3 u;
  u.col(0) = fv0.normalized();
  u.col(1) = (fv1 - u.col(0).dot(fv1) * u.col(0)).normalized();
  u.col(2) = u.col(0).cross(u.col(1));
  const Mat3 d = u.transpose() * f * v;
  const double off = std::max({std::abs(d(0, 1)), std::abs(d(0, 2)), std::abs(d(1, 0)), std::abs(d(1, 2)),
                               std::abs(d(2, 0)), std::abs(d(2, 1))});
  if (!(off <= 1e-13 * d(0, 0))) return false;
  out.u = u;
  out.sigma = d.diagonal();
  out.v = v;
  return out.sigma(0) >= out.sigma(1) && out.sigma(1) >= std::abs(out.sigma(2));
}

}  // namespace

Svd3 rotation_safe_svd(const Mat3& f) {
  Svd3 out;
  if (direct_svd(f, out)) return out;
  return jacobi_svd(f);
}

namespace {

Mat3 inverse_transpose(const Mat3& a, double det) {
  Mat3 cof;
  cof(0, 0) = a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1);
  cof(0, 1) = a(1, 2) * a(2, 0) - a(1, 0) * a(2, 2);
  cof(0, 2) = a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0);
  cof(1, 0) = a(0, 2) * a(2, 1) - a(0, 1) * a(2, 2);
  cof(1, 1) = a(0, 0) * a(2, 2) - a(0, 2) * a(2, 0);
  cof(1, 2) = a(0, 1) * a(2, 0) - a(0, 0) * a(2, 1);
  cof(2, 0) = a(0, 1) * a(1, 2) - a(0, 2) * a(1, 1);
  cof(2, 1) = a(0, 2) * a(1, 0) - a(0, 0) * a(1, 2);
  cof(2, 2) = a(0, 0) * a(1, 1) - a(0, 1) * a(1, 0);
  return cof / det;
}

}  // namespace

Mat3 polar_rotation(const Mat3& f) {
  Mat3 x = f;
  for (int it = 0; it < 40; ++it) {
    const double det = x.determinant();
    if (!(det > 0.0) || !std::isfinite(det)) break;
    const Mat3 xit = inverse_transpose(x, det);
    // Determinant scaling only while far from converged; it slows the
    // quadratic tail otherwise.
    double zeta = 1.0;
    if (it < 4 && std::abs(det - 1.0) > 1e-2) zeta = std::cbrt(1.0 / det);
    const Mat3 next = 0.5 * (zeta * x + xit / zeta);
    const double change = (next - x).cwiseAbs().maxCoeff();
    x = next;
    // quadratic convergence: the error of x is about change^2
    if (change < 1e-7) return x;
  }
  const Svd3 s = rotation_safe_svd(f);
  return s.u * s.v.transpose();
}

}  // namespace gaussmpm
