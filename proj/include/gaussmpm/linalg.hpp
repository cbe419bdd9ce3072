#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace gaussmpm {

using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat3 = Eigen::Matrix3d;

// F = U * diag(sigma) * V^T with sigma sorted descending and
// det U = det V = +1. A reflection in F shows up as a negative sigma(2).
struct Svd3 {
  Mat3 u;
  Vec3 sigma;
  Mat3 v;
};

Svd3 rotation_safe_svd(const Mat3& f);

// Rotation factor R of the polar decomposition F = R * S for det F > 0.
// Uses scaled Newton iteration and falls back to the SVD if it stalls.
Mat3 polar_rotation(const Mat3& f);

inline Mat3 symmetrized(const Mat3& a) { return 0.5 * (a + a.transpose()); }

// Largest absolute entry of A - A^T.
inline double asymmetry(const Mat3& a) { return (a - a.transpose()).cwiseAbs().maxCoeff(); }

}  // namespace gaussmpm
