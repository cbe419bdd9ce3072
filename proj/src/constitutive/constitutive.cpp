#include "gaussmpm/constitutive.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "gaussmpm/error.hpp"

namespace gaussmpm {

namespace {

constexpr double kMinSingularValue = 1e-4;
// Solids whose trial det F drops below this get their singular values clamped.
constexpr double kMinSolidDeterminant = 1e-3;
constexpr double kClampedSingularValue = 0.1;

Vec3 hencky_strain(const Vec3& sigma) {
  return sigma.cwiseMax(kMinSingularValue).array().log().matrix();
}

Mat3 hencky_stress_from(const Mat3& u, const Vec3& eps, double mu, double lambda) {
  const double tr = eps.sum();
  const Vec3 diag = 2.0 * mu * eps + Vec3::Constant(lambda * tr);
  return symmetrized(u * diag.asDiagonal() * u.transpose());
}

Mat3 from_strain(const Svd3& s, const Vec3& eps) {
  return s.u * eps.array().exp().matrix().asDiagonal() * s.v.transpose();
}

Mat3 keep_invertible(const Mat3& f) {
  if (f.determinant() >= kMinSolidDeterminant) return f;
  Svd3 s = rotation_safe_svd(f);
  s.sigma = s.sigma.cwiseMax(kClampedSingularValue);
  return s.u * s.sigma.asDiagonal() * s.v.transpose();
}

}  // namespace

LameParameters lame_from_E_nu(double youngs_modulus, double poissons_ratio) {
  if (!(youngs_modulus > 0.0)) throw ParameterError("Young's modulus must be positive");
  if (!(poissons_ratio >= 0.0 && poissons_ratio < 0.5)) {
    throw ParameterError("Poisson's ratio must lie in [0, 0.5); got " + std::to_string(poissons_ratio));
  }
  const double mu = youngs_modulus / (2.0 * (1.0 + poissons_ratio));
  const double lambda = youngs_modulus * poissons_ratio / ((1.0 + poissons_ratio) * (1.0 - 2.0 * poissons_ratio));
  return {mu, lambda};
}

Mat3 stress_corotated(const Mat3& f, double mu, double lambda) {
  const double j = f.determinant();
  if (!(j > 0.0)) throw SimulationError("corotated stress: det F = " + std::to_string(j) + " is not positive");
  const Mat3 r = polar_rotation(f);
  const Mat3 tau = 2.0 * mu * (f - r) * f.transpose() + Mat3::Identity() * (lambda * (j - 1.0) * j);
  return symmetrized(tau);
}

Mat3 stress_hencky(const Mat3& f, double mu, double lambda) {
  const Svd3 s = rotation_safe_svd(f);
  return hencky_stress_from(s.u, hencky_strain(s.sigma), mu, lambda);
}

VonMisesReturn return_map_von_mises(const Mat3& f_trial, double mu, double yield_stress) {
  const Svd3 s = rotation_safe_svd(f_trial);
  if (!s.sigma.allFinite()) throw SimulationError("von Mises return: non-finite SVD");
  const Vec3 eps = hencky_strain(s.sigma);
  const double mean = eps.sum() / 3.0;
  const Vec3 dev = eps - Vec3::Constant(mean);
  const double dev_norm = dev.norm();
  const double trial = 2.0 * mu * dev_norm;
  if (trial <= yield_stress || dev_norm == 0.0) return {f_trial, 0.0};
  const Vec3 returned = Vec3::Constant(mean) + dev * (yield_stress / trial);
  return {from_strain(s, returned), dev_norm - yield_stress / (2.0 * mu)};
}

double von_mises_yield_value(const Mat3& f, double mu, double yield_stress) {
  const Svd3 s = rotation_safe_svd(f);
  const Vec3 eps = hencky_strain(s.sigma);
  const Vec3 dev = eps - Vec3::Constant(eps.sum() / 3.0);
  return (2.0 * mu * dev.norm() - yield_stress) / mu;
}

double drucker_prager_alpha(double friction_angle_deg) {
  const double sin_phi = std::sin(friction_angle_deg / 180.0 * std::numbers::pi);
  return std::sqrt(2.0 / 3.0) * 2.0 * sin_phi / (3.0 - sin_phi);
}

namespace {

void check_friction_angle(double friction_angle_deg) {
  if (!(friction_angle_deg > 0.0 && friction_angle_deg < 90.0)) {
    throw ParameterError("friction angle must lie in (0, 90) degrees");
  }
}

// Returns the Hencky strain after projection onto the cone.
Vec3 drucker_prager_project(const Svd3& s, double mu, double lambda, double alpha, DruckerPragerCase& which) {
  if (!s.sigma.allFinite()) throw SimulationError("Drucker-Prager return: non-finite SVD");
  const Vec3 eps = hencky_strain(s.sigma);
  const double tr = eps.sum();
  if (tr >= 0.0) {
    // Cohesionless material carries no tension: project to the cone tip.
    which = DruckerPragerCase::ConeTip;
    return Vec3::Zero();
  }
  const Vec3 dev = eps - Vec3::Constant(tr / 3.0);
  const double dev_norm = dev.norm();
  const double delta_gamma = dev_norm + (3.0 * lambda + 2.0 * mu) / (2.0 * mu) * tr * alpha;
  if (delta_gamma <= 0.0 || dev_norm == 0.0) {
    which = DruckerPragerCase::Elastic;
    return eps;
  }
  which = DruckerPragerCase::Shear;
  return eps - (delta_gamma / dev_norm) * dev;
}

}  // namespace

DruckerPragerReturn return_map_drucker_prager(const Mat3& f_trial, double mu, double lambda,
                                              double friction_angle_deg) {
  check_friction_angle(friction_angle_deg);
  const Svd3 s = rotation_safe_svd(f_trial);
  DruckerPragerReturn out;
  const Vec3 eps = drucker_prager_project(s, mu, lambda, drucker_prager_alpha(friction_angle_deg), out.which);
  out.f = out.which == DruckerPragerCase::Elastic ? f_trial : from_strain(s, eps);
  return out;
}

double drucker_prager_yield_value(const Mat3& f, double mu, double lambda, double friction_angle_deg) {
  const Svd3 s = rotation_safe_svd(f);
  const Vec3 eps = hencky_strain(s.sigma);
  const double tr = eps.sum();
  const Vec3 dev = eps - Vec3::Constant(tr / 3.0);
  const double alpha = drucker_prager_alpha(friction_angle_deg);
  return (2.0 * mu * dev.norm() + alpha * (2.0 * mu + 3.0 * lambda) * tr) / mu;
}

Mat3 stress_fluid(double volume_ratio, const Mat3& grad_v, double bulk_modulus, double viscosity) {
  if (!(volume_ratio > 0.0)) {
    throw SimulationError("fluid stress: J = " + std::to_string(volume_ratio) + " is not positive");
  }
  const double j = volume_ratio;
  return Mat3::Identity() * (bulk_modulus * (j - 1.0) * j) + viscosity * (grad_v + grad_v.transpose()) * j;
}

double hencky_deviatoric_magnitude(const Mat3& f, double shear_modulus) {
  const Svd3 s = rotation_safe_svd(f);
  const Vec3 eps = hencky_strain(s.sigma);
  const Vec3 dev = eps - Vec3::Constant(eps.sum() / 3.0);
  return 2.0 * shear_modulus * dev.norm();
}

StressResult return_map_bingham(const Mat3& f_trial, const BinghamCoefficients& coeffs, double dt,
                                const PlasticState& prior) {
  const Svd3 s = rotation_safe_svd(f_trial);
  if (!s.sigma.allFinite()) throw SimulationError("Bingham return: non-finite SVD");
  Vec3 eps = hencky_strain(s.sigma);
  const double mean = eps.sum() / 3.0;
  const Vec3 dev = eps - Vec3::Constant(mean);
  const double g = coeffs.shear_modulus;
  const double trial = 2.0 * g * dev.norm();

  StressResult out;
  out.plastic = prior;
  out.f = f_trial;
  if (trial > coeffs.yield_stress && trial > 0.0) {
    if (!(coeffs.plastic_viscosity > 0.0)) {
      throw ParameterError("Bingham return: plastic viscosity must be positive above yield");
    }
    const double delta_gamma = dt * (trial - coeffs.yield_stress) / coeffs.plastic_viscosity;
    const double relaxed = std::max(coeffs.yield_stress, trial - 2.0 * g * delta_gamma);
    if (relaxed < trial) {
      eps = Vec3::Constant(mean) + dev * (relaxed / trial);
      out.f = from_strain(s, eps);
      out.plastic.plastic_strain += (trial - relaxed) / (2.0 * g);
    }
  }
  out.kirchhoff_stress = hencky_stress_from(s.u, eps, g, coeffs.lambda);
  return out;
}

double SolverMaterial::wave_speed() const {
  double modulus = 0.0;
  switch (material_class) {
    case MaterialClass::NewtonianFluid: modulus = bulk_modulus; break;
    case MaterialClass::NonNewtonianFluid: modulus = lambda + 2.0 * shear_modulus; break;
    default: modulus = lambda + 2.0 * mu; break;
  }
  if (!(modulus > 0.0) || !(density > 0.0)) return 0.0;
  return std::sqrt(modulus / density);
}

SolverMaterial make_solver_material(const MaterialParams& params, double length_scale) {
  if (!(length_scale > 0.0)) throw ParameterError("length scale must be positive");
  require_attributes(params);
  validate(params);
  // Pa -> kg / (du s^2) and Pa s -> kg / (du s).
  const double stress_scale = 1.0 / length_scale;
  SolverMaterial m;
  m.material_class = params.material_class;
  m.density = params.get_or(attr::kDensity, 1000.0) / (length_scale * length_scale * length_scale);
  switch (params.material_class) {
    case MaterialClass::Elastic:
    case MaterialClass::Plasticine:
    case MaterialClass::Rigid: {
      double e = *params.get(attr::kYoungsModulus);
      if (params.material_class == MaterialClass::Rigid) e = std::max(e, kRigidMinYoungsModulus);
      const auto lame = lame_from_E_nu(e, *params.get(attr::kPoissonsRatio));
      m.mu = lame.mu * stress_scale;
      m.lambda = lame.lambda * stress_scale;
      if (params.material_class == MaterialClass::Plasticine) {
        m.yield_stress = *params.get(attr::kYieldStress) * stress_scale;
      }
      break;
    }
    case MaterialClass::Sand: {
      const auto lame = lame_from_E_nu(params.get_or(attr::kYoungsModulus, kSandDefaultYoungsModulus),
                                       params.get_or(attr::kPoissonsRatio, kSandDefaultPoissonsRatio));
      m.mu = lame.mu * stress_scale;
      m.lambda = lame.lambda * stress_scale;
      m.friction_angle = *params.get(attr::kFrictionAngle);
      break;
    }
    case MaterialClass::NewtonianFluid:
      m.bulk_modulus = *params.get(attr::kBulkModulus) * stress_scale;
      m.fluid_viscosity = *params.get(attr::kFluidViscosity) * stress_scale;
      break;
    case MaterialClass::NonNewtonianFluid: {
      const double g = *params.get(attr::kShearModulus);
      // Without a bulk modulus, use the bulk response of a nu = 0.3 solid.
      const double k = params.get_or(attr::kBulkModulus,
                                     2.0 * g * (1.0 + kDefaultPoissonsRatio) / (3.0 * (1.0 - 2.0 * kDefaultPoissonsRatio)));
      m.shear_modulus = g * stress_scale;
      m.mu = m.shear_modulus;
      m.lambda = std::max(0.0, k - 2.0 * g / 3.0) * stress_scale;
      m.yield_stress = *params.get(attr::kYieldStress) * stress_scale;
      m.plastic_viscosity = *params.get(attr::kPlasticViscosity) * stress_scale;
      break;
    }
  }
  return m;
}

StressResult material_stress(const Mat3& f_trial, const PlasticState& prior, const SolverMaterial& material,
                             const Mat3& grad_v, double dt) {
  StressResult out;
  out.plastic = prior;
  switch (material.material_class) {
    case MaterialClass::Elastic:
    case MaterialClass::Rigid:
      out.f = keep_invertible(f_trial);
      out.kirchhoff_stress = stress_corotated(out.f, material.mu, material.lambda);
      return out;
    case MaterialClass::Plasticine: {
      const auto ret = return_map_von_mises(keep_invertible(f_trial), material.mu, material.yield_stress);
      out.f = ret.f;
      out.plastic.plastic_strain += ret.delta_gamma;
      out.kirchhoff_stress = stress_corotated(out.f, material.mu, material.lambda);
      return out;
    }
    case MaterialClass::Sand: {
      // one SVD serves both the return and the stress
      check_friction_angle(material.friction_angle);
      const Mat3 f = keep_invertible(f_trial);
      const Svd3 s = rotation_safe_svd(f);
      DruckerPragerCase which;
      const Vec3 eps =
          drucker_prager_project(s, material.mu, material.lambda, drucker_prager_alpha(material.friction_angle), which);
      out.f = which == DruckerPragerCase::Elastic ? f : from_strain(s, eps);
      out.kirchhoff_stress = hencky_stress_from(s.u, eps, material.mu, material.lambda);
      return out;
    }
    case MaterialClass::NewtonianFluid: {
      const double j = f_trial.determinant();
      if (!(j > 0.0)) throw SimulationError("fluid particle volume ratio collapsed: J = " + std::to_string(j));
      out.plastic.volume_ratio = j;
      out.f = Mat3::Identity() * std::cbrt(j);
      out.kirchhoff_stress = stress_fluid(j, grad_v, material.bulk_modulus, material.fluid_viscosity);
      return out;
    }
    case MaterialClass::NonNewtonianFluid: {
      const BinghamCoefficients coeffs{material.shear_modulus, material.lambda, material.yield_stress,
                                       material.plastic_viscosity};
      return return_map_bingham(keep_invertible(f_trial), coeffs, dt, prior);
    }
  }
  throw SchemaError("unknown material class");
}

StressResult material_stress(const MaterialParticle& particle, const MaterialParams& params, const Mat3& grad_v,
                             double dt) {
  const SolverMaterial material = make_solver_material(params, 1.0);
  return material_stress(particle.deformation_gradient, particle.plastic, material, grad_v, dt);
}

}  // namespace gaussmpm
