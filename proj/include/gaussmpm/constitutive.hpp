#pragma once

#include <vector>

#include "gaussmpm/linalg.hpp"
#include "gaussmpm/material_params.hpp"
#include "gaussmpm/particles.hpp"

namespace gaussmpm {

struct LameParameters {
  double mu = 0.0;
  double lambda = 0.0;
};

// Throws ParameterError for E <= 0 or nu outside [0, 0.5).
LameParameters lame_from_E_nu(double youngs_modulus, double poissons_ratio);

// Fixed-corotated Kirchhoff stress 2 mu (F - R) F^T + lambda (J - 1) J I.
// Throws SimulationError when det F <= 0.
Mat3 stress_corotated(const Mat3& f, double mu, double lambda);

// St. Venant-Kirchhoff on Hencky strain: U (2 mu eps + lambda tr(eps) I) U^T.
Mat3 stress_hencky(const Mat3& f, double mu, double lambda);

struct VonMisesReturn {
  Mat3 f;
  // Deviatoric Hencky strain removed by the projection.
  double delta_gamma = 0.0;
};

VonMisesReturn return_map_von_mises(const Mat3& f_trial, double mu, double yield_stress);

// 2 mu |dev ln sigma| - yield, divided by mu.
double von_mises_yield_value(const Mat3& f, double mu, double yield_stress);

enum class DruckerPragerCase { Elastic, Shear, ConeTip };

struct DruckerPragerReturn {
  Mat3 f;
  DruckerPragerCase which = DruckerPragerCase::Elastic;
};

// Cone slope sqrt(2/3) * 2 sin(phi) / (3 - sin(phi)); phi in degrees.
double drucker_prager_alpha(double friction_angle_deg);

// Cohesionless Drucker-Prager projection in Hencky strain space.
// Throws ParameterError for phi outside (0, 90).
DruckerPragerReturn return_map_drucker_prager(const Mat3& f_trial, double mu, double lambda,
                                              double friction_angle_deg);

// |dev tau| + alpha tr(tau) for the Hencky stress of F, divided by mu.
// Non-positive inside the cone.
double drucker_prager_yield_value(const Mat3& f, double mu, double lambda, double friction_angle_deg);

// Weakly compressible Newtonian fluid:
// bulk (J - 1) J I + viscosity (grad_v + grad_v^T) J. Throws SimulationError for J <= 0.
Mat3 stress_fluid(double volume_ratio, const Mat3& grad_v, double bulk_modulus, double viscosity);

struct StressResult {
  Mat3 kirchhoff_stress = Mat3::Zero();
  Mat3 f = Mat3::Identity();
  PlasticState plastic;
};

struct BinghamCoefficients {
  double shear_modulus = 0.0;
  // Volumetric Lame coefficient for the Hencky part.
  double lambda = 0.0;
  double yield_stress = 0.0;
  double plastic_viscosity = 0.0;
};

// Viscoplastic (Perzyna-type) return: overstress s - yield relaxes by
// 2 G dt (s - yield) / eta per step, never below the yield surface.
StressResult return_map_bingham(const Mat3& f_trial, const BinghamCoefficients& coeffs, double dt,
                                const PlasticState& prior = {});

// Deviatoric Kirchhoff stress magnitude 2 G |dev ln sigma|.
double hencky_deviatoric_magnitude(const Mat3& f, double shear_modulus);

// Solver-side coefficients for one material, in simulation units. Built from
// MaterialParams with a length scale (domain units per metre): moduli and
// viscosities scale by 1/s, density by 1/s^3.
struct SolverMaterial {
  MaterialClass material_class = MaterialClass::Elastic;
  double density = 1000.0;
  double mu = 0.0;
  double lambda = 0.0;
  double yield_stress = 0.0;
  double friction_angle = 30.0;
  double bulk_modulus = 0.0;
  double fluid_viscosity = 0.0;
  double shear_modulus = 0.0;
  double plastic_viscosity = 0.0;

  // Dilatational wave speed sqrt((lambda + 2 mu) / rho) in domain units/s.
  double wave_speed() const;
};

// Fallbacks for coefficients the schema does not provide for a class.
inline constexpr double kRigidMinYoungsModulus = 1e9;
inline constexpr double kSandDefaultYoungsModulus = 3.537e5;
inline constexpr double kSandDefaultPoissonsRatio = 0.3;
inline constexpr double kDefaultPoissonsRatio = 0.3;

// Validates required attributes (SchemaError) and invariants
// (ValidationError), then converts.
SolverMaterial make_solver_material(const MaterialParams& params, double length_scale = 1.0);

using MaterialTable = std::vector<SolverMaterial>;

// Dispatches on the material class: return map applied to the trial
// deformation gradient, stress evaluated at the returned state.
// grad_v is the particle velocity gradient (the APIC C matrix).
StressResult material_stress(const Mat3& f_trial, const PlasticState& prior, const SolverMaterial& material,
                             const Mat3& grad_v, double dt);

// Convenience form on SI parameters (length scale 1). Uses the particle's
// deformation gradient as the trial state.
StressResult material_stress(const MaterialParticle& particle, const MaterialParams& params, const Mat3& grad_v,
                             double dt);

}  // namespace gaussmpm
