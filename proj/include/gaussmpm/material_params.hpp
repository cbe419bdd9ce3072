#pragma once

#include <array>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace gaussmpm {

enum class MaterialClass { Elastic, Plasticine, Rigid, Sand, NewtonianFluid, NonNewtonianFluid };

inline constexpr std::array<MaterialClass, 6> kAllMaterialClasses = {
    MaterialClass::Elastic, MaterialClass::Plasticine,     MaterialClass::Rigid,
    MaterialClass::Sand,    MaterialClass::NewtonianFluid, MaterialClass::NonNewtonianFluid};

// Lower-case schema spelling: "elastic", "newtonian fluid", ...
std::string_view to_string(MaterialClass c);

// Case-insensitive; spaces, hyphens and underscores are interchangeable.
// "non-newtonian fluid", "NonNewtonianFluid" and "non_newtonian_fluid" all parse.
std::optional<MaterialClass> parse_material_class(std::string_view text);

// Canonical attribute names (camelCase, as in the reasoning schema).
namespace attr {
inline constexpr std::string_view kMaterial = "material";
inline constexpr std::string_view kMass = "mass";
inline constexpr std::string_view kDensity = "density";
inline constexpr std::string_view kYoungsModulus = "youngsModulus";
inline constexpr std::string_view kPoissonsRatio = "poissonsRatio";
inline constexpr std::string_view kYieldStress = "yieldStress";
inline constexpr std::string_view kFrictionAngle = "frictionAngle";
inline constexpr std::string_view kFluidViscosity = "fluidViscosity";
inline constexpr std::string_view kBulkModulus = "bulkModulus";
inline constexpr std::string_view kShearModulus = "shearModulus";
inline constexpr std::string_view kPlasticViscosity = "plasticViscosity";
inline constexpr std::string_view kExternalForce = "externalForce";
inline constexpr std::string_view kInitialVelocity = "initialVelocity";
}  // namespace attr

// Every numeric attribute, in schema order.
std::span<const std::string_view> numeric_attributes();

// Static attributes the schema lists for a class (mass and density first).
std::span<const std::string_view> required_attributes(MaterialClass c);

bool is_dynamic_attribute(std::string_view name);

// JSON key for an attribute value. Matches the reasoning template verbatim,
// which spells the two dynamic ones with a space ("external force").
std::string json_value_key(std::string_view name);
// "<camelName>_confidence".
std::string json_confidence_key(std::string_view name);

// Maps any accepted spelling of a value key to its canonical name:
// "external force", "externalForce", "external_force" -> "externalForce".
std::optional<std::string> canonical_attribute(std::string_view key);

// Property record for one object. Values are in schema units: SI, except
// friction angle in degrees and initial velocity in km/h.
struct MaterialParams {
  std::string class_name;
  MaterialClass material_class = MaterialClass::Elastic;
  std::map<std::string, double, std::less<>> values;
  // Keyed like `values`, plus "material".
  std::map<std::string, double, std::less<>> confidence;

  std::optional<double> get(std::string_view name) const;
  double get_or(std::string_view name, double fallback) const;
  void set(std::string_view name, double value, std::optional<double> conf = std::nullopt);

  friend bool operator==(const MaterialParams&, const MaterialParams&) = default;
};

// Throws SchemaError when an attribute required by the class is absent.
void require_attributes(const MaterialParams& params);

// Checks the numeric invariants (density > 0, 0 <= nu < 0.5, ...), throwing
// ValidationError that names the attribute and value. Returns warnings for
// suspicious but legal values.
std::vector<std::string> validate(const MaterialParams& params);

nlohmann::ordered_json to_json(const MaterialParams& params);
MaterialParams material_params_from_json(const nlohmann::json& j);

}  // namespace gaussmpm
