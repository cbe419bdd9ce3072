#include "gaussmpm/material_params.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>

#include "gaussmpm/error.hpp"

namespace gaussmpm {

namespace {

using namespace std::string_view_literals;

constexpr std::array<std::string_view, 12> kNumeric = {
    attr::kMass,           attr::kDensity,         attr::kYoungsModulus,   attr::kPoissonsRatio,
    attr::kYieldStress,    attr::kFrictionAngle,   attr::kFluidViscosity,  attr::kBulkModulus,
    attr::kShearModulus,   attr::kPlasticViscosity, attr::kExternalForce,  attr::kInitialVelocity};

constexpr std::array<std::string_view, 4> kElastic = {attr::kMass, attr::kDensity, attr::kYoungsModulus,
                                                      attr::kPoissonsRatio};
constexpr std::array<std::string_view, 5> kPlasticine = {attr::kMass, attr::kDensity, attr::kYoungsModulus,
                                                         attr::kPoissonsRatio, attr::kYieldStress};
constexpr std::array<std::string_view, 3> kSand = {attr::kMass, attr::kDensity, attr::kFrictionAngle};
constexpr std::array<std::string_view, 4> kNewtonian = {attr::kMass, attr::kDensity, attr::kFluidViscosity,
                                                        attr::kBulkModulus};
constexpr std::array<std::string_view, 5> kNonNewtonian = {attr::kMass, attr::kDensity, attr::kShearModulus,
                                                           attr::kYieldStress, attr::kPlasticViscosity};

// Lower-cases and strips separators so spellings compare equal.
std::string squash(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (c == ' ' || c == '-' || c == '_') continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::string format_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string_view to_string(MaterialClass c) {
  switch (c) {
    case MaterialClass::Elastic: return "elastic";
    case MaterialClass::Plasticine: return "plasticine";
    case MaterialClass::Rigid: return "rigid";
    case MaterialClass::Sand: return "sand";
    case MaterialClass::NewtonianFluid: return "newtonian fluid";
    case MaterialClass::NonNewtonianFluid: return "non-newtonian fluid";
  }
  return "unknown";
}

std::optional<MaterialClass> parse_material_class(std::string_view text) {
  const std::string key = squash(text);
  for (MaterialClass c : kAllMaterialClasses) {
    if (squash(to_string(c)) == key) return c;
  }
  return std::nullopt;
}

std::span<const std::string_view> numeric_attributes() { return kNumeric; }

std::span<const std::string_view> required_attributes(MaterialClass c) {
  switch (c) {
    case MaterialClass::Elastic: return kElastic;
    case MaterialClass::Plasticine: return kPlasticine;
    // Rigid lists the same attributes as plasticine.
    case MaterialClass::Rigid: return kPlasticine;
    case MaterialClass::Sand: return kSand;
    case MaterialClass::NewtonianFluid: return kNewtonian;
    case MaterialClass::NonNewtonianFluid: return kNonNewtonian;
  }
  return {};
}

bool is_dynamic_attribute(std::string_view name) {
  return name == attr::kExternalForce || name == attr::kInitialVelocity;
}

std::string json_value_key(std::string_view name) {
  if (name == attr::kExternalForce) return "external force";
  if (name == attr::kInitialVelocity) return "initial velocity";
  return std::string(name);
}

std::string json_confidence_key(std::string_view name) { return std::string(name) + "_confidence"; }

std::optional<std::string> canonical_attribute(std::string_view key) {
  const std::string k = squash(key);
  for (std::string_view name : kNumeric) {
    if (squash(name) == k) return std::string(name);
  }
  return std::nullopt;
}

std::optional<double> MaterialParams::get(std::string_view name) const {
  auto it = values.find(name);
  if (it == values.end()) return std::nullopt;
  return it->second;
}

double MaterialParams::get_or(std::string_view name, double fallback) const {
  return get(name).value_or(fallback);
}

void MaterialParams::set(std::string_view name, double value, std::optional<double> conf) {
  values.insert_or_assign(std::string(name), value);
  if (conf) confidence.insert_or_assign(std::string(name), *conf);
}

void require_attributes(const MaterialParams& params) {
  for (std::string_view name : required_attributes(params.material_class)) {
    if (!params.get(name)) {
      throw SchemaError("material class '" + std::string(to_string(params.material_class)) +
                        "' requires attribute '" + std::string(name) + "'");
    }
  }
}

std::vector<std::string> validate(const MaterialParams& params) {
  std::vector<std::string> warnings;
  auto fail = [](std::string_view name, double v, std::string_view rule) {
    throw ValidationError("attribute '" + std::string(name) + "' = " + format_value(v) + " violates " +
                          std::string(rule));
  };
  for (const auto& [name, v] : params.values) {
    if (!std::isfinite(v)) fail(name, v, "finiteness");
  }
  if (auto d = params.get(attr::kDensity); d && !(*d > 0.0)) fail(attr::kDensity, *d, "density > 0");
  if (auto m = params.get(attr::kMass); m && *m < 0.0) fail(attr::kMass, *m, "mass >= 0");
  if (auto e = params.get(attr::kYoungsModulus); e && !(*e > 0.0)) fail(attr::kYoungsModulus, *e, "E > 0");
  if (auto nu = params.get(attr::kPoissonsRatio); nu && !(*nu >= 0.0 && *nu < 0.5)) {
    fail(attr::kPoissonsRatio, *nu, "0 <= nu < 0.5");
  }
  if (auto y = params.get(attr::kYieldStress); y && *y < 0.0) fail(attr::kYieldStress, *y, "yield stress >= 0");
  if (auto phi = params.get(attr::kFrictionAngle); phi && !(*phi > 0.0 && *phi < 90.0)) {
    fail(attr::kFrictionAngle, *phi, "0 < friction angle < 90");
  }
  for (std::string_view name : {attr::kFluidViscosity, attr::kBulkModulus, attr::kShearModulus}) {
    if (auto v = params.get(name); v && *v < 0.0) fail(name, *v, "non-negativity");
  }
  if (auto v = params.get(attr::kPlasticViscosity); v && !(*v > 0.0)) {
    fail(attr::kPlasticViscosity, *v, "plastic viscosity > 0");
  }
  if (auto v = params.get(attr::kInitialVelocity); v && *v < 0.0) fail(attr::kInitialVelocity, *v, "speed >= 0");
  for (const auto& [name, c] : params.confidence) {
    if (!(c >= 0.0 && c <= 1.0)) fail(json_confidence_key(name), c, "0 <= confidence <= 1");
  }
  if (params.material_class == MaterialClass::Rigid || params.material_class == MaterialClass::Plasticine) {
    if (auto y = params.get(attr::kYieldStress); y && *y < 1e3) {
      warnings.push_back("yieldStress " + format_value(*y) + " Pa is implausibly small for " +
                         std::string(to_string(params.material_class)));
    }
  }
  return warnings;
}

nlohmann::ordered_json to_json(const MaterialParams& params) {
  nlohmann::ordered_json j;
  j["class_name"] = params.class_name;
  j["material"] = std::string(to_string(params.material_class));
  if (auto it = params.confidence.find(attr::kMaterial); it != params.confidence.end()) {
    j["material_confidence"] = it->second;
  }
  for (std::string_view name : kNumeric) {
    auto v = params.get(name);
    if (!v) continue;
    j[json_value_key(name)] = *v;
    if (auto it = params.confidence.find(name); it != params.confidence.end()) {
      j[json_confidence_key(name)] = it->second;
    }
  }
  return j;
}

MaterialParams material_params_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("material params: expected a JSON object");
  MaterialParams p;
  if (auto it = j.find("class_name"); it != j.end() && it->is_string()) p.class_name = it->get<std::string>();
  auto mat = j.find("material");
  if (mat == j.end() || !mat->is_string()) throw SchemaError("material params: missing 'material'");
  auto cls = parse_material_class(mat->get<std::string>());
  if (!cls) throw SchemaError("material params: unknown material '" + mat->get<std::string>() + "'");
  p.material_class = *cls;
  for (const auto& [key, value] : j.items()) {
    if (key == "class_name" || key == "material") continue;
    constexpr std::string_view suffix = "_confidence";
    const bool is_conf = key.size() > suffix.size() && key.ends_with(suffix);
    const std::string base = is_conf ? key.substr(0, key.size() - suffix.size()) : key;
    std::string name;
    if (base == attr::kMaterial) {
      if (!is_conf) continue;
      name = std::string(attr::kMaterial);
    } else if (auto canon = canonical_attribute(base)) {
      name = *canon;
    } else {
      continue;
    }
    if (!value.is_number()) throw SchemaError("material params: '" + key + "' is not a number");
    if (is_conf) {
      p.confidence.insert_or_assign(name, value.get<double>());
    } else {
      p.values.insert_or_assign(name, value.get<double>());
    }
  }
  return p;
}

}  // namespace gaussmpm
