#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gaussmpm/error.hpp"
#include "gaussmpm/inference_loop.hpp"

namespace gaussmpm {

namespace {

using json = nlohmann::json;

// Bounds the brace scan so hostile input stays linear-ish.
constexpr int kMaxCandidates = 64;

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

// Contents of the first ``` fence, or the input unchanged.
std::string strip_fences(std::string_view text) {
  const std::size_t open = text.find("```");
  if (open == std::string_view::npos) return std::string(text);
  std::size_t body = text.find('\n', open + 3);
  if (body == std::string_view::npos) return std::string(text);
  ++body;
  const std::size_t close = text.find("```", body);
  return std::string(text.substr(body, close == std::string_view::npos ? text.size() - body : close - body));
}

// End of the balanced {...} or [...] starting at `start`, honouring strings.
std::size_t balanced_end(const std::string& s, std::size_t start) {
  std::vector<char> stack;
  bool in_string = false, escaped = false;
  for (std::size_t i = start; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{' || c == '[') {
      stack.push_back(c == '{' ? '}' : ']');
    } else if (c == '}' || c == ']') {
      if (stack.empty() || stack.back() != c) return std::string::npos;
      stack.pop_back();
      if (stack.empty()) return i;
    }
  }
  return std::string::npos;
}

std::optional<json> try_parse(const std::string& s) {
  json j = json::parse(s, nullptr, false);
  if (j.is_discarded() || !(j.is_object() || j.is_array())) return std::nullopt;
  return j;
}

json extract_json(std::string_view text) {
  const std::string body = trim(strip_fences(text));
  if (auto j = try_parse(body)) return *j;
  int tried = 0;
  for (std::size_t i = 0; i < body.size() && tried < kMaxCandidates; ++i) {
    if (body[i] != '{' && body[i] != '[') continue;
    ++tried;
    const std::size_t end = balanced_end(body, i);
    if (end == std::string::npos) continue;
    if (auto j = try_parse(body.substr(i, end - i + 1))) return *j;
  }
  throw ParseError("no JSON object found in model response");
}

// "Young's Modulus (Pa)" -> "Youngs Modulus"
std::string clean_key(std::string_view key) {
  std::string out;
  for (std::size_t i = 0; i < key.size(); ++i) {
    const char c = key[i];
    if (c == '(' || c == '[') break;
    if (c == '\'') continue;
    if (key.substr(i).starts_with("\xE2\x80\x99")) {  // right single quote
      i += 2;
      continue;
    }
    out.push_back(c);
  }
  return trim(out);
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

// Splits "<name>_confidence" / "<name> confidence" into the attribute part.
std::optional<std::string> confidence_base(const std::string& key) {
  const std::string l = lower(key);
  for (std::string_view suffix : {"_confidence", " confidence", "-confidence", "confidence"}) {
    if (l.size() > suffix.size() && l.ends_with(suffix)) return trim(key.substr(0, key.size() - suffix.size()));
  }
  return std::nullopt;
}

std::optional<double> as_number(const json& v) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = trim(v.get_ref<const std::string&>());
    double out = 0.0;
    const char* first = s.data();
    if (!s.empty() && s[0] == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
    if (ec == std::errc() && ptr != first) return out;
  }
  return std::nullopt;
}

bool is_movable_false(const json& obj) {
  auto it = obj.find("movable");
  return it != obj.end() && it->is_boolean() && !it->get<bool>();
}

// Picks the object record out of an array or {"objects": [...]} wrapper.
// Returns null when no movable entry exists.
const json* select_object(const json& j) {
  const json* list = nullptr;
  if (j.is_array()) {
    list = &j;
  } else if (j.is_object()) {
    for (const char* key : {"objects", "classes", "movable_objects"}) {
      auto it = j.find(key);
      if (it != j.end() && it->is_array() && !j.contains("material")) {
        list = &*it;
        break;
      }
    }
    if (!list) return is_movable_false(j) ? nullptr : &j;
  }
  if (!list) return nullptr;
  for (const json& item : *list) {
    if (item.is_object() && !is_movable_false(item) && item.contains("material")) return &item;
  }
  for (const json& item : *list) {
    if (item.is_object() && !is_movable_false(item)) return &item;
  }
  return nullptr;
}

std::string format(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

double clamp_confidence(double c, const std::string& name, std::vector<std::string>& warnings) {
  if (c < 0.0 || c > 1.0) {
    const double clamped = std::clamp(c, 0.0, 1.0);
    warnings.push_back("confidence for '" + name + "' = " + format(c) + " clamped to " + format(clamped));
    return clamped;
  }
  return c;
}

PropertyReport report_from_object(const json& obj) {
  PropertyReport r;
  if (auto it = obj.find("class_name"); it != obj.end() && it->is_string()) {
    r.class_name = it->get<std::string>();
  } else if (auto c = obj.find("class"); c != obj.end() && c->is_string()) {
    r.class_name = c->get<std::string>();
  }
  const json* material = nullptr;
  for (const char* key : {"material", "material_type", "materialType"}) {
    if (auto it = obj.find(key); it != obj.end()) {
      material = &*it;
      break;
    }
  }
  if (!material) throw SchemaError("report is missing required attribute 'material'");
  std::optional<double> material_conf;
  if (material->is_object()) {
    if (auto c = material->find("confidence"); c != material->end()) material_conf = as_number(*c);
    auto v = material->find("value");
    if (v == material->end() || !v->is_string()) throw SchemaError("report attribute 'material' is not a string");
    material = &*v;
  }
  if (!material->is_string()) throw SchemaError("report attribute 'material' is not a string");
  const auto cls = parse_material_class(material->get<std::string>());
  if (!cls) throw SchemaError("report has unknown material '" + material->get<std::string>() + "'");
  r.material_class = *cls;

  std::map<std::string, double, std::less<>> values, confs;
  for (const auto& [key, value] : obj.items()) {
    const std::string cleaned = clean_key(key);
    if (auto base = confidence_base(cleaned)) {
      const std::string b = lower(*base);
      std::string name;
      if (b == "material" || b == "material_type" || b == "materialtype") {
        name = std::string(attr::kMaterial);
      } else if (auto canon = canonical_attribute(*base)) {
        name = *canon;
      } else {
        continue;
      }
      auto c = as_number(value);
      if (!c || !std::isfinite(*c)) throw SchemaError("confidence '" + key + "' is not a number");
      confs.insert_or_assign(name, *c);
      continue;
    }
    auto canon = canonical_attribute(cleaned);
    if (!canon) continue;
    if (value.is_object()) {
      auto v = value.find("value");
      auto c = value.find("confidence");
      if (v == value.end()) throw SchemaError("attribute '" + key + "' has no value");
      auto num = as_number(*v);
      if (!num || !std::isfinite(*num)) throw SchemaError("attribute '" + key + "' is not a number");
      values.insert_or_assign(*canon, *num);
      if (c != value.end()) {
        auto cn = as_number(*c);
        if (!cn || !std::isfinite(*cn)) throw SchemaError("confidence for '" + key + "' is not a number");
        confs.insert_or_assign(*canon, *cn);
      }
      continue;
    }
    if (value.is_null()) continue;
    auto num = as_number(value);
    if (!num || !std::isfinite(*num)) throw SchemaError("attribute '" + key + "' is not a number");
    values.insert_or_assign(*canon, *num);
  }
  if (material_conf) confs.try_emplace(std::string(attr::kMaterial), *material_conf);

  std::vector<std::string> missing;
  for (std::string_view name : required_attributes(r.material_class)) {
    if (!values.contains(name)) missing.emplace_back(name);
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw SchemaError("report for material '" + std::string(to_string(r.material_class)) +
                      "' is missing required attribute(s): " + list);
  }

  auto conf_for = [&](const std::string& name) {
    auto it = confs.find(name);
    if (it == confs.end()) {
      r.warnings.push_back("no confidence for '" + name + "'; treated as 0");
      return 0.0;
    }
    return clamp_confidence(it->second, name, r.warnings);
  };
  r.material_confidence = conf_for(std::string(attr::kMaterial));
  const auto required = required_attributes(r.material_class);
  for (const auto& [name, v] : values) {
    const bool keep = std::find(required.begin(), required.end(), name) != required.end() || is_dynamic_attribute(name);
    if (!keep) {
      r.warnings.push_back("attribute '" + name + "' does not apply to " + std::string(to_string(r.material_class)) +
                           "; ignored");
      continue;
    }
    r.attributes.emplace(name, AttributeEstimate{v, conf_for(name)});
  }
  return r;
}

}  // namespace

std::map<std::string, AttributeEstimate, std::less<>> PropertyReport::static_params() const {
  std::map<std::string, AttributeEstimate, std::less<>> out;
  for (const auto& [k, v] : attributes) {
    if (!is_dynamic_attribute(k)) out.emplace(k, v);
  }
  return out;
}

std::map<std::string, AttributeEstimate, std::less<>> PropertyReport::dynamic_params() const {
  std::map<std::string, AttributeEstimate, std::less<>> out;
  for (const auto& [k, v] : attributes) {
    if (is_dynamic_attribute(k)) out.emplace(k, v);
  }
  return out;
}

std::map<std::string, double, std::less<>> PropertyReport::confidences() const {
  std::map<std::string, double, std::less<>> out;
  if (empty) return out;
  out.emplace(std::string(attr::kMaterial), material_confidence);
  for (const auto& [k, v] : attributes) out.emplace(k, v.confidence);
  return out;
}

MaterialParams PropertyReport::to_params() const {
  MaterialParams p;
  p.class_name = class_name;
  p.material_class = material_class;
  p.confidence.emplace(std::string(attr::kMaterial), material_confidence);
  for (const auto& [k, v] : attributes) p.set(k, v.value, v.confidence);
  return p;
}

PropertyReport parse_property_report(std::string_view text) {
  const json j = extract_json(text);
  PropertyReport r;
  const json* obj = select_object(j);
  if (!obj) {
    r.empty = true;
  } else {
    r = report_from_object(*obj);
  }
  r.raw_response = std::string(text);
  return r;
}

std::set<std::string> low_confidence_mask(const PropertyReport& report, double gamma) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in (0, 1], got " + format(gamma));
  std::set<std::string> out;
  for (const auto& [name, c] : report.confidences()) {
    if (c < gamma) out.insert(name);
  }
  return out;
}

MaterialAssignment to_material_params(const PropertyReport& report, const DomainTransform& transform) {
  if (report.empty) throw PreconditionError("report names no movable object");
  if (!(transform.scale > 0.0)) throw ParameterError("domain transform scale must be positive");
  MaterialAssignment out;
  out.params = report.to_params();
  require_attributes(out.params);
  out.warnings = validate(out.params);
  out.initial_speed_mps = kmh_to_mps(out.params.get_or(attr::kInitialVelocity, 0.0));
  out.initial_speed_domain = out.initial_speed_mps * transform.scale;
  out.external_force_n = out.params.get_or(attr::kExternalForce, 0.0);
  return out;
}

nlohmann::ordered_json to_json(const PropertyReport& report) {
  nlohmann::ordered_json j;
  j["empty"] = report.empty;
  if (!report.empty) {
    j["params"] = to_json(report.to_params());
  }
  j["warnings"] = report.warnings;
  j["raw_response"] = report.raw_response;
  return j;
}

PropertyReport property_report_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("report: expected a JSON object");
  PropertyReport r;
  r.empty = j.value("empty", false);
  if (auto it = j.find("raw_response"); it != j.end() && it->is_string()) r.raw_response = it->get<std::string>();
  if (auto it = j.find("warnings"); it != j.end() && it->is_array()) {
    for (const auto& w : *it) {
      if (w.is_string()) r.warnings.push_back(w.get<std::string>());
    }
  }
  if (r.empty) return r;
  const json& body = j.contains("params") ? j.at("params") : j;
  const MaterialParams p = material_params_from_json(body);
  r.class_name = p.class_name;
  r.material_class = p.material_class;
  if (auto it = p.confidence.find(attr::kMaterial); it != p.confidence.end()) r.material_confidence = it->second;
  for (const auto& [k, v] : p.values) {
    auto c = p.confidence.find(k);
    r.attributes.emplace(k, AttributeEstimate{v, c == p.confidence.end() ? 0.0 : c->second});
  }
  return r;
}

PropertyReport load_report_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open report file " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError("report file " + path.string() + " is not valid JSON");
  if (j.is_object() && j.contains("report")) return property_report_from_json(j.at("report"));
  return property_report_from_json(j);
}

}  // namespace gaussmpm
