#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gaussmpm/error.hpp"
#include "gaussmpm/gaussian_asset.hpp"

namespace gaussmpm {

namespace {

constexpr const char* kTransformComment = "gaussmpm_domain_transform";

enum class ScalarType { Int8, UInt8, Int16, UInt16, Int32, UInt32, Float32, Float64 };

struct Property {
  std::string name;
  ScalarType type = ScalarType::Float32;
  bool is_list = false;
};

struct Element {
  std::string name;
  std::size_t count = 0;
  std::vector<Property> properties;
};

struct Header {
  bool ascii = false;
  std::vector<Element> elements;
  std::vector<std::string> comments;
  std::size_t data_offset = 0;
};

std::size_t type_size(ScalarType t) {
  switch (t) {
    case ScalarType::Int8:
    case ScalarType::UInt8:
      return 1;
    case ScalarType::Int16:
    case ScalarType::UInt16:
      return 2;
    case ScalarType::Int32:
    case ScalarType::UInt32:
    case ScalarType::Float32:
      return 4;
    case ScalarType::Float64:
      return 8;
  }
  return 4;
}

ScalarType parse_type(const std::string& s) {
  static const std::map<std::string, ScalarType> kTypes = {
      {"char", ScalarType::Int8},      {"int8", ScalarType::Int8},       {"uchar", ScalarType::UInt8},
      {"uint8", ScalarType::UInt8},    {"short", ScalarType::Int16},     {"int16", ScalarType::Int16},
      {"ushort", ScalarType::UInt16},  {"uint16", ScalarType::UInt16},   {"int", ScalarType::Int32},
      {"int32", ScalarType::Int32},    {"uint", ScalarType::UInt32},     {"uint32", ScalarType::UInt32},
      {"float", ScalarType::Float32},  {"float32", ScalarType::Float32}, {"double", ScalarType::Float64},
      {"float64", ScalarType::Float64}};
  const auto it = kTypes.find(s);
  if (it == kTypes.end()) throw ParseError("PLY: unknown property type '" + s + "'");
  return it->second;
}

Header parse_header(const std::vector<char>& data, const std::string& name) {
  Header h;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    if (pos >= data.size()) throw ParseError("PLY " + name + ": header is not terminated by end_header");
    const auto* begin = data.data() + pos;
    const auto* nl = static_cast<const char*>(std::memchr(begin, '\n', data.size() - pos));
    if (!nl) throw ParseError("PLY " + name + ": header is not terminated by end_header");
    std::string line(begin, nl);
    pos = static_cast<std::size_t>(nl - data.data()) + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  if (next_line() != "ply") throw ParseError("PLY " + name + ": missing 'ply' magic");
  bool have_format = false;
  while (true) {
    const std::string line = next_line();
    std::istringstream in(line);
    std::string word;
    in >> word;
    if (word == "end_header") break;
    if (word.empty()) continue;
    if (word == "format") {
      std::string fmt;
      in >> fmt;
      if (fmt == "ascii") {
        h.ascii = true;
      } else if (fmt == "binary_little_endian") {
        h.ascii = false;
      } else {
        throw ParseError("PLY " + name + ": unsupported format '" + fmt + "'");
      }
      have_format = true;
    } else if (word == "comment" || word == "obj_info") {
      h.comments.push_back(line.size() > word.size() ? line.substr(word.size() + 1) : std::string());
    } else if (word == "element") {
      Element e;
      long long count = -1;
      in >> e.name >> count;
      if (!in || count < 0) throw ParseError("PLY " + name + ": malformed element line '" + line + "'");
      e.count = static_cast<std::size_t>(count);
      h.elements.push_back(std::move(e));
    } else if (word == "property") {
      if (h.elements.empty()) throw ParseError("PLY " + name + ": property before any element");
      Property p;
      std::string type;
      in >> type;
      if (type == "list") {
        std::string count_type, item_type;
        in >> count_type >> item_type;
        p.is_list = true;
        p.type = parse_type(item_type);
      } else {
        p.type = parse_type(type);
      }
      in >> p.name;
      if (p.name.empty()) throw ParseError("PLY " + name + ": property without a name");
      h.elements.back().properties.push_back(std::move(p));
    } else {
      throw ParseError("PLY " + name + ": unexpected header line '" + line + "'");
    }
  }
  if (!have_format) throw ParseError("PLY " + name + ": missing format line");
  h.data_offset = pos;
  return h;
}

double read_binary(const char* src, ScalarType t) {
  switch (t) {
    case ScalarType::Int8: {
      std::int8_t v;
      std::memcpy(&v, src, 1);
      return v;
    }
    case ScalarType::UInt8: {
      std::uint8_t v;
      std::memcpy(&v, src, 1);
      return v;
    }
    case ScalarType::Int16: {
      std::int16_t v;
      std::memcpy(&v, src, 2);
      return v;
    }
    case ScalarType::UInt16: {
      std::uint16_t v;
      std::memcpy(&v, src, 2);
      return v;
    }
    case ScalarType::Int32: {
      std::int32_t v;
      std::memcpy(&v, src, 4);
      return v;
    }
    case ScalarType::UInt32: {
      std::uint32_t v;
      std::memcpy(&v, src, 4);
      return v;
    }
    case ScalarType::Float32: {
      float v;
      std::memcpy(&v, src, 4);
      return v;
    }
    case ScalarType::Float64: {
      double v;
      std::memcpy(&v, src, 8);
      return v;
    }
  }
  return 0.0;
}

double parse_ascii(std::string_view token, ScalarType t) {
  const char* b = token.data();
  const char* e = token.data() + token.size();
  if (t == ScalarType::Float32) {
    float v = 0.0f;
    const auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) return std::numeric_limits<double>::quiet_NaN();
    return v;
  }
  double v = 0.0;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) return std::numeric_limits<double>::quiet_NaN();
  return v;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Float whose image under `forward` is exactly `target`, searched around
// the rounded inverse. Guarantees stable save/load cycles for fields that
// are stored through a nonlinear map.
template <class Forward>
float encode_through(double target, double guess, Forward forward) {
  constexpr float kMax = std::numeric_limits<float>::max();
  float f = std::isnan(guess) ? 0.0f : static_cast<float>(std::clamp(guess, -double(kMax), double(kMax)));
  if (forward(f) == target) return f;
  float lo = f;
  float hi = f;
  for (int i = 0; i < 16; ++i) {
    lo = std::nextafter(lo, -kMax);
    if (forward(lo) == target) return lo;
    hi = std::nextafter(hi, kMax);
    if (forward(hi) == target) return hi;
  }
  return f;
}

float encode_opacity_logit(double alpha) {
  return encode_through(alpha, std::log(alpha / (1.0 - alpha)), [](float f) { return sigmoid(f); });
}

float encode_log_scale(double s) {
  return encode_through(s, std::log(s), [](float f) { return std::exp(static_cast<double>(f)); });
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

void parse_transform_comment(const std::string& comment, DomainTransform& t) {
  std::istringstream in(comment);
  std::string tag;
  in >> tag;
  if (tag != kTransformComment) return;
  std::string parts[4];
  in >> parts[0] >> parts[1] >> parts[2] >> parts[3];
  double v[4];
  for (int i = 0; i < 4; ++i) {
    char* end = nullptr;
    v[i] = std::strtod(parts[i].c_str(), &end);
    if (parts[i].empty() || *end != '\0') throw ParseError("PLY: malformed domain transform comment");
  }
  t.scale = v[0];
  t.translation = Vec3(v[1], v[2], v[3]);
}

}  // namespace

Mat3 GaussianKernel::rotation_matrix() const {
  const double n = rotation.norm();
  if (!(n > 0.0) || !std::isfinite(n)) return Mat3::Identity();
  const Eigen::Quaterniond q(rotation[0] / n, rotation[1] / n, rotation[2] / n, rotation[3] / n);
  return q.toRotationMatrix();
}

Mat3 GaussianKernel::covariance() const {
  const Mat3 r = rotation_matrix();
  const Vec3 var = scale.cwiseProduct(scale).cwiseMax(kMinCovarianceEigenvalue);
  return symmetrized(r * var.asDiagonal() * r.transpose());
}

GaussianCloud load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<char> data((std::istreambuf_iterator<char>(in)), {});
  const std::string name = path.string();
  const Header h = parse_header(data, name);

  const Element* vertex = nullptr;
  std::size_t skip_bytes = 0;
  std::size_t skip_lines = 0;
  for (const auto& e : h.elements) {
    if (e.name == "vertex") {
      vertex = &e;
      break;
    }
    std::size_t row = 0;
    for (const auto& p : e.properties) {
      if (p.is_list && !h.ascii) throw ParseError("PLY " + name + ": list element '" + e.name + "' precedes vertices");
      row += type_size(p.type);
    }
    skip_bytes += row * e.count;
    skip_lines += e.count;
  }
  if (!vertex) throw ParseError("PLY " + name + ": missing element 'vertex'");

  std::map<std::string, std::size_t> column;
  for (std::size_t i = 0; i < vertex->properties.size(); ++i) {
    if (vertex->properties[i].is_list) throw ParseError("PLY " + name + ": list property in vertex element");
    column[vertex->properties[i].name] = i;
  }
  auto require = [&](const std::string& prop) {
    const auto it = column.find(prop);
    if (it == column.end()) throw ParseError("PLY " + name + ": missing property '" + prop + "'");
    return it->second;
  };

  GaussianCloud cloud;
  std::size_t opacity_col = 0;
  if (column.count("opacity")) {
    opacity_col = column["opacity"];
    cloud.opacity_encoding = OpacityEncoding::Logit;
  } else if (column.count("alpha")) {
    opacity_col = column["alpha"];
    cloud.opacity_encoding = OpacityEncoding::Linear;
  } else {
    throw ParseError("PLY " + name + ": missing property 'opacity'");
  }
  const std::size_t pos_col[3] = {require("x"), require("y"), require("z")};
  const std::size_t scale_col[3] = {require("scale_0"), require("scale_1"), require("scale_2")};
  const std::size_t rot_col[4] = {require("rot_0"), require("rot_1"), require("rot_2"), require("rot_3")};
  const std::size_t dc_col[3] = {require("f_dc_0"), require("f_dc_1"), require("f_dc_2")};
  std::size_t rest_count = 0;
  while (column.count("f_rest_" + std::to_string(rest_count))) ++rest_count;
  int degree = -1;
  for (int d = 0; d <= 3; ++d) {
    if (rest_count == static_cast<std::size_t>(3 * (sh_coefficient_count(d) - 1))) degree = d;
  }
  if (degree < 0) {
    throw ParseError("PLY " + name + ": " + std::to_string(rest_count) + " f_rest properties match no SH degree <= 3");
  }
  cloud.sh_degree = degree;
  const std::size_t per_channel = rest_count / 3;

  for (const auto& c : h.comments) parse_transform_comment(c, cloud.domain_transform);

  // Row values as doubles (exact for every supported scalar type).
  const std::size_t ncol = vertex->properties.size();
  std::vector<double> row(ncol);
  std::size_t offset = h.data_offset + skip_bytes;
  std::size_t row_bytes = 0;
  for (const auto& p : vertex->properties) row_bytes += type_size(p.type);

  std::istringstream ascii;
  if (h.ascii) {
    ascii.str(std::string(data.begin() + static_cast<std::ptrdiff_t>(h.data_offset), data.end()));
    std::string skipped;
    for (std::size_t i = 0; i < skip_lines; ++i) std::getline(ascii, skipped);
  } else if (offset + row_bytes * vertex->count > data.size()) {
    throw ParseError("PLY " + name + ": vertex data is truncated");
  }

  cloud.kernels.resize(vertex->count);
  std::string token;
  for (std::size_t v = 0; v < vertex->count; ++v) {
    if (h.ascii) {
      for (std::size_t c = 0; c < ncol; ++c) {
        if (!(ascii >> token)) throw ParseError("PLY " + name + ": vertex data is truncated at vertex " + std::to_string(v));
        row[c] = parse_ascii(token, vertex->properties[c].type);
      }
    } else {
      for (std::size_t c = 0; c < ncol; ++c) {
        row[c] = read_binary(data.data() + offset, vertex->properties[c].type);
        offset += type_size(vertex->properties[c].type);
      }
    }
    for (std::size_t c = 0; c < ncol; ++c) {
      if (!std::isfinite(row[c])) {
        throw DataError("PLY " + name + ": non-finite '" + vertex->properties[c].name + "' at vertex " +
                        std::to_string(v));
      }
    }
    GaussianKernel& k = cloud.kernels[v];
    for (int a = 0; a < 3; ++a) {
      k.position[a] = row[pos_col[a]];
      k.scale[a] = std::exp(row[scale_col[a]]);
    }
    for (int a = 0; a < 4; ++a) k.rotation[a] = row[rot_col[a]];
    const double raw_opacity = row[opacity_col];
    if (cloud.opacity_encoding == OpacityEncoding::Logit) {
      k.opacity = sigmoid(raw_opacity);
    } else {
      if (raw_opacity < 0.0 || raw_opacity > 1.0) {
        throw DataError("PLY " + name + ": alpha " + std::to_string(raw_opacity) + " outside [0,1] at vertex " +
                        std::to_string(v));
      }
      k.opacity = raw_opacity;
    }
    k.sh.assign(static_cast<std::size_t>(sh_coefficient_count(degree)), Vec3::Zero());
    k.sh[0] = Vec3(row[dc_col[0]], row[dc_col[1]], row[dc_col[2]]);
    for (std::size_t i = 0; i < per_channel; ++i) {
      for (std::size_t ch = 0; ch < 3; ++ch) {
        k.sh[i + 1][static_cast<int>(ch)] = row[column["f_rest_" + std::to_string(ch * per_channel + i)]];
      }
    }
  }
  return cloud;
}

void save_ply(const GaussianCloud& cloud, const std::filesystem::path& path, PlyFormat format) {
  if (cloud.sh_degree < 0 || cloud.sh_degree > 3) throw ShapeError("SH degree must lie in [0, 3]");
  const auto coeffs = static_cast<std::size_t>(sh_coefficient_count(cloud.sh_degree));
  for (std::size_t i = 0; i < cloud.kernels.size(); ++i) {
    if (cloud.kernels[i].sh.size() != coeffs) {
      throw ShapeError("kernel " + std::to_string(i) + " has " + std::to_string(cloud.kernels[i].sh.size()) +
                       " SH coefficients, degree " + std::to_string(cloud.sh_degree) + " needs " +
                       std::to_string(coeffs));
    }
  }
  const std::size_t per_channel = coeffs - 1;
  const bool logit = cloud.opacity_encoding == OpacityEncoding::Logit;

  std::ostringstream header;
  header << "ply\nformat " << (format == PlyFormat::Ascii ? "ascii" : "binary_little_endian") << " 1.0\n";
  const auto& t = cloud.domain_transform;
  header << "comment " << kTransformComment << ' ' << hex_double(t.scale) << ' ' << hex_double(t.translation.x())
         << ' ' << hex_double(t.translation.y()) << ' ' << hex_double(t.translation.z()) << '\n';
  header << "element vertex " << cloud.kernels.size() << '\n';
  std::vector<std::string> names = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"};
  for (std::size_t i = 0; i < 3 * per_channel; ++i) names.push_back("f_rest_" + std::to_string(i));
  names.push_back(logit ? "opacity" : "alpha");
  for (const char* n : {"scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"}) names.push_back(n);
  for (const auto& n : names) header << "property float " << n << '\n';
  header << "end_header\n";

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::string hs = header.str();
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

  std::vector<float> row(names.size());
  char buf[32];
  for (const auto& k : cloud.kernels) {
    std::size_t c = 0;
    for (int a = 0; a < 3; ++a) row[c++] = static_cast<float>(k.position[a]);
    for (int a = 0; a < 3; ++a) row[c++] = static_cast<float>(k.sh[0][a]);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      for (std::size_t i = 0; i < per_channel; ++i) row[c++] = static_cast<float>(k.sh[i + 1][static_cast<int>(ch)]);
    }
    row[c++] = logit ? encode_opacity_logit(k.opacity) : static_cast<float>(k.opacity);
    for (int a = 0; a < 3; ++a) row[c++] = encode_log_scale(k.scale[a]);
    for (int a = 0; a < 4; ++a) row[c++] = static_cast<float>(k.rotation[a]);
    if (format == PlyFormat::Ascii) {
      for (std::size_t i = 0; i < row.size(); ++i) {
        const auto r = std::to_chars(buf, buf + sizeof buf, row[i]);
        if (i) out.put(' ');
        out.write(buf, r.ptr - buf);
      }
      out.put('\n');
    } else {
      static_assert(std::endian::native == std::endian::little, "binary PLY writer assumes a little-endian host");
      out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
  }
  out.flush();
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace gaussmpm
