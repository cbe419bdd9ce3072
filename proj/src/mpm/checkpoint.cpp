#include "gaussmpm/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "gaussmpm/error.hpp"

namespace gaussmpm {

namespace {

using nlohmann::json;

template <class T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
    return value;
  } else {
    std::array<unsigned char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), &value, sizeof(T));
    std::reverse(bytes.begin(), bytes.end());
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }
}

class Writer {
 public:
  explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  }
  template <class T>
  void put(T value) {
    static_assert(std::is_arithmetic_v<T>);
    value = to_little(value);
    out_.write(reinterpret_cast<const char*>(&value), sizeof(T));
  }
  void bytes(const char* data, std::size_t n) { out_.write(data, static_cast<std::streamsize>(n)); }
  void finish() {
    out_.flush();
    if (!out_) throw IoError("write failed for " + path_.string());
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

class Reader {
 public:
  Reader(std::vector<char> data, std::string name) : data_(std::move(data)), name_(std::move(name)) {}
  template <class T>
  T get() {
    if (pos_ + sizeof(T) > data_.size()) throw ParseError("checkpoint " + name_ + " is truncated");
    T value;
    std::memcpy(&value, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little(value);
  }
  void expect(const char* magic, std::size_t n) {
    if (data_.size() < n || std::memcmp(data_.data(), magic, n) != 0) {
      throw ParseError(name_ + " is not a checkpoint (bad magic)");
    }
    pos_ = n;
  }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  std::vector<char> data_;
  std::string name_;
  std::size_t pos_ = 0;
};

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const json& j, const char* key) {
  if (!j.is_array() || j.size() != 3) throw ConfigError(std::string(key) + " must be a 3-element array");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

std::string bc_name(BoundaryCondition c) {
  switch (c) {
    case BoundaryCondition::Sticky:
      return "sticky";
    case BoundaryCondition::Slip:
      return "slip";
    case BoundaryCondition::Open:
      return "open";
  }
  return "sticky";
}

BoundaryCondition bc_from(const std::string& s) {
  if (s == "sticky") return BoundaryCondition::Sticky;
  if (s == "slip") return BoundaryCondition::Slip;
  if (s == "open") return BoundaryCondition::Open;
  throw ConfigError("unknown boundary condition '" + s + "'");
}

MaterialClass class_from(const std::string& s) {
  const auto c = parse_material_class(s);
  if (!c) throw ConfigError("unknown material class '" + s + "'");
  return *c;
}

}  // namespace

json to_json(const SimConfig& c) {
  json j;
  j["dt"] = c.dt ? json(*c.dt) : json(nullptr);
  j["dt_max"] = c.dt_max;
  j["cfl"] = c.cfl;
  j["gravity"] = vec_json(c.gravity);
  j["external_force"] = vec_json(c.external_force);
  j["length_scale"] = c.length_scale;
  j["steps"] = c.steps;
  j["substeps"] = c.substeps;
  j["grid_resolution"] = c.grid_resolution;
  j["transfer"] = c.transfer == TransferScheme::Apic ? "apic" : "pic_flip";
  j["flip_ratio"] = c.flip_ratio;
  json faces = json::array();
  for (auto f : c.boundary.faces) faces.push_back(bc_name(f));
  json boundary{{"faces", faces}, {"thickness", c.boundary.thickness}};
  boundary["ground"] = c.boundary.ground
                           ? json{{"height", c.boundary.ground->height}, {"friction", c.boundary.ground->friction}}
                           : json(nullptr);
  j["boundary"] = boundary;
  j["mode"] = c.mode == ExecutionMode::Deterministic ? "deterministic" : "fast";
  j["threads"] = c.threads;
  return j;
}

SimConfig sim_config_from_json(const json& j) {
  SimConfig c;
  if (!j.is_object()) throw ConfigError("simulation config must be a JSON object");
  try {
    if (j.contains("dt") && !j["dt"].is_null()) {
      if (j["dt"].is_string()) {
        if (j["dt"].get<std::string>() != "auto") throw ConfigError("dt must be a number or \"auto\"");
      } else {
        c.dt = j["dt"].get<double>();
      }
    }
    if (j.contains("dt_max")) c.dt_max = j["dt_max"].get<double>();
    if (j.contains("cfl")) c.cfl = j["cfl"].get<double>();
    if (j.contains("gravity")) c.gravity = vec_from(j["gravity"], "gravity");
    if (j.contains("external_force")) c.external_force = vec_from(j["external_force"], "external_force");
    if (j.contains("length_scale")) c.length_scale = j["length_scale"].get<double>();
    if (j.contains("steps")) c.steps = j["steps"].get<int>();
    if (j.contains("substeps")) c.substeps = j["substeps"].get<int>();
    if (j.contains("grid_resolution")) c.grid_resolution = j["grid_resolution"].get<int>();
    if (j.contains("transfer")) {
      const auto t = j["transfer"].get<std::string>();
      if (t == "apic") {
        c.transfer = TransferScheme::Apic;
      } else if (t == "pic_flip") {
        c.transfer = TransferScheme::PicFlip;
      } else {
        throw ConfigError("unknown transfer scheme '" + t + "'");
      }
    }
    if (j.contains("flip_ratio")) c.flip_ratio = j["flip_ratio"].get<double>();
    if (j.contains("boundary")) {
      const json& b = j["boundary"];
      if (b.contains("faces")) {
        const json& f = b["faces"];
        if (f.is_string()) {
          c.boundary.faces.fill(bc_from(f.get<std::string>()));
        } else {
          if (!f.is_array() || f.size() != 6) throw ConfigError("boundary.faces must list 6 conditions");
          for (std::size_t i = 0; i < 6; ++i) c.boundary.faces[i] = bc_from(f[i].get<std::string>());
        }
      }
      if (b.contains("thickness")) c.boundary.thickness = b["thickness"].get<int>();
      if (b.contains("ground") && !b["ground"].is_null()) {
        GroundPlane g;
        g.height = b["ground"].value("height", 0.0);
        g.friction = b["ground"].value("friction", 0.5);
        c.boundary.ground = g;
      }
    }
    if (j.contains("mode")) {
      const auto m = j["mode"].get<std::string>();
      if (m == "deterministic") {
        c.mode = ExecutionMode::Deterministic;
      } else if (m == "fast") {
        c.mode = ExecutionMode::Fast;
      } else {
        throw ConfigError("unknown execution mode '" + m + "'");
      }
    }
    if (j.contains("threads")) c.threads = j["threads"].get<int>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("simulation config: ") + e.what());
  }
  return c;
}

json to_json(const SolverMaterial& m) {
  return json{{"class", std::string(to_string(m.material_class))},
              {"density", m.density},
              {"mu", m.mu},
              {"lambda", m.lambda},
              {"yield_stress", m.yield_stress},
              {"friction_angle", m.friction_angle},
              {"bulk_modulus", m.bulk_modulus},
              {"fluid_viscosity", m.fluid_viscosity},
              {"shear_modulus", m.shear_modulus},
              {"plastic_viscosity", m.plastic_viscosity}};
}

SolverMaterial solver_material_from_json(const json& j) {
  SolverMaterial m;
  try {
    m.material_class = class_from(j.at("class").get<std::string>());
    m.density = j.value("density", m.density);
    m.mu = j.value("mu", 0.0);
    m.lambda = j.value("lambda", 0.0);
    m.yield_stress = j.value("yield_stress", 0.0);
    m.friction_angle = j.value("friction_angle", m.friction_angle);
    m.bulk_modulus = j.value("bulk_modulus", 0.0);
    m.fluid_viscosity = j.value("fluid_viscosity", 0.0);
    m.shear_modulus = j.value("shear_modulus", 0.0);
    m.plastic_viscosity = j.value("plastic_viscosity", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("material entry: ") + e.what());
  }
  return m;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  auto p = checkpoint;
  p += ".json";
  return p;
}

void save_checkpoint(const std::filesystem::path& path, const SimState& state, const SimConfig& config) {
  Checkpoint c;
  c.particles = state.particles;
  c.step_count = state.step_count;
  c.time = state.time;
  c.grid_resolution = state.grid.resolution();
  c.config = config;
  c.materials = state.materials;
  save_checkpoint(path, c);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  Writer w(path);
  w.bytes("GMPM", 4);
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint64_t>(c.particles.size());
  w.put<std::uint64_t>(c.step_count);
  w.put<double>(c.time);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.grid_resolution));
  const auto& ps = c.particles;
  auto vecs = [&](auto member) {
    for (const auto& p : ps) {
      const Vec3& v = p.*member;
      for (int a = 0; a < 3; ++a) w.put<double>(v[a]);
    }
  };
  auto mats = [&](auto member) {
    for (const auto& p : ps) {
      const Mat3& m = p.*member;
      for (int r = 0; r < 3; ++r) {
        for (int col = 0; col < 3; ++col) w.put<double>(m(r, col));
      }
    }
  };
  vecs(&MaterialParticle::position);
  vecs(&MaterialParticle::velocity);
  mats(&MaterialParticle::deformation_gradient);
  mats(&MaterialParticle::affine_velocity);
  mats(&MaterialParticle::kirchhoff_stress);
  for (const auto& p : ps) w.put<double>(p.mass);
  for (const auto& p : ps) w.put<double>(p.volume);
  for (const auto& p : ps) w.put<std::uint32_t>(p.material_id);
  for (const auto& p : ps) w.put<double>(p.plastic.volume_ratio);
  for (const auto& p : ps) w.put<double>(p.plastic.plastic_strain);
  for (const auto& p : ps) w.put<std::int64_t>(p.kernel_ref);
  for (const auto& p : ps) w.put<std::uint8_t>(p.internal_fill ? 1 : 0);
  w.finish();

  json side{{"format", "gmpm-checkpoint"}, {"version", kCheckpointVersion}};
  side["sim_config"] = c.config ? to_json(*c.config) : json(nullptr);
  json mats_json = json::array();
  for (const auto& m : c.materials) mats_json.push_back(to_json(m));
  side["materials"] = mats_json;
  std::ofstream out(sidecar_path(path), std::ios::trunc);
  if (!out) throw IoError("cannot write " + sidecar_path(path).string());
  out << side.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  Reader r(read_all(path), path.string());
  r.expect("GMPM", 4);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw ParseError("checkpoint " + path.string() + " has unsupported version " + std::to_string(version));
  }
  Checkpoint c;
  const auto count = r.get<std::uint64_t>();
  c.step_count = r.get<std::uint64_t>();
  c.time = r.get<double>();
  c.grid_resolution = static_cast<int>(r.get<std::uint32_t>());
  // 3+3+27 doubles, mass, volume, J, plastic, kernel ref, id, flag
  constexpr std::size_t kBytesPerParticle = 33 * 8 + 4 * 8 + 8 + 4 + 1;
  if (count > r.remaining() / kBytesPerParticle) {
    throw ParseError("checkpoint " + path.string() + " is truncated");
  }
  c.particles.resize(count);
  auto& ps = c.particles;
  auto vecs = [&](auto member) {
    for (auto& p : ps) {
      Vec3& v = p.*member;
      for (int a = 0; a < 3; ++a) v[a] = r.get<double>();
    }
  };
  auto mats = [&](auto member) {
    for (auto& p : ps) {
      Mat3& m = p.*member;
      for (int row = 0; row < 3; ++row) {
        for (int col = 0; col < 3; ++col) m(row, col) = r.get<double>();
      }
    }
  };
  vecs(&MaterialParticle::position);
  vecs(&MaterialParticle::velocity);
  mats(&MaterialParticle::deformation_gradient);
  mats(&MaterialParticle::affine_velocity);
  mats(&MaterialParticle::kirchhoff_stress);
  for (auto& p : ps) p.mass = r.get<double>();
  for (auto& p : ps) p.volume = r.get<double>();
  for (auto& p : ps) p.material_id = r.get<std::uint32_t>();
  for (auto& p : ps) p.plastic.volume_ratio = r.get<double>();
  for (auto& p : ps) p.plastic.plastic_strain = r.get<double>();
  for (auto& p : ps) p.kernel_ref = r.get<std::int64_t>();
  for (auto& p : ps) p.internal_fill = r.get<std::uint8_t>() != 0;

  const auto side = sidecar_path(path);
  if (std::filesystem::exists(side)) {
    std::ifstream in(side);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw ParseError("checkpoint sidecar " + side.string() + ": " + e.what());
    }
    if (j.contains("sim_config") && !j["sim_config"].is_null()) c.config = sim_config_from_json(j["sim_config"]);
    if (j.contains("materials")) {
      for (const auto& m : j["materials"]) c.materials.push_back(solver_material_from_json(m));
    }
  }
  return c;
}

void write_particle_ply(const std::filesystem::path& path, const ParticleSet& particles) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  Writer w(path);
  const std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " +
                             std::to_string(particles.size()) +
                             "\nproperty float x\nproperty float y\nproperty float z\n"
                             "property float vx\nproperty float vy\nproperty float vz\n"
                             "property float J\nend_header\n";
  w.bytes(header.data(), header.size());
  for (const auto& p : particles) {
    for (int a = 0; a < 3; ++a) w.put<float>(static_cast<float>(p.position[a]));
    for (int a = 0; a < 3; ++a) w.put<float>(static_cast<float>(p.velocity[a]));
    w.put<float>(static_cast<float>(p.deformation_gradient.determinant()));
  }
  w.finish();
}

}  // namespace gaussmpm
