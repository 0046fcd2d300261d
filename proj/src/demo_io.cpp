#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>

#include <nlohmann/json.hpp>

#include "aeail/envlab.hpp"
#include "aeail/errors.hpp"

namespace aeail {

namespace {

void put_double(std::ostream& os, double v) {
  if (!std::isfinite(v)) throw DataError("cannot serialize a non-finite value");
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  os << buf;
}

void put_vector(std::ostream& os, const Vector& v) {
  os << '[';
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i > 0) os << ',';
    put_double(os, v[i]);
  }
  os << ']';
}

void put_columns(std::ostream& os, const Matrix& m) {
  os << '[';
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    if (c > 0) os << ',';
    put_vector(os, m.col(c));
  }
  os << ']';
}

Vector vector_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw DataError("expected a JSON array of numbers");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  }
  return v;
}

Matrix columns_from_json(const nlohmann::json& j, int rows,
                         const char* what) {
  if (!j.is_array()) throw DataError(std::string(what) + " must be an array");
  Matrix m(rows, static_cast<Eigen::Index>(j.size()));
  for (std::size_t c = 0; c < j.size(); ++c) {
    const Vector v = vector_from_json(j[c]);
    if (v.size() != rows) {
      throw DataError(std::string(what) + " entry has dimension " +
                      std::to_string(v.size()) + ", expected " +
                      std::to_string(rows));
    }
    m.col(static_cast<Eigen::Index>(c)) = v;
  }
  return m;
}

}  // namespace

void write_demos(std::ostream& os, const DemonstrationSet& demos,
                 const EnvSpec& spec) {
  os << "{\"env\":\"" << to_string(demos.env) << "\",\"noise_sigma\":";
  put_double(os, demos.noise_sigma);
  os << ",\"normalizer\":{\"mean\":";
  put_vector(os, demos.normalizer.mean());
  os << ",\"std\":";
  put_vector(os, demos.normalizer.std());
  os << "},\"format_version\":" << kDemoFormatVersion
     << ",\"env_params\":{\"horizon\":" << spec.horizon << ",\"dt\":";
  put_double(os, spec.dt);
  os << "}}\n";
  for (const auto& t : demos.trajectories) {
    os << "{\"states\":";
    put_columns(os, t.states);
    os << ",\"actions\":";
    put_columns(os, t.actions);
    os << ",\"dones\":[";
    for (std::size_t i = 0; i < t.dones.size(); ++i) {
      if (i > 0) os << ',';
      os << (t.dones[i] ? "true" : "false");
    }
    os << "]}\n";
  }
}

DemonstrationSet read_demos(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("demonstration file is empty");
  DemonstrationSet demos;
  try {
    const auto header = nlohmann::json::parse(line);
    const int version = header.at("format_version").get<int>();
    if (version != kDemoFormatVersion) {
      throw DataError("unsupported demonstration format version " +
                      std::to_string(version));
    }
    demos.env = env_name_from_string(header.at("env").get<std::string>());
    demos.noise_sigma = header.at("noise_sigma").get<double>();
    const auto& norm = header.at("normalizer");
    demos.normalizer = FeatureNormalizer(vector_from_json(norm.at("mean")),
                                         vector_from_json(norm.at("std")));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad demonstration header: ") + e.what());
  }

  const EnvSpec spec = make_env_spec(demos.env);
  if (demos.normalizer.dim() != spec.feature_dim()) {
    throw DataError("normalizer dimension does not match environment");
  }
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Trajectory t;
      t.states = columns_from_json(j.at("states"), spec.state_dim, "states");
      t.actions = columns_from_json(j.at("actions"), spec.action_dim, "actions");
      for (const auto& d : j.at("dones")) t.dones.push_back(d.get<bool>());
      if (t.actions.cols() != t.states.cols() ||
          static_cast<Eigen::Index>(t.dones.size()) != t.states.cols()) {
        throw DataError("states, actions and dones differ in length");
      }
      demos.trajectories.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad trajectory on line " + std::to_string(line_no) +
                      ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("bad trajectory on line " + std::to_string(line_no) +
                      ": " + e.what());
    }
  }
  return demos;
}

void save_demos(const std::filesystem::path& path,
                const DemonstrationSet& demos, const EnvSpec& spec) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_demos(os, demos, spec);
}

DemonstrationSet load_demos(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read demonstrations from " + path.string());
  return read_demos(is);
}

}  // namespace aeail
