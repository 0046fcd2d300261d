#include "aeail/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "aeail/errors.hpp"

namespace aeail {

namespace {

template <typename T>
void write_le(std::ostream& os, T value) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (!is) throw DataError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { write_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, v); }
std::uint8_t read_u8(std::istream& is) { return read_le<std::uint8_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
double read_f64(std::istream& is) { return read_le<double>(is); }

void write_f64_vector(std::ostream& os, const Vector& v) {
  write_u32(os, static_cast<std::uint32_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) write_f64(os, v[i]);
}

Vector read_f64_vector(std::istream& is) {
  const std::uint32_t n = read_u32(is);
  if (n > (1u << 28)) throw DataError("implausible vector length in checkpoint");
  Vector v(n);
  for (std::uint32_t i = 0; i < n; ++i) v[i] = read_f64(is);
  return v;
}

void write_net(std::ostream& os, const MlpNet& net) {
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(net.layer_sizes().size()));
  for (int n : net.layer_sizes()) write_u32(os, static_cast<std::uint32_t>(n));
  const Vector flat = net.flat_parameters();
  for (Eigen::Index i = 0; i < flat.size(); ++i) write_f64(os, flat[i]);
}

MlpNet read_net(std::istream& is, Activation hidden, Activation output) {
  char magic[sizeof(kCheckpointMagic)];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("not a network checkpoint (bad magic)");
  }
  const std::uint32_t version = read_u32(is);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " +
                    std::to_string(version));
  }
  const std::uint32_t count = read_u32(is);
  if (count < 2 || count > 64) {
    throw DataError("implausible layer count " + std::to_string(count));
  }
  std::vector<int> sizes;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t n = read_u32(is);
    if (n == 0 || n > (1u << 20)) throw DataError("implausible layer size");
    sizes.push_back(static_cast<int>(n));
  }
  MlpNet net(sizes, 0, hidden, output);
  Vector flat(net.parameter_count());
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = read_f64(is);
  net.set_flat_parameters(flat);
  return net;
}

void save_net(const std::filesystem::path& path, const MlpNet& net) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_net(os, net);
}

MlpNet load_net(const std::filesystem::path& path, Activation hidden,
                Activation output) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  return read_net(is, hidden, output);
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace aeail
