#pragma once

// Binary network checkpoints, little-endian:
//   magic "AEAILCKP" (8 bytes)
//   u32 format version
//   u32 number of layer sizes, then that many u32 layer sizes
//   f64 parameters, layer by layer: weights (row-major) then biases
// Activation tags are not stored; readers supply them for the role the
// network plays.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "aeail/diffnet.hpp"

namespace aeail {

inline constexpr char kCheckpointMagic[8] = {'A', 'E', 'A', 'I',
                                             'L', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_net(std::ostream& os, const MlpNet& net);
MlpNet read_net(std::istream& is, Activation hidden = Activation::kTanh,
                Activation output = Activation::kIdentity);

void save_net(const std::filesystem::path& path, const MlpNet& net);
MlpNet load_net(const std::filesystem::path& path,
                Activation hidden = Activation::kTanh,
                Activation output = Activation::kIdentity);

// Little-endian primitives shared by the other checkpoint writers.
void write_u8(std::ostream& os, std::uint8_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_f64(std::ostream& os, double v);
void write_f64_vector(std::ostream& os, const Vector& v);
std::uint8_t read_u8(std::istream& is);
std::uint32_t read_u32(std::istream& is);
double read_f64(std::istream& is);
Vector read_f64_vector(std::istream& is);

std::string read_file_bytes(const std::filesystem::path& path);

}  // namespace aeail
