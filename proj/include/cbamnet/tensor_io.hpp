#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "cbamnet/tensor.hpp"

namespace cbamnet {

// Binary tensor dump:
//   "CBNT" | u16 version | u8 dtype (1 = f32, 2 = f64) | u8 rank |
//   rank x u64 extents | raw payload
// All integers and payload values are little-endian.

inline constexpr std::uint16_t kTensorDumpVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

void write_u8(std::ostream& os, std::uint8_t v);
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
void write_f64(std::ostream& os, double v);
void write_string(std::ostream& os, const std::string& s);
std::uint8_t read_u8(std::istream& is);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
double read_f64(std::istream& is);
std::string read_string(std::istream& is, std::size_t max_len = 1u << 24);

/// dtype code, rank, extents and payload (no magic/version).
template <class T>
void write_tensor_body(std::ostream& os, const Tensor<T>& t);
/// Reads a body written with any dtype and converts to T.
template <class T>
Tensor<T> read_tensor_body(std::istream& os);

}  // namespace io

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t);
template <class T>
Tensor<T> read_tensor(std::istream& is);

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t);
template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path);

}  // namespace cbamnet
