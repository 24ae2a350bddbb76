#include "cbamnet/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace cbamnet {

namespace io {

namespace {

template <class U>
void write_le(std::ostream& os, U v) {
  unsigned char buf[sizeof(U)];
  for (std::size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), sizeof(U));
}

template <class U>
U read_le(std::istream& is) {
  unsigned char buf[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(buf), sizeof(U))) throw FormatError("unexpected end of data");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u8(std::ostream& os, std::uint8_t v) { write_le(os, v); }
void write_u16(std::ostream& os, std::uint16_t v) { write_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
void write_f64(std::ostream& os, double v) { write_le(os, std::bit_cast<std::uint64_t>(v)); }
std::uint8_t read_u8(std::istream& is) { return read_le<std::uint8_t>(is); }
std::uint16_t read_u16(std::istream& is) { return read_le<std::uint16_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }
double read_f64(std::istream& is) { return std::bit_cast<double>(read_le<std::uint64_t>(is)); }

void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is, std::size_t max_len) {
  const std::uint32_t n = read_u32(is);
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw FormatError("unexpected end of data in string");
  return s;
}

template <class T>
void write_tensor_body(std::ostream& os, const Tensor<T>& t) {
  write_u8(os, static_cast<std::uint8_t>(dtype_of<T>()));
  if (t.rank() > 255) throw FormatError("rank too large for dump format");
  write_u8(os, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) write_u64(os, e);
  for (T v : t.data()) {
    if constexpr (sizeof(T) == 4) {
      write_u32(os, std::bit_cast<std::uint32_t>(v));
    } else {
      write_u64(os, std::bit_cast<std::uint64_t>(v));
    }
  }
}

template <class T>
Tensor<T> read_tensor_body(std::istream& is) {
  const std::uint8_t code = read_u8(is);
  if (code != static_cast<std::uint8_t>(DType::f32) && code != static_cast<std::uint8_t>(DType::f64)) {
    throw FormatError("unknown dtype code " + std::to_string(code));
  }
  const std::uint8_t rank = read_u8(is);
  if (rank == 0) throw FormatError("tensor of rank 0");
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = read_u64(is);
    if (e == 0 || e > (std::size_t{1} << 40)) throw FormatError("invalid extent");
    n *= e;
    if (n > (std::size_t{1} << 34)) throw FormatError("tensor too large");
  }
  std::vector<T> values(n);
  for (auto& v : values) {
    if (code == static_cast<std::uint8_t>(DType::f32)) {
      v = static_cast<T>(std::bit_cast<float>(read_u32(is)));
    } else {
      v = static_cast<T>(std::bit_cast<double>(read_u64(is)));
    }
  }
  return Tensor<T>::from(shape, std::move(values));
}

template void write_tensor_body(std::ostream&, const Tensor<float>&);
template void write_tensor_body(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor_body(std::istream&);
template Tensor<double> read_tensor_body(std::istream&);

}  // namespace io

template <class T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("CBNT", 4);
  io::write_u16(os, kTensorDumpVersion);
  io::write_tensor_body(os, t);
}

template <class T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "CBNT", 4) != 0) throw FormatError("bad tensor magic");
  const auto version = io::read_u16(is);
  if (version != kTensorDumpVersion) {
    throw FormatError("unsupported tensor dump version " + std::to_string(version));
  }
  return io::read_tensor_body<T>(is);
}

template <class T>
void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

template <class T>
Tensor<T> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_tensor<T>(is);
}

template void write_tensor(std::ostream&, const Tensor<float>&);
template void write_tensor(std::ostream&, const Tensor<double>&);
template Tensor<float> read_tensor(std::istream&);
template Tensor<double> read_tensor(std::istream&);
template void save_tensor(const std::filesystem::path&, const Tensor<float>&);
template void save_tensor(const std::filesystem::path&, const Tensor<double>&);
template Tensor<float> load_tensor(const std::filesystem::path&);
template Tensor<double> load_tensor(const std::filesystem::path&);

}  // namespace cbamnet
