#pragma once

// Little-endian primitives shared by the checkpoint and training-state files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

#include "scws/tensor.hpp"

namespace scws::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw FormatError("unexpected end of file");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) throw FormatError("implausible string length " + std::to_string(n));
  std::string s(n, '\0');
  if (!is.read(s.data(), n)) throw FormatError("unexpected end of file in string");
  return s;
}

inline void put_tensor(std::ostream& os, const Tensor& t) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

inline Tensor get_tensor(std::istream& is) {
  const auto rank = get<std::uint32_t>(is);
  if (rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) d = get<std::uint64_t>(is);
  if (shape_numel(shape) > (std::size_t{1} << 32)) throw FormatError("implausible tensor size " + to_string(shape));
  Tensor t(shape);
  if (!is.read(reinterpret_cast<char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)))) {
    throw FormatError("unexpected end of file in tensor data");
  }
  return t;
}

}  // namespace scws::binio
