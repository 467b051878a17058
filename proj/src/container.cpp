#include "physiogait/container.hpp"

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>

#include "physiogait/core.hpp"

namespace physiogait::container {

void write_f64(std::ostream& out, const double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, &data[i], 8);
    char le[8];
    for (int b = 0; b < 8; ++b) le[b] = static_cast<char>(bits >> (8 * b));
    out.write(le, 8);
  }
}

void read_f64(std::istream& in, double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    char le[8];
    in.read(le, 8);
    if (!in) fail(ErrorCode::MalformedHeader, "container truncated");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(le[b]))
              << (8 * b);
    std::memcpy(&data[i], &bits, 8);
  }
}

void write_f32(std::ostream& out, const float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, &data[i], 4);
    char le[4];
    for (int b = 0; b < 4; ++b) le[b] = static_cast<char>(bits >> (8 * b));
    out.write(le, 4);
  }
}

void read_f32(std::istream& in, float* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    char le[4];
    in.read(le, 4);
    if (!in) fail(ErrorCode::MalformedHeader, "container truncated");
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b)
      bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(le[b]))
              << (8 * b);
    std::memcpy(&data[i], &bits, 4);
  }
}

}  // namespace physiogait::container
