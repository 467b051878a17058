#pragma once

#include <cstddef>
#include <iosfwd>

// Little-endian block I/O for the versioned container files (one-line JSON
// header followed by raw sample blocks). Works on any host endianness.
namespace physiogait::container {

void write_f64(std::ostream& out, const double* data, std::size_t n);
void read_f64(std::istream& in, double* data, std::size_t n);
void write_f32(std::ostream& out, const float* data, std::size_t n);
void read_f32(std::istream& in, float* data, std::size_t n);

}  // namespace physiogait::container
