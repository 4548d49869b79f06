#pragma once

#include <filesystem>
#include <iosfwd>

#include "pemr/tensor.hpp"

namespace pemr {

// Matrix file layout (all integers little-endian):
//   bytes 0..7   magic "PEMRMAT\0"
//   u32          format version (1)
//   u32          rank
//   u64 x rank   dims
//   f64 x prod   row-major values
inline constexpr char kMatrixMagic[8] = {'P', 'E', 'M', 'R', 'M', 'A', 'T', '\0'};
inline constexpr std::uint32_t kMatrixVersion = 1;

void write_matrix(std::ostream& out, const Tensor& t);
Tensor read_matrix(std::istream& in);

void save_matrix(const std::filesystem::path& path, const Tensor& t);
Tensor load_matrix(const std::filesystem::path& path);

namespace binio {
void put_u32(std::ostream& out, std::uint32_t v);
void put_u64(std::ostream& out, std::uint64_t v);
void put_f64(std::ostream& out, double v);
void put_string(std::ostream& out, const std::string& s);
std::uint32_t get_u32(std::istream& in);
std::uint64_t get_u64(std::istream& in);
double get_f64(std::istream& in);
std::string get_string(std::istream& in, std::size_t max_len = 1 << 20);
}  // namespace binio

}  // namespace pemr
