#include "pemr/matrix_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "pemr/error.hpp"

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace pemr {

namespace binio {

namespace {
template <typename T>
void put_raw(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get_raw(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in || in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw FormatError("unexpected end of file");
  }
  return v;
}
}  // namespace

void put_u32(std::ostream& out, std::uint32_t v) { put_raw(out, v); }
void put_u64(std::ostream& out, std::uint64_t v) { put_raw(out, v); }
void put_f64(std::ostream& out, double v) { put_raw(out, v); }
void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::uint32_t get_u32(std::istream& in) { return get_raw<std::uint32_t>(in); }
std::uint64_t get_u64(std::istream& in) { return get_raw<std::uint64_t>(in); }
double get_f64(std::istream& in) { return get_raw<double>(in); }
std::string get_string(std::istream& in, std::size_t max_len) {
  const auto n = get_u64(in);
  if (n > max_len) throw FormatError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw FormatError("unexpected end of file in string");
  return s;
}

}  // namespace binio

void write_matrix(std::ostream& out, const Tensor& t) {
  out.write(kMatrixMagic, sizeof(kMatrixMagic));
  binio::put_u32(out, kMatrixVersion);
  binio::put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) binio::put_u64(out, d);
  out.write(reinterpret_cast<const char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor read_matrix(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMatrixMagic, sizeof(magic)) != 0) {
    throw FormatError("not a matrix file (bad magic)");
  }
  const auto version = binio::get_u32(in);
  if (version != kMatrixVersion) {
    throw FormatError("unsupported matrix format version " + std::to_string(version));
  }
  const auto rank = binio::get_u32(in);
  if (rank > 8) throw FormatError("implausible matrix rank " + std::to_string(rank));
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& d : shape) {
    d = binio::get_u64(in);
    if (d != 0 && n > (std::size_t{1} << 40) / d) throw FormatError("implausible matrix size");
    n *= d;
  }
  std::vector<double> values(n);
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw FormatError("truncated matrix data");
  return Tensor(std::move(shape), std::move(values));
}

void save_matrix(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_matrix(out, t);
  if (!out) throw IoError("write failed: " + path.string());
}

Tensor load_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_matrix(in);
}

}  // namespace pemr
