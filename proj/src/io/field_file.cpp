#include "gsvr/io/field_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace gsvr::io {

static_assert(std::endian::native == std::endian::little, "field format is little-endian");

namespace {

constexpr char kMagic[4] = {'G', 'S', 'V', 'R'};
constexpr std::size_t kHeaderBytes = 4 + 4 + 8;

void append_floats(std::vector<std::uint8_t>& out, const std::vector<double>& values) {
  for (double v : values) {
    const float f = static_cast<float>(v);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&f);
    out.insert(out.end(), p, p + 4);
  }
}

void read_floats(const std::uint8_t* src, std::vector<double>& out, std::size_t count) {
  out.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, src + 4 * i, 4);
    out[i] = f;
  }
}

}  // namespace

std::vector<std::uint8_t> encode_field(const GaussianField& field) {
  field.validate();
  const std::uint64_t n = field.count();
  std::vector<std::uint8_t> out;
  out.reserve(kHeaderBytes + 44 * n);
  out.insert(out.end(), kMagic, kMagic + 4);
  const auto* v = reinterpret_cast<const std::uint8_t*>(&kFieldFormatVersion);
  out.insert(out.end(), v, v + 4);
  const auto* pn = reinterpret_cast<const std::uint8_t*>(&n);
  out.insert(out.end(), pn, pn + 8);
  append_floats(out, field.means);
  append_floats(out, field.log_scales);
  append_floats(out, field.quaternions);
  append_floats(out, field.intensities);
  return out;
}

GaussianField decode_field(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw UnsupportedFeature("field file: bad magic (expected \"GSVR\")");
  }
  std::uint32_t version;
  std::memcpy(&version, bytes.data() + 4, 4);
  if (version != kFieldFormatVersion) {
    throw UnsupportedFeature("field file: unsupported version " + std::to_string(version));
  }
  std::uint64_t n;
  std::memcpy(&n, bytes.data() + 8, 8);
  if (n == 0 || bytes.size() != kHeaderBytes + 44 * n) {
    throw IoError("field file: array lengths inconsistent with N=" + std::to_string(n));
  }
  GaussianField field;
  const std::uint8_t* p = bytes.data() + kHeaderBytes;
  read_floats(p, field.means, 3 * n);
  read_floats(p + 12 * n, field.log_scales, 3 * n);
  read_floats(p + 24 * n, field.quaternions, 4 * n);
  read_floats(p + 40 * n, field.intensities, n);
  field.validate();
  return field;
}

void write_field(const GaussianField& field, const std::filesystem::path& path) {
  const auto bytes = encode_field(field);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed for " + path.string());
}

GaussianField read_field(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  return decode_field(bytes);
}

}  // namespace gsvr::io
