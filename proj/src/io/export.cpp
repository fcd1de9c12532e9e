#include "gsvr/io/export.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>

namespace gsvr::io {

namespace {

double percentile(std::vector<double> v, double q) {
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

int parse_axis(const std::string& name) {
  if (name == "x") return 0;
  if (name == "y") return 1;
  if (name == "z") return 2;
  throw InvalidParameter("axis must be one of x, y, z (got \"" + name + "\")");
}

Montage make_montage(const VolumeGrid& grid, int axis) {
  if (axis < 0 || axis > 2) throw InvalidParameter("export_slices: axis must be x, y or z");
  grid.validate();
  const int dims[3] = {grid.nx, grid.ny, grid.nz};
  const int u_axis = axis == 0 ? 1 : 0;
  const int v_axis = axis == 2 ? 1 : 2;
  const int n = dims[axis];

  Montage m;
  m.tile_width = dims[u_axis];
  m.tile_height = dims[v_axis];
  m.cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
  m.rows = (n + m.cols - 1) / m.cols;
  m.width = m.cols * m.tile_width;
  m.height = m.rows * m.tile_height;
  m.pixels.assign(static_cast<std::size_t>(m.width) * m.height, 0);

  std::vector<double> windowed;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid.in_mask(i)) windowed.push_back(grid.data[i]);
  }
  if (windowed.empty()) {
    for (float v : grid.data) windowed.push_back(v);
  }
  m.window_lo = percentile(windowed, 0.005);
  m.window_hi = percentile(windowed, 0.995);
  const double span = m.window_hi - m.window_lo;

  for (int s = 0; s < n; ++s) {
    const int tile_x = (s % m.cols) * m.tile_width;
    const int tile_y = (s / m.cols) * m.tile_height;
    for (int v = 0; v < m.tile_height; ++v) {
      for (int u = 0; u < m.tile_width; ++u) {
        int idx[3];
        idx[axis] = s;
        idx[u_axis] = u;
        idx[v_axis] = v;
        const double value = grid.data[grid.index(idx[0], idx[1], idx[2])];
        std::uint8_t p = 128;
        if (span > 0.0) {
          p = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp((value - m.window_lo) / span, 0.0, 1.0)));
        }
        m.pixels[static_cast<std::size_t>(tile_y + v) * m.width + tile_x + u] = p;
      }
    }
  }
  return m;
}

void export_slices(const VolumeGrid& grid, int axis, const std::filesystem::path& path) {
  const Montage m = make_montage(grid, axis);
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!file) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(m.width), static_cast<png_uint_32>(m.height), 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < m.height; ++y) {
    png_write_row(png, m.pixels.data() + static_cast<std::size_t>(y) * m.width);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void export_pointcloud(const GaussianField& field, double gamma, const std::filesystem::path& path) {
  const GaussianField shrunk = shrink_for_viz(field, gamma);
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "ply\nformat ascii 1.0\ncomment gsvr gaussian field\n"
      << "element vertex " << field.count() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property float sx\nproperty float sy\nproperty float sz\n"
      << "property float qw\nproperty float qx\nproperty float qy\nproperty float qz\n"
      << "property float intensity\nend_header\n";
  char line[512];
  for (std::size_t j = 0; j < shrunk.count(); ++j) {
    const Vec3 m = shrunk.mean(j);
    const Vec3 s = shrunk.log_scale(j).array().exp();
    const Quat q = shrunk.quaternion(j).normalized();
    std::snprintf(line, sizeof line, "%.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g %.9g\n",
                  m.x(), m.y(), m.z(), s.x(), s.y(), s.z(), q[0], q[1], q[2], q[3],
                  shrunk.intensities[j]);
    out << line;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

GaussianField read_pointcloud(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::size_t n = 0;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) n = std::stoull(line.substr(15));
    if (line == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done || n == 0) throw IoError("PLY: missing header or vertices in " + path.string());
  GaussianField field(n);
  for (std::size_t j = 0; j < n; ++j) {
    double v[11];
    for (double& x : v) {
      if (!(in >> x)) throw IoError("PLY: truncated vertex data in " + path.string());
    }
    field.set_mean(j, Vec3(v[0], v[1], v[2]));
    field.set_log_scale(j, Vec3(std::log(v[3]), std::log(v[4]), std::log(v[5])));
    field.set_quaternion(j, Quat(v[6], v[7], v[8], v[9]));
    field.intensities[j] = v[10];
  }
  return field;
}

}  // namespace gsvr::io
