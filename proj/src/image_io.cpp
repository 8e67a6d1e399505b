#include "msgv/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "msgv/errors.hpp"

namespace msgv {

namespace {

unsigned char to_byte(double v) {
  const double scaled = (v + 1.0) * 127.5;
  return static_cast<unsigned char>(std::clamp(std::lround(scaled), 0L, 255L));
}

void write_bytes(const std::string& path, const std::string& header,
                 const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << header;
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& frame) {
  if (frame.rank() != 3 || frame.shape()[0] != 3) {
    throw std::invalid_argument("write_ppm: expected (3,H,W), got " +
                                shape_str(frame.shape()));
  }
  const std::size_t H = frame.shape()[1], W = frame.shape()[2];
  std::vector<unsigned char> bytes(3 * H * W);
  const auto v = frame.values();
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        bytes[(y * W + x) * 3 + c] = to_byte(v[(c * H + y) * W + x]);
      }
  char header[64];
  std::snprintf(header, sizeof(header), "P6\n%zu %zu\n255\n", W, H);
  write_bytes(path, header, bytes);
}

void write_ppm_grid(const std::string& path, const std::vector<Tensor>& frames,
                    std::size_t rows, std::size_t cols) {
  if (frames.empty() || frames.size() != rows * cols) {
    throw std::invalid_argument("write_ppm_grid: need rows*cols frames");
  }
  const std::size_t H = frames[0].shape()[1], W = frames[0].shape()[2];
  const std::size_t GH = rows * H + (rows - 1), GW = cols * W + (cols - 1);
  std::vector<unsigned char> bytes(3 * GH * GW, 32);  // dark separator
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const Tensor& f = frames[r * cols + c];
      if (f.shape() != frames[0].shape()) {
        throw std::invalid_argument("write_ppm_grid: mismatched frame shapes");
      }
      const auto v = f.values();
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t gy = r * (H + 1) + y, gx = c * (W + 1) + x;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            bytes[(gy * GW + gx) * 3 + ch] = to_byte(v[(ch * H + y) * W + x]);
          }
        }
    }
  char header[64];
  std::snprintf(header, sizeof(header), "P6\n%zu %zu\n255\n", GW, GH);
  write_bytes(path, header, bytes);
}

void write_pgm(const std::string& path, const Tensor& image) {
  if (image.rank() != 2) {
    throw std::invalid_argument("write_pgm: expected (H,W), got " +
                                shape_str(image.shape()));
  }
  const std::size_t H = image.shape()[0], W = image.shape()[1];
  const auto v = image.values();
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  const double scale = (hi > lo) ? 255.0 / (hi - lo) : 0.0;
  std::vector<unsigned char> bytes(H * W);
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<unsigned char>(std::clamp(
        std::lround((v[i] - lo) * scale), 0L, 255L));
  }
  char header[64];
  std::snprintf(header, sizeof(header), "P5\n%zu %zu\n255\n", W, H);
  write_bytes(path, header, bytes);
}

}  // namespace msgv
