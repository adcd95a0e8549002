#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

namespace anisdf {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 8-bit RGBA raster, row-major from the top-left.
struct Image8 {
  int width = 0;
  int height = 0;
  std::vector<unsigned char> rgba;

  int pixels() const { return width * height; }
  bool empty() const { return rgba.empty(); }

  // rgb in [0,1], rows are pixels in row-major order; alpha optional.
  static Image8 from_float(const Eigen::MatrixXd& rgb, const Eigen::VectorXd* alpha, int width, int height);

  Eigen::MatrixXd to_float_rgb() const;    // [N,3]
  Eigen::VectorXd to_float_alpha() const;  // [N]
  // RGBA over a constant background: c*a + bg*(1-a).
  Eigen::MatrixXd composite_over(const Eigen::Vector3d& background) const;
};

Image8 read_png(const std::string& path);
void write_png(const std::string& path, const Image8& img);
// Values clamped to [0,1] and written as a grayscale PNG.
void write_png_gray(const std::string& path, const Eigen::VectorXd& values, int width, int height);

// Raw little-endian float32 dump: magic "ANISRAW1", int32 {height, width,
// channels}, then row-major data.
void write_raw32(const std::string& path, const Eigen::MatrixXd& data, int width, int height, int channels);
Eigen::MatrixXd read_raw32(const std::string& path, int* width = nullptr, int* height = nullptr,
                           int* channels = nullptr);

}  // namespace anisdf
