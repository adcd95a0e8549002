#include "anisdf/image.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace anisdf {

namespace {

unsigned char to_byte(double v) {
  const double c = std::clamp(v, 0.0, 1.0);
  return static_cast<unsigned char>(std::lround(c * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};

}  // namespace

Image8 Image8::from_float(const Eigen::MatrixXd& rgb, const Eigen::VectorXd* alpha, int width, int height) {
  if (rgb.rows() != static_cast<Eigen::Index>(width) * height || rgb.cols() != 3)
    throw IoError("Image8::from_float: rgb must be (w*h) x 3");
  Image8 img;
  img.width = width;
  img.height = height;
  img.rgba.resize(static_cast<std::size_t>(width) * height * 4);
  for (int i = 0; i < width * height; ++i) {
    img.rgba[4 * i + 0] = to_byte(rgb(i, 0));
    img.rgba[4 * i + 1] = to_byte(rgb(i, 1));
    img.rgba[4 * i + 2] = to_byte(rgb(i, 2));
    img.rgba[4 * i + 3] = alpha ? to_byte((*alpha)(i)) : 255;
  }
  return img;
}

Eigen::MatrixXd Image8::to_float_rgb() const {
  Eigen::MatrixXd out(pixels(), 3);
  for (int i = 0; i < pixels(); ++i)
    for (int c = 0; c < 3; ++c) out(i, c) = rgba[4 * i + c] / 255.0;
  return out;
}

Eigen::VectorXd Image8::to_float_alpha() const {
  Eigen::VectorXd out(pixels());
  for (int i = 0; i < pixels(); ++i) out(i) = rgba[4 * i + 3] / 255.0;
  return out;
}

Eigen::MatrixXd Image8::composite_over(const Eigen::Vector3d& background) const {
  Eigen::MatrixXd out(pixels(), 3);
  for (int i = 0; i < pixels(); ++i) {
    const double a = rgba[4 * i + 3] / 255.0;
    for (int c = 0; c < 3; ++c) out(i, c) = rgba[4 * i + c] / 255.0 * a + background[c] * (1.0 - a);
  }
  return out;
}

Image8 read_png(const std::string& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("read_png: cannot open " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError("read_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("read_png: failed reading " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);

  png_set_expand(png);
  png_set_strip_16(png);
  png_set_gray_to_rgb(png);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_RGBA) png_set_add_alpha(png, 0xFF, PNG_FILLER_AFTER);
  png_read_update_info(png, info);

  Image8 img;
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.rgba.resize(static_cast<std::size_t>(img.width) * img.height * 4);
  std::vector<png_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.rgba.data() + static_cast<std::size_t>(y) * img.width * 4;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

void write_png(const std::string& path, const Image8& img) {
  if (img.empty()) throw IoError("write_png: empty image");
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("write_png: cannot open " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError("write_png: libpng init failed");
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("write_png: failed writing " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_RGBA, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_const_bytep> rows(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = img.rgba.data() + static_cast<std::size_t>(y) * img.width * 4;
  for (int y = 0; y < img.height; ++y) png_write_row(png, const_cast<png_bytep>(rows[y]));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

void write_png_gray(const std::string& path, const Eigen::VectorXd& values, int width, int height) {
  Eigen::MatrixXd rgb(values.size(), 3);
  for (Eigen::Index i = 0; i < values.size(); ++i) rgb.row(i).setConstant(std::clamp(values[i], 0.0, 1.0));
  write_png(path, Image8::from_float(rgb, nullptr, width, height));
}

void write_raw32(const std::string& path, const Eigen::MatrixXd& data, int width, int height, int channels) {
  if (data.rows() != static_cast<Eigen::Index>(width) * height || data.cols() != channels)
    throw IoError("write_raw32: shape mismatch");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_raw32: cannot open " + path);
  out.write("ANISRAW1", 8);
  const std::int32_t dims[3] = {height, width, channels};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  std::vector<float> buf(static_cast<std::size_t>(data.rows()) * channels);
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    for (int c = 0; c < channels; ++c) buf[i * channels + c] = static_cast<float>(data(i, c));
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!out) throw IoError("write_raw32: short write to " + path);
}

Eigen::MatrixXd read_raw32(const std::string& path, int* width, int* height, int* channels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_raw32: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (std::memcmp(magic, "ANISRAW1", 8) != 0) throw IoError("read_raw32: bad magic in " + path);
  std::int32_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  const int h = dims[0], w = dims[1], c = dims[2];
  if (h < 1 || w < 1 || c < 1 || c > 16) throw IoError("read_raw32: bad header in " + path);
  std::vector<float> buf(static_cast<std::size_t>(h) * w * c);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!in) throw IoError("read_raw32: truncated file " + path);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(h) * w, c);
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (int k = 0; k < c; ++k) out(i, k) = buf[i * c + k];
  if (width) *width = w;
  if (height) *height = h;
  if (channels) *channels = c;
  return out;
}

}  // namespace anisdf
