#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfield {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}

inline double linear_to_srgb(double c) {
  c = std::clamp(c, 0.0, 1.0);
  return c <= 0.0031308 ? 12.92 * c : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Interleaved float image, row-major, top row first.
struct Image {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<double> data;

  double& at(std::size_t x, std::size_t y, std::size_t c) { return data[(y * width + x) * channels + c]; }
  double at(std::size_t x, std::size_t y, std::size_t c) const { return data[(y * width + x) * channels + c]; }
};

namespace detail {

struct PngFile {
  FILE* f = nullptr;
  explicit PngFile(const std::filesystem::path& p, const char* mode) : f(std::fopen(p.c_str(), mode)) {}
  ~PngFile() {
    if (f) std::fclose(f);
  }
};

inline void check_finite(const std::vector<double>& v, const std::filesystem::path& path) {
  for (double x : v) {
    if (!std::isfinite(x)) throw IoError(path.string() + ": non-finite pixel value");
  }
}

}  // namespace detail

/// Reads any 8- or 16-bit PNG as RGBA with raw values in [0, 1] (no transfer
/// function applied).
inline Image read_png(const std::filesystem::path& path) {
  detail::PngFile file(path, "rb");
  if (!file.f) throw IoError(path.string() + ": cannot open");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.f) != 8 || png_sig_cmp(sig, 0, 8)) throw IoError(path.string() + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError(path.string() + ": libpng init failed");
  Image img;
  std::vector<png_bytep> rows;
  std::vector<std::uint8_t> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path.string() + ": corrupt PNG");
  }
  png_init_io(png, file.f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  if (!(color & PNG_COLOR_MASK_ALPHA) && !png_get_valid(png, info, PNG_INFO_tRNS)) {
    png_set_filler(png, 0xFF, PNG_FILLER_AFTER);
  }
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = 4;
  const std::size_t stride = png_get_rowbytes(png, info);
  buffer.resize(stride * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  img.data.resize(img.width * img.height * 4);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = buffer[i] / 255.0;
  return img;
}

/// Writes 8-bit RGB or RGBA; values are clamped to [0, 1] and quantized.
inline void write_png_raw(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3 && img.channels != 4) throw IoError(path.string() + ": PNG needs 3 or 4 channels");
  detail::PngFile file(path, "wb");
  if (!file.f) throw IoError(path.string() + ": cannot open for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (!png || !info) throw IoError(path.string() + ": libpng init failed");
  std::vector<std::uint8_t> buffer(img.data.size());
  for (std::size_t i = 0; i < buffer.size(); ++i) buffer[i] = to_byte(img.data[i]);
  std::vector<png_bytep> rows(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * img.width * img.channels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError(path.string() + ": PNG write failed");
  }
  png_init_io(png, file.f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 4 ? PNG_COLOR_TYPE_RGBA : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Linear RGB (3 per pixel) to an 8-bit sRGB PNG.
inline void write_png_linear(const std::filesystem::path& path, std::size_t width, std::size_t height,
                             const std::vector<double>& rgb) {
  if (rgb.size() != width * height * 3) throw IoError(path.string() + ": image buffer size mismatch");
  Image img{width, height, 3, std::vector<double>(rgb.size())};
  for (std::size_t i = 0; i < rgb.size(); ++i) img.data[i] = linear_to_srgb(rgb[i]);
  write_png_raw(path, img);
}

/// Reads a 3-channel ("PF") or 1-channel ("Pf") PFM; returns top row first.
inline Image read_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::string magic;
  std::size_t w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (!in || (magic != "PF" && magic != "Pf")) throw IoError(path.string() + ": not a PFM file");
  if (w == 0 || h == 0 || scale == 0.0) throw IoError(path.string() + ": bad PFM header");
  in.get();  // single whitespace before the raster
  const std::size_t ch = magic == "PF" ? 3 : 1;
  std::vector<std::uint8_t> raw(w * h * ch * 4);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw IoError(path.string() + ": truncated PFM raster");
  const bool little = scale < 0.0;
  Image img{w, h, ch, std::vector<double>(w * h * ch)};
  for (std::size_t row = 0; row < h; ++row)
    for (std::size_t i = 0; i < w * ch; ++i) {
      const std::uint8_t* b = raw.data() + (row * w * ch + i) * 4;
      const std::uint32_t bits = little ? (std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                                           std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24)
                                        : (std::uint32_t(b[3]) | std::uint32_t(b[2]) << 8 |
                                           std::uint32_t(b[1]) << 16 | std::uint32_t(b[0]) << 24);
      // rows are stored bottom-up
      img.data[(h - 1 - row) * w * ch + i] = std::bit_cast<float>(bits);
    }
  detail::check_finite(img.data, path);
  return img;
}

/// Writes a little-endian PFM (negative scale), bottom row first.
inline void write_pfm(const std::filesystem::path& path, const Image& img) {
  if (img.channels != 3 && img.channels != 1) throw IoError(path.string() + ": PFM needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << (img.channels == 3 ? "PF" : "Pf") << "\n" << img.width << " " << img.height << "\n-1.0\n";
  const std::size_t row_len = img.width * img.channels;
  for (std::size_t r = img.height; r-- > 0;)
    for (std::size_t i = 0; i < row_len; ++i) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(static_cast<float>(img.data[r * row_len + i]));
      const char b[4] = {char(bits & 0xFF), char(bits >> 8 & 0xFF), char(bits >> 16 & 0xFF), char(bits >> 24)};
      out.write(b, 4);
    }
  if (!out) throw IoError(path.string() + ": write failed");
}

/// Environment radiance as linear H x W x 3: PFM as stored, PNG decoded from sRGB.
struct EnvImage {
  std::size_t height = 0, width = 0;
  std::vector<double> radiance;
  std::string warning;
};

inline EnvImage load_envmap(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  EnvImage env;
  if (ext == ".pfm") {
    const auto img = read_pfm(path);
    env.height = img.height;
    env.width = img.width;
    env.radiance.resize(img.width * img.height * 3);
    for (std::size_t p = 0; p < img.width * img.height; ++p)
      for (int c = 0; c < 3; ++c) env.radiance[p * 3 + c] = img.data[p * img.channels + (img.channels == 3 ? c : 0)];
  } else if (ext == ".png") {
    const auto img = read_png(path);
    env.height = img.height;
    env.width = img.width;
    env.radiance.resize(img.width * img.height * 3);
    for (std::size_t p = 0; p < img.width * img.height; ++p)
      for (int c = 0; c < 3; ++c) env.radiance[p * 3 + c] = srgb_to_linear(img.data[p * 4 + c]);
  } else {
    throw IoError(path.string() + ": unsupported environment map format '" + ext + "'");
  }
  for (double& v : env.radiance) {
    if (v < 0.0) throw IoError(path.string() + ": negative radiance");
  }
  if (env.width != 2 * env.height) {
    std::ostringstream os;
    os << path.string() << ": expected width = 2 x height, got " << env.width << "x" << env.height;
    env.warning = os.str();
  }
  return env;
}

}  // namespace mfield
