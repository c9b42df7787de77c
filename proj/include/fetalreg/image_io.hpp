#pragma once

// 8-bit grayscale raster I/O. PNG via libpng's simplified API, JPEG via
// libjpeg, binary PGM (P5) natively. Link PNG::PNG and JPEG::JPEG.

#include <png.h>

#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fetalreg/image.hpp"

namespace fetalreg {

enum class RasterFormat { Png, Jpeg, Pgm };

inline std::string_view extension_of(RasterFormat f) {
  switch (f) {
    case RasterFormat::Png: return ".png";
    case RasterFormat::Jpeg: return ".jpeg";
    case RasterFormat::Pgm: return ".pgm";
  }
  return "";
}

inline RasterFormat format_from_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".png") return RasterFormat::Png;
  if (ext == ".jpg" || ext == ".jpeg") return RasterFormat::Jpeg;
  if (ext == ".pgm") return RasterFormat::Pgm;
  throw Error(ErrorCode::IoError, "unsupported raster extension: " + path.string());
}

namespace detail {

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

inline std::vector<std::uint8_t> to_bytes(const GrayImage& img) {
  std::vector<std::uint8_t> out(img.data().size());
  std::transform(img.data().begin(), img.data().end(), out.begin(), to_byte);
  return out;
}

inline GrayImage from_bytes(int w, int h, const std::vector<std::uint8_t>& bytes) {
  std::vector<double> data(bytes.begin(), bytes.end());
  return GrayImage(w, h, std::move(data));
}

inline GrayImage read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str()))
    throw Error(ErrorCode::IoError, "cannot read PNG " + path.string() + ": " + image.message);
  image.format = PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorCode::IoError, "cannot decode PNG " + path.string() + ": " + image.message);
  }
  return from_bytes(static_cast<int>(image.width), static_cast<int>(image.height), buffer);
}

inline void write_png(const std::filesystem::path& path, int w, int h,
                      const std::vector<std::uint8_t>& bytes) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw Error(ErrorCode::IoError, "cannot write PNG " + path.string() + ": " + image.message);
}

inline void write_jpeg(const std::filesystem::path& path, int w, int h,
                       const std::vector<std::uint8_t>& bytes, int quality = 95) {
  std::FILE* file = std::fopen(path.c_str(), "wb");
  if (!file) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  jpeg_compress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  jpeg_stdio_dest(&cinfo, file);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = 1;
  cinfo.in_color_space = JCS_GRAYSCALE;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPLE*>(bytes.data() + static_cast<std::size_t>(cinfo.next_scanline) *
                                                        static_cast<std::size_t>(w));
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  if (std::fclose(file) != 0) throw Error(ErrorCode::IoError, "cannot close " + path.string());
}

inline GrayImage read_jpeg(const std::filesystem::path& path) {
  std::FILE* file = std::fopen(path.c_str(), "rb");
  if (!file) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  jpeg_error_mgr jerr{};
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_GRAYSCALE;
  jpeg_start_decompress(&cinfo);
  const int w = static_cast<int>(cinfo.output_width);
  const int h = static_cast<int>(cinfo.output_height);
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPLE* row = bytes.data() + static_cast<std::size_t>(cinfo.output_scanline) *
                                      static_cast<std::size_t>(w);
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(file);
  return from_bytes(w, h, bytes);
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  auto next_token = [&]() {
    std::string tok;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string ignored;
        std::getline(in, ignored);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(c);
    }
    return tok;
  };
  if (next_token() != "P5") throw Error(ErrorCode::IoError, path.string() + " is not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::exception&) {
    throw Error(ErrorCode::IoError, "malformed PGM header in " + path.string());
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw Error(ErrorCode::IoError, "unsupported PGM geometry or depth in " + path.string());
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    throw Error(ErrorCode::IoError, "truncated PGM " + path.string());
  return from_bytes(w, h, bytes);
}

inline void write_pgm(const std::filesystem::path& path, int w, int h,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot open " + path.string() + " for writing");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
}

inline void write_bytes(const std::filesystem::path& path, int w, int h,
                        const std::vector<std::uint8_t>& bytes) {
  switch (format_from_path(path)) {
    case RasterFormat::Png: write_png(path, w, h, bytes); break;
    case RasterFormat::Jpeg: write_jpeg(path, w, h, bytes); break;
    case RasterFormat::Pgm: write_pgm(path, w, h, bytes); break;
  }
}

}  // namespace detail

/// Loads an 8-bit raster as intensities in [0, 255].
inline GrayImage read_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw Error(ErrorCode::IoError, "no such file: " + path.string());
  switch (format_from_path(path)) {
    case RasterFormat::Png: return detail::read_png(path);
    case RasterFormat::Jpeg: return detail::read_jpeg(path);
    case RasterFormat::Pgm: return detail::read_pgm(path);
  }
  throw Error(ErrorCode::IoError, "unreachable");
}

/// Writes intensities rounded and clamped to [0, 255]; format from extension.
inline void write_image(const std::filesystem::path& path, const GrayImage& img) {
  detail::write_bytes(path, img.width(), img.height(), detail::to_bytes(img));
}

/// Interleaved 8-bit RGB output (PNG only); used for overlays.
inline void write_rgb_png(const std::filesystem::path& path, int w, int h,
                          const std::vector<std::uint8_t>& rgb) {
  if (rgb.size() != static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3)
    throw Error(ErrorCode::DimensionMismatch, "RGB buffer size does not match geometry");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, rgb.data(), 0, nullptr))
    throw Error(ErrorCode::IoError, "cannot write PNG " + path.string() + ": " + image.message);
}

inline void write_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<std::uint8_t> bytes(mask.raw().size());
  std::transform(mask.raw().begin(), mask.raw().end(), bytes.begin(),
                 [](std::uint8_t v) { return static_cast<std::uint8_t>(v ? 255 : 0); });
  detail::write_bytes(path, mask.width(), mask.height(), bytes);
}

}  // namespace fetalreg
