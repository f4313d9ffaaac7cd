#pragma once

// PNG and baseline JPEG decoding, PNG encoding. Link fsnet_image to use this header.

#include <csetjmp>
#include <cstdio>
#include <cctype>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <jpeglib.h>
#include <png.h>

#include "fsnet/error.hpp"
#include "fsnet/image.hpp"

namespace fsnet {

namespace detail {

inline Image read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw FormatError(path + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;  // grayscale and palette images expand to RGB
  Image img(png.width, png.height);
  if (!png_image_finish_read(&png, nullptr, img.rgb.data(), 0, nullptr)) {
    png_image_free(&png);
    throw FormatError(path + ": " + png.message);
  }
  return img;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  cinfo->err->format_message(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline Image read_jpeg(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> file(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!file) throw Error(path + ": cannot open");
  jpeg_decompress_struct cinfo;
  JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError(path + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;  // grayscale promoted by the decoder
  jpeg_start_decompress(&cinfo);
  img = Image(cinfo.output_width, cinfo.output_height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = img.rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * img.width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

inline std::string lower_extension(const std::string& path) {
  std::string ext = std::filesystem::path(path).extension().string();
  for (char& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

}  // namespace detail

/// Decodes a PNG or JPEG file, chosen by extension.
inline Image read_image(const std::string& path) {
  if (!std::filesystem::exists(path)) throw Error(path + ": no such file");
  const std::string ext = detail::lower_extension(path);
  if (ext == ".png") return detail::read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return detail::read_jpeg(path);
  throw FormatError(path + ": unsupported image format (expected .png, .jpg or .jpeg)");
}

inline void write_png(const std::string& path, const Image& img) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, img.rgb.data(), 0, nullptr)) {
    throw Error(path + ": " + png.message);
  }
}

}  // namespace fsnet
