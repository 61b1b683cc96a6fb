#pragma once

// PNG encode/decode for the two on-disk/wire pixel formats: 8-bit RGB images
// and 16-bit single-channel label maps. Uses libpng's simplified API.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "cseg/labels.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

class PngError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Bytes = std::vector<std::uint8_t>;

namespace detail {

inline Bytes png_write(png_image& img, const void* pixels) {
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(img, size, 0, pixels, 0, nullptr))
    throw PngError(std::string("png encode: ") + img.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels, 0, nullptr))
    throw PngError(std::string("png encode: ") + img.message);
  out.resize(size);
  return out;
}

inline png_image png_begin_read(std::span<const std::uint8_t> data, png_uint_32 format) {
  if (data.empty()) throw PngError("png decode: empty payload");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, data.data(), data.size()))
    throw PngError(std::string("png decode: ") + img.message);
  img.format = format;
  return img;
}

inline void png_finish_read(png_image& img, void* buffer) {
  if (!png_image_finish_read(&img, nullptr, buffer, 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw PngError("png decode: " + msg);
  }
}

}  // namespace detail

inline std::uint8_t to_byte(float v) {
  return std::uint8_t(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// [H, W, 3] in [0, 1] -> 8-bit RGB PNG.
inline Bytes encode_png_rgb8(const Tensor<float>& image) {
  require_rank(image, 3, "encode_png_rgb8");
  if (image.dim(2) != 3) throw std::invalid_argument("encode_png_rgb8: expected 3 channels");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(image.dim(1));
  img.height = png_uint_32(image.dim(0));
  img.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> px(image.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = to_byte(image[i]);
  return detail::png_write(img, px.data());
}

// Any PNG -> [H, W, 3] in [0, 1]. Rejects images larger than max_pixels.
inline Tensor<float> decode_png_rgb8(std::span<const std::uint8_t> data, std::size_t max_pixels = 0) {
  auto img = detail::png_begin_read(data, PNG_FORMAT_RGB);
  if (max_pixels && std::size_t(img.width) * img.height > max_pixels) {
    png_image_free(&img);
    throw PngError("png decode: image exceeds size limit");
  }
  std::vector<std::uint8_t> px(PNG_IMAGE_SIZE(img));
  detail::png_finish_read(img, px.data());
  Tensor<float> out({int(img.height), int(img.width), 3});
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = float(px[i]) / 255.0f;
  return out;
}

// Label map -> 16-bit grayscale PNG holding the raw indices.
inline Bytes encode_png_gray16(const LabelMap& labels) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(labels.width());
  img.height = png_uint_32(labels.height());
  img.format = PNG_FORMAT_LINEAR_Y;
  std::vector<png_uint_16> px(labels.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    if (labels[i] < 0 || labels[i] > 65535) throw std::invalid_argument("encode_png_gray16: label out of range");
    px[i] = png_uint_16(labels[i]);
  }
  return detail::png_write(img, px.data());
}

inline LabelMap decode_png_gray16(std::span<const std::uint8_t> data) {
  auto img = detail::png_begin_read(data, PNG_FORMAT_LINEAR_Y);
  std::vector<png_uint_16> px(PNG_IMAGE_SIZE(img) / 2);
  detail::png_finish_read(img, px.data());
  std::vector<int> values(px.begin(), px.end());
  return LabelMap(int(img.width), int(img.height), std::move(values));
}

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(data.data()), std::streamsize(data.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  write_file(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace cseg
