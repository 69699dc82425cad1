#ifndef FBSEG_IMAGE_CODEC_HPP
#define FBSEG_IMAGE_CODEC_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fbseg/image.hpp"

namespace fbseg {

/// Interleaved 8-bit RGB raster used for overlays and previews.
struct RgbImage {
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> data;  // rows * cols * 3

  RgbImage() = default;
  RgbImage(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c * 3, 0) {}

  std::uint8_t* at(int r, int c) { return data.data() + (static_cast<std::size_t>(r) * cols + c) * 3; }
  void set(int r, int c, std::array<std::uint8_t, 3> rgb) {
    auto* p = at(r, c);
    p[0] = rgb[0];
    p[1] = rgb[1];
    p[2] = rgb[2];
  }
};

/// Sample layout of a decoded single-channel raster.
enum class SampleKind { UInt8, UInt16, Float32 };

struct DecodedImage {
  ImageF pixels;  // integer samples are stored exactly (16-bit fits in float)
  SampleKind kind = SampleKind::UInt8;
};

// PNG (libpng). Gray 8/16-bit and 8-bit palette images are accepted; palette
// images return raw indices, not expanded colors.
DecodedImage read_png(const std::filesystem::path& path);
void write_png_gray8(const std::filesystem::path& path, const Mask& image);
void write_png_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& image);
void write_png_indexed(const std::filesystem::path& path, const Mask& indices,
                       const std::vector<std::array<std::uint8_t, 3>>& palette);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

// Baseline TIFF: uncompressed, one sample per pixel, strips, 8/16-bit unsigned
// or 32-bit IEEE float, either byte order.
DecodedImage read_tiff(const std::filesystem::path& path);
void write_tiff_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& image);
void write_tiff_float(const std::filesystem::path& path, const ImageF& image);

/// Dispatches on extension (.png, .tif, .tiff).
DecodedImage read_gray_image(const std::filesystem::path& path);

/// Reads an 8-bit mask (indexed or grayscale PNG).
Mask read_mask(const std::filesystem::path& path);

}  // namespace fbseg

#endif  // FBSEG_IMAGE_CODEC_HPP
