#include "fbseg/image_codec.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

namespace fbseg {
namespace {

namespace fs = std::filesystem;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw std::runtime_error(std::string("png: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

class PngWriter {
 public:
  explicit PngWriter(const fs::path& path) : path_(path), file_(open_file(path, "wb")) {
    png_ = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    if (!png_) throw std::runtime_error("png_create_write_struct failed");
    info_ = png_create_info_struct(png_);
    png_init_io(png_, file_.get());
  }
  ~PngWriter() { png_destroy_write_struct(&png_, &info_); }
  PngWriter(const PngWriter&) = delete;
  PngWriter& operator=(const PngWriter&) = delete;

  png_structp png() { return png_; }
  png_infop info() { return info_; }

  void write_rows(std::vector<png_bytep>& rows) {
    png_write_info(png_, info_);
    png_write_image(png_, rows.data());
    png_write_end(png_, nullptr);
  }

 private:
  fs::path path_;
  FilePtr file_;
  png_structp png_ = nullptr;
  png_infop info_ = nullptr;
};

void write_gray(const fs::path& path, int rows, int cols, int depth, const std::uint8_t* bytes, std::size_t row_bytes) {
  PngWriter w(path);
  png_set_IHDR(w.png(), w.info(), static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), depth,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) ptrs[r] = const_cast<png_bytep>(bytes + r * row_bytes);
  w.write_rows(ptrs);
}

// --- TIFF helpers -----------------------------------------------------------

struct ByteReader {
  std::vector<std::uint8_t> buf;
  bool big_endian = false;

  void need(std::size_t off, std::size_t n) const {
    if (off + n > buf.size()) throw std::runtime_error("tiff: truncated file");
  }
  std::uint16_t u16(std::size_t off) const {
    need(off, 2);
    return big_endian ? static_cast<std::uint16_t>(buf[off] << 8 | buf[off + 1])
                      : static_cast<std::uint16_t>(buf[off + 1] << 8 | buf[off]);
  }
  std::uint32_t u32(std::size_t off) const {
    need(off, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      const std::uint32_t b = buf[off + i];
      v |= big_endian ? b << (8 * (3 - i)) : b << (8 * i);
    }
    return v;
  }
};

struct TiffTag {
  std::uint16_t type = 0;
  std::uint32_t count = 0;
  std::uint32_t value_offset = 0;  // raw field position of the value/offset
};

std::vector<std::uint32_t> tag_values(const ByteReader& r, const TiffTag& t) {
  const std::size_t unit = t.type == 3 ? 2 : t.type == 4 ? 4 : 0;
  if (unit == 0) throw std::runtime_error("tiff: unsupported tag type " + std::to_string(t.type));
  const std::size_t total = unit * t.count;
  const std::size_t base = total <= 4 ? t.value_offset : r.u32(t.value_offset);
  std::vector<std::uint32_t> out(t.count);
  for (std::uint32_t i = 0; i < t.count; ++i) out[i] = unit == 2 ? r.u16(base + i * 2) : r.u32(base + i * 4);
  return out;
}

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

// Little-endian, single-strip writer.
void write_tiff_raw(const fs::path& path, int rows, int cols, int bits, int sample_format,
                    const std::vector<std::uint8_t>& payload) {
  struct Entry {
    std::uint16_t tag, type;
    std::uint32_t value;
  };
  const std::uint32_t header = 8;
  const std::uint32_t data_offset = header;
  const std::uint32_t ifd_offset = data_offset + static_cast<std::uint32_t>(payload.size()) +
                                   static_cast<std::uint32_t>(payload.size() % 2);
  const std::vector<Entry> entries = {
      {256, 4, static_cast<std::uint32_t>(cols)},
      {257, 4, static_cast<std::uint32_t>(rows)},
      {258, 3, static_cast<std::uint32_t>(bits)},
      {259, 3, 1},  // no compression
      {262, 3, 1},  // min-is-black
      {273, 4, data_offset},
      {277, 3, 1},
      {278, 4, static_cast<std::uint32_t>(rows)},
      {279, 4, static_cast<std::uint32_t>(payload.size())},
      {284, 3, 1},
      {339, 3, static_cast<std::uint32_t>(sample_format)},
  };
  std::vector<std::uint8_t> out;
  out.reserve(ifd_offset + 2 + entries.size() * 12 + 4);
  out.push_back('I');
  out.push_back('I');
  put16(out, 42);
  put32(out, ifd_offset);
  out.insert(out.end(), payload.begin(), payload.end());
  if (payload.size() % 2) out.push_back(0);
  put16(out, static_cast<std::uint16_t>(entries.size()));
  for (const auto& e : entries) {
    put16(out, e.tag);
    put16(out, e.type);
    put32(out, 1);
    if (e.type == 3) {
      put16(out, static_cast<std::uint16_t>(e.value));
      put16(out, 0);
    } else {
      put32(out, e.value);
    }
  }
  put32(out, 0);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return e;
}

}  // namespace

DecodedImage read_png(const fs::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  png_init_io(png, file.get());
  png_read_info(png, info);
  const int cols = static_cast<int>(png_get_image_width(png, info));
  const int rows = static_cast<int>(png_get_image_height(png, info));
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_PALETTE) {
    throw std::runtime_error(path.string() + ": expected single-channel (gray or indexed) PNG");
  }
  if (depth < 8) png_set_packing(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (depth == 16 && std::endian::native == std::endian::little) png_set_swap(png);
  png_read_update_info(png, info);

  const std::size_t row_bytes = png_get_rowbytes(png, info);
  std::vector<std::uint8_t> buf(row_bytes * rows);
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) ptrs[r] = buf.data() + r * row_bytes;
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);

  DecodedImage out;
  out.pixels.resize(rows, cols);
  if (depth == 16) {
    out.kind = SampleKind::UInt16;
    for (int r = 0; r < rows; ++r) {
      const auto* row = reinterpret_cast<const std::uint16_t*>(ptrs[r]);
      for (int c = 0; c < cols; ++c) out.pixels(r, c) = static_cast<float>(row[c]);
    }
  } else {
    out.kind = SampleKind::UInt8;
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) out.pixels(r, c) = static_cast<float>(ptrs[r][c]);
  }
  return out;
}

void write_png_gray8(const fs::path& path, const Mask& image) {
  write_gray(path, static_cast<int>(image.rows()), static_cast<int>(image.cols()), 8, image.data(),
             static_cast<std::size_t>(image.cols()));
}

void write_png_gray16(const fs::path& path, const Image<std::uint16_t>& image) {
  // PNG stores 16-bit samples big-endian.
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(image.size()) * 2);
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    bytes[2 * i] = static_cast<std::uint8_t>(image.data()[i] >> 8);
    bytes[2 * i + 1] = static_cast<std::uint8_t>(image.data()[i] & 0xff);
  }
  write_gray(path, static_cast<int>(image.rows()), static_cast<int>(image.cols()), 16, bytes.data(),
             static_cast<std::size_t>(image.cols()) * 2);
}

void write_png_indexed(const fs::path& path, const Mask& indices,
                       const std::vector<std::array<std::uint8_t, 3>>& palette) {
  if (palette.empty() || palette.size() > 256) throw std::invalid_argument("palette size must be 1..256");
  if (indices.size() > 0 && indices.maxCoeff() >= palette.size()) {
    throw std::invalid_argument("mask index outside palette");
  }
  PngWriter w(path);
  const auto rows = static_cast<int>(indices.rows());
  const auto cols = static_cast<int>(indices.cols());
  png_set_IHDR(w.png(), w.info(), static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), 8,
               PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_color> pal(palette.size());
  for (std::size_t i = 0; i < palette.size(); ++i) pal[i] = {palette[i][0], palette[i][1], palette[i][2]};
  png_set_PLTE(w.png(), w.info(), pal.data(), static_cast<int>(pal.size()));
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) ptrs[r] = const_cast<png_bytep>(indices.data() + static_cast<std::size_t>(r) * cols);
  w.write_rows(ptrs);
}

void write_png_rgb(const fs::path& path, const RgbImage& image) {
  PngWriter w(path);
  png_set_IHDR(w.png(), w.info(), static_cast<png_uint_32>(image.cols), static_cast<png_uint_32>(image.rows), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(image.rows));
  for (int r = 0; r < image.rows; ++r)
    ptrs[r] = const_cast<png_bytep>(image.data.data() + static_cast<std::size_t>(r) * image.cols * 3);
  w.write_rows(ptrs);
}

DecodedImage read_tiff(const fs::path& path) {
  ByteReader r;
  {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path.string());
    r.buf.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
  }
  r.need(0, 8);
  if (r.buf[0] == 'I' && r.buf[1] == 'I') {
    r.big_endian = false;
  } else if (r.buf[0] == 'M' && r.buf[1] == 'M') {
    r.big_endian = true;
  } else {
    throw std::runtime_error(path.string() + ": not a TIFF file");
  }
  if (r.u16(2) != 42) throw std::runtime_error(path.string() + ": BigTIFF or invalid magic");

  const std::uint32_t ifd = r.u32(4);
  const std::uint16_t n = r.u16(ifd);
  auto find = [&](std::uint16_t tag) -> std::optional<TiffTag> {
    for (std::uint16_t i = 0; i < n; ++i) {
      const std::size_t e = ifd + 2 + 12u * i;
      if (r.u16(e) == tag) return TiffTag{r.u16(e + 2), r.u32(e + 4), static_cast<std::uint32_t>(e + 8)};
    }
    return std::nullopt;
  };
  auto scalar = [&](std::uint16_t tag, std::uint32_t fallback) {
    auto t = find(tag);
    return t ? tag_values(r, *t).at(0) : fallback;
  };

  const auto cols = static_cast<int>(scalar(256, 0));
  const auto rows = static_cast<int>(scalar(257, 0));
  const auto bits = scalar(258, 1);
  const auto compression = scalar(259, 1);
  const auto samples = scalar(277, 1);
  const auto format = scalar(339, 1);
  const auto rows_per_strip = scalar(278, static_cast<std::uint32_t>(rows));
  if (rows <= 0 || cols <= 0) throw std::runtime_error(path.string() + ": invalid dimensions");
  if (compression != 1) throw std::runtime_error(path.string() + ": compressed TIFF not supported");
  if (samples != 1) throw std::runtime_error(path.string() + ": expected single-channel TIFF");
  if (find(322)) throw std::runtime_error(path.string() + ": tiled TIFF not supported");
  const auto offsets_tag = find(273);
  if (!offsets_tag) throw std::runtime_error(path.string() + ": missing StripOffsets");
  const auto offsets = tag_values(r, *offsets_tag);

  DecodedImage out;
  if (bits == 8 && format == 1) {
    out.kind = SampleKind::UInt8;
  } else if (bits == 16 && format == 1) {
    out.kind = SampleKind::UInt16;
  } else if (bits == 32 && format == 3) {
    out.kind = SampleKind::Float32;
  } else {
    throw std::runtime_error(path.string() + ": unsupported sample layout (" + std::to_string(bits) +
                             "-bit, format " + std::to_string(format) + ")");
  }
  const std::size_t bytes_per = bits / 8;
  out.pixels.resize(rows, cols);
  for (int row = 0; row < rows; ++row) {
    const std::size_t strip = row / rows_per_strip;
    if (strip >= offsets.size()) throw std::runtime_error(path.string() + ": strip table too short");
    const std::size_t base = offsets[strip] + (row % rows_per_strip) * cols * bytes_per;
    r.need(base, cols * bytes_per);
    for (int c = 0; c < cols; ++c) {
      const std::size_t off = base + c * bytes_per;
      float v;
      if (bits == 8) {
        v = r.buf[off];
      } else if (bits == 16) {
        v = r.u16(off);
      } else {
        v = std::bit_cast<float>(r.u32(off));
      }
      out.pixels(row, c) = v;
    }
  }
  return out;
}

void write_tiff_gray16(const fs::path& path, const Image<std::uint16_t>& image) {
  std::vector<std::uint8_t> payload;
  payload.reserve(static_cast<std::size_t>(image.size()) * 2);
  for (Eigen::Index i = 0; i < image.size(); ++i) put16(payload, image.data()[i]);
  write_tiff_raw(path, static_cast<int>(image.rows()), static_cast<int>(image.cols()), 16, 1, payload);
}

void write_tiff_float(const fs::path& path, const ImageF& image) {
  std::vector<std::uint8_t> payload;
  payload.reserve(static_cast<std::size_t>(image.size()) * 4);
  for (Eigen::Index i = 0; i < image.size(); ++i) put32(payload, std::bit_cast<std::uint32_t>(image.data()[i]));
  write_tiff_raw(path, static_cast<int>(image.rows()), static_cast<int>(image.cols()), 32, 3, payload);
}

DecodedImage read_gray_image(const fs::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".tif" || ext == ".tiff") return read_tiff(path);
  throw std::runtime_error(path.string() + ": unsupported image extension");
}

Mask read_mask(const fs::path& path) {
  const auto decoded = read_png(path);
  if (decoded.kind != SampleKind::UInt8) throw std::runtime_error(path.string() + ": masks must be 8-bit PNG");
  return decoded.pixels.cast<std::uint8_t>();
}

}  // namespace fbseg
