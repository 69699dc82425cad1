#ifndef FBSEG_RENDER_HPP
#define FBSEG_RENDER_HPP

#include <array>
#include <cstdint>

#include "fbseg/image.hpp"
#include "fbseg/image_codec.hpp"

namespace fbseg::render {

using Color = std::array<std::uint8_t, 3>;

inline constexpr Color kDense = {0, 200, 0};
inline constexpr Color kModerate = {0, 200, 200};
inline constexpr Color kSparse = {220, 0, 0};
inline constexpr Color kPrediction = {255, 220, 0};
inline constexpr Color kOutline = {255, 255, 255};

/// Gray rendering windowed to the 1st..99th percentile.
RgbImage grayscale(const ImageF& pixels);

/// Colors every pixel of the mask that has a 4-neighbour outside it.
void draw_contours(RgbImage& canvas, const Mask& mask, Color color);

/// Alpha-blends color over mask pixels.
void fill(RgbImage& canvas, const Mask& mask, Color color, double alpha);

}  // namespace fbseg::render

#endif  // FBSEG_RENDER_HPP
