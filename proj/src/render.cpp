#include "fbseg/render.hpp"

#include <algorithm>
#include <vector>

namespace fbseg::render {

RgbImage grayscale(const ImageF& pixels) {
  const int h = static_cast<int>(pixels.rows()), w = static_cast<int>(pixels.cols());
  std::vector<float> sorted(pixels.data(), pixels.data() + pixels.size());
  std::sort(sorted.begin(), sorted.end());
  const float lo = sorted[sorted.size() / 100];
  const float hi = sorted[sorted.size() - 1 - sorted.size() / 100];
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;
  RgbImage out(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      const auto v = static_cast<std::uint8_t>(std::clamp((pixels(r, c) - lo) * scale, 0.0f, 255.0f));
      out.set(r, c, {v, v, v});
    }
  return out;
}

void draw_contours(RgbImage& canvas, const Mask& mask, Color color) {
  const int h = static_cast<int>(mask.rows()), w = static_cast<int>(mask.cols());
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r == h - 1 || c == w - 1 || !mask(r - 1, c) || !mask(r + 1, c) ||
                        !mask(r, c - 1) || !mask(r, c + 1);
      if (edge) canvas.set(r, c, color);
    }
}

void fill(RgbImage& canvas, const Mask& mask, Color color, double alpha) {
  for (int r = 0; r < canvas.rows; ++r)
    for (int c = 0; c < canvas.cols; ++c) {
      if (!mask(r, c)) continue;
      auto* p = canvas.at(r, c);
      for (int k = 0; k < 3; ++k) p[k] = static_cast<std::uint8_t>((1 - alpha) * p[k] + alpha * color[k]);
    }
}

}  // namespace fbseg::render
