#pragma once

#include <vector>

#include "secretgen/image.hpp"

namespace secretgen {

// Binary H x W map: 1 = retained (non-sensitive), 0 = cropped (sensitive).
struct CorruptionMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> grid;  // row-major

  CorruptionMask() = default;
  CorruptionMask(int h, int w, std::uint8_t fill = 1)
      : height(h), width(w), grid(std::size_t(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return grid[std::size_t(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return grid[std::size_t(y) * width + x]; }

  std::size_t zero_count() const {
    std::size_t n = 0;
    for (auto v : grid) n += (v == 0);
    return n;
  }
  std::size_t one_count() const { return grid.size() - zero_count(); }
};

constexpr double kCorruptionFill = 0.0;  // mid-gray in [-1,1]

inline ImageTensor apply_corruption(const ImageTensor& x, const CorruptionMask& mask,
                                    double fill = kCorruptionFill) {
  if (mask.height != x.height || mask.width != x.width)
    throw validation_error("apply_corruption: mask/image shape mismatch");
  ImageTensor out = x;
  for (int c = 0; c < x.channels; ++c)
    for (int y = 0; y < x.height; ++y)
      for (int xx = 0; xx < x.width; ++xx)
        if (mask.at(y, xx) == 0) out.at(c, y, xx) = fill;
  return out;
}

inline CorruptionMask make_center_mask(int h, int w, double block_fraction = 0.5) {
  int bh = int(std::floor(block_fraction * h));
  int bw = int(std::floor(block_fraction * w));
  if (bh < 1 || bw < 1) throw validation_error("center mask: empty block");
  if (bh >= h || bw >= w) throw validation_error("center mask: block covers full image");
  CorruptionMask m(h, w, 1);
  int y0 = (h - bh) / 2, x0 = (w - bw) / 2;
  for (int y = y0; y < y0 + bh; ++y)
    for (int x = x0; x < x0 + bw; ++x) m.at(y, x) = 0;
  return m;
}

// T geometry as fractions of the image side: a horizontal eye band union a
// vertical nose/mouth band.
struct FaceTGeometry {
  double band_top = 0.25, band_bottom = 0.45;  // rows of the horizontal band
  double band_left = 0.15, band_right = 0.85;  // cols of the horizontal band
  double stem_top = 0.25, stem_bottom = 0.85;  // rows of the vertical band
  double stem_left = 0.40, stem_right = 0.60;  // cols of the vertical band
};

inline CorruptionMask make_face_t_mask(int h, int w, const FaceTGeometry& g = {}) {
  auto span = [](double a, double b, int n) {
    return std::pair<int, int>{int(std::floor(a * n)), int(std::floor(b * n))};
  };
  auto [by0, by1] = span(g.band_top, g.band_bottom, h);
  auto [bx0, bx1] = span(g.band_left, g.band_right, w);
  auto [sy0, sy1] = span(g.stem_top, g.stem_bottom, h);
  auto [sx0, sx1] = span(g.stem_left, g.stem_right, w);
  if (by1 <= by0 || bx1 <= bx0 || sy1 <= sy0 || sx1 <= sx0)
    throw validation_error("face T mask: degenerate band");
  if (by0 < 0 || by1 > h || bx0 < 0 || bx1 > w || sy0 < 0 || sy1 > h || sx0 < 0 || sx1 > w)
    throw validation_error("face T mask: geometry out of bounds");
  CorruptionMask m(h, w, 1);
  for (int y = by0; y < by1; ++y)
    for (int x = bx0; x < bx1; ++x) m.at(y, x) = 0;
  for (int y = sy0; y < sy1; ++y)
    for (int x = sx0; x < sx1; ++x) m.at(y, x) = 0;
  if (m.zero_count() == 0 || m.one_count() == 0)
    throw validation_error("face T mask: mask must retain and crop at least one pixel");
  return m;
}

}  // namespace secretgen
