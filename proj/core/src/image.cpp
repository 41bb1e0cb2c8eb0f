#include "atn/image.hpp"

#include <algorithm>
#include <cmath>

namespace atn {

Image image_from_bytes(std::span<const std::uint8_t> bytes, std::size_t h, std::size_t w, std::size_t c) {
  if (bytes.size() != h * w * c) throw FormatError("image byte count does not match dimensions");
  Image img(h, w, c);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.pixels[i] = static_cast<float>(bytes[i]) / 255.0f;
  return img;
}

std::vector<std::uint8_t> image_to_bytes(const Image& image) {
  std::vector<std::uint8_t> out(image.pixels.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

Image grayscale(const Image& rgb) {
  if (rgb.channels != 3) throw ConfigError("grayscale expects an RGB image");
  Image g(rgb.height, rgb.width, 1);
  for (std::size_t i = 0; i < rgb.height * rgb.width; ++i) {
    g.pixels[i] = 0.299f * rgb.pixels[3 * i] + 0.587f * rgb.pixels[3 * i + 1] + 0.114f * rgb.pixels[3 * i + 2];
  }
  return g;
}

Image mirror_horizontal(const Image& image) {
  Image out(image.height, image.width, image.channels);
  for (std::size_t r = 0; r < image.height; ++r)
    for (std::size_t c = 0; c < image.width; ++c)
      for (std::size_t ch = 0; ch < image.channels; ++ch) out.at(r, image.width - 1 - c, ch) = image.at(r, c, ch);
  return out;
}

Hsv rgb_to_hsv(float r, float g, float b) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  Hsv out{0.0f, 0.0f, mx};
  if (mx > 0.0f) out.s = d / mx;
  if (d > 0.0f) {
    if (mx == r) {
      out.h = (g - b) / d;
      if (out.h < 0.0f) out.h += 6.0f;
    } else if (mx == g) {
      out.h = (b - r) / d + 2.0f;
    } else {
      out.h = (r - g) / d + 4.0f;
    }
  }
  return out;
}

void hsv_to_rgb(const Hsv& hsv, float& r, float& g, float& b) {
  const float c = hsv.v * hsv.s;
  const float m = hsv.v - c;
  const float x = c * (1.0f - std::fabs(std::fmod(hsv.h, 2.0f) - 1.0f));
  const int sector = std::clamp(static_cast<int>(std::floor(hsv.h)), 0, 5);
  float rr = 0, gg = 0, bb = 0;
  switch (sector) {
    case 0: rr = c, gg = x; break;
    case 1: rr = x, gg = c; break;
    case 2: gg = c, bb = x; break;
    case 3: gg = x, bb = c; break;
    case 4: rr = x, bb = c; break;
    default: rr = c, bb = x; break;
  }
  r = rr + m;
  g = gg + m;
  b = bb + m;
}

Image pad_rows(const Image& image, std::size_t top, std::size_t bottom) {
  Image out(image.height + top + bottom, image.width, image.channels);
  std::copy(image.pixels.begin(), image.pixels.end(), out.pixels.begin() + top * image.width * image.channels);
  return out;
}

}  // namespace atn
