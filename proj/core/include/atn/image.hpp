#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "atn/errors.hpp"

namespace atn {

// Interleaved H x W x C float image, values nominally in [0, 1].
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c = 3, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  float& at(std::size_t r, std::size_t c, std::size_t ch) { return pixels[(r * width + c) * channels + ch]; }
  float at(std::size_t r, std::size_t c, std::size_t ch) const { return pixels[(r * width + c) * channels + ch]; }

  friend bool operator==(const Image&, const Image&) = default;
};

Image image_from_bytes(std::span<const std::uint8_t> bytes, std::size_t h, std::size_t w, std::size_t c = 3);
std::vector<std::uint8_t> image_to_bytes(const Image& image);

// Rec. 601 luma, single channel.
Image grayscale(const Image& rgb);

Image mirror_horizontal(const Image& image);

struct Hsv {
  float h, s, v;  // h in [0, 6), s and v in [0, 1]
};
Hsv rgb_to_hsv(float r, float g, float b);
void hsv_to_rgb(const Hsv& hsv, float& r, float& g, float& b);

// Zero rows added above and below.
Image pad_rows(const Image& image, std::size_t top, std::size_t bottom);

}  // namespace atn
