#pragma once

#include <cstddef>
#include <vector>

namespace chvit {

/// C x H x W sample stored channel-major (CHW); channel ids are positional.
struct MultiChannelImage {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;

  MultiChannelImage() = default;
  MultiChannelImage(std::size_t c, std::size_t h, std::size_t w)
      : channels(c), height(h), width(w), pixels(c * h * w, 0.0f) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }
  std::size_t plane() const { return height * width; }

  bool operator==(const MultiChannelImage&) const = default;
};

}  // namespace chvit
