#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace halsie {

// 8-bit single-channel raster; used for grayscale frames and class-id maps.
struct GrayImage {
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::int32_t w, std::int32_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  std::uint8_t& at(std::int32_t x, std::int32_t y) {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
  std::uint8_t at(std::int32_t x, std::int32_t y) const {
    return pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }

  friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

struct RgbImage {
  std::int32_t width = 0;
  std::int32_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved
};

// Binary PGM (P5, maxval 255).
GrayImage read_pgm(const std::string& path);
void write_pgm(const std::string& path, const GrayImage& image);

// Binary PPM (P6, maxval 255).
void write_ppm(const std::string& path, const RgbImage& image);
RgbImage read_ppm(const std::string& path);

using Rgb = std::array<std::uint8_t, 3>;

// Class id -> color. Ids 0..5 follow the driving-scene legend
// (background, vegetation, vehicle, street, object, person); 255 is black.
Rgb palette_color(std::uint8_t class_id);
RgbImage colorize(const GrayImage& class_map);

}  // namespace halsie
