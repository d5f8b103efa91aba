#include "halsie/image.hpp"

#include <cctype>
#include <fstream>
#include <istream>

#include "halsie/errors.hpp"

namespace halsie {
namespace {

// Reads the next whitespace-delimited header token, skipping `#` comments.
std::string next_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      if (!tok.empty()) break;
    } else {
      tok.push_back(static_cast<char>(c));
    }
    c = in.get();
  }
  return tok;
}

int header_int(std::istream& in, const std::string& path) {
  const auto tok = next_token(in);
  try {
    return std::stoi(tok);
  } catch (const std::logic_error&) {
    throw IoError("malformed image header in '" + path + "'");
  }
}

void read_header(std::istream& in, const std::string& path, const char* magic, int& w, int& h) {
  if (next_token(in) != magic) throw IoError("'" + path + "' is not a " + magic + " image");
  w = header_int(in, path);
  h = header_int(in, path);
  const int maxval = header_int(in, path);
  if (w <= 0 || h <= 0) throw IoError("bad image dimensions in '" + path + "'");
  if (maxval != 255) throw IoError("only maxval 255 supported in '" + path + "'");
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  int w = 0, h = 0;
  read_header(in, path, "P5", w, h);
  GrayImage img(w, h);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw IoError("truncated image '" + path + "'");
  return img;
}

void write_pgm(const std::string& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path + "'");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

void write_ppm(const std::string& path, const RgbImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write image '" + path + "'");
  out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.rgb.data()), static_cast<std::streamsize>(image.rgb.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

RgbImage read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  int w = 0, h = 0;
  read_header(in, path, "P6", w, h);
  RgbImage img{w, h, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * 3)};
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw IoError("truncated image '" + path + "'");
  return img;
}

Rgb palette_color(std::uint8_t class_id) {
  static constexpr std::array<Rgb, 6> legend{{
      {128, 128, 128},  // background
      {0, 176, 0},      // vegetation
      {0, 0, 255},      // vehicle
      {128, 0, 255},    // street
      {255, 255, 0},    // object
      {255, 0, 0},      // person
  }};
  if (class_id == 255) return {0, 0, 0};
  if (class_id < legend.size()) return legend[class_id];
  // Odd multipliers are bijections mod 256, so the red channel alone keeps ids apart.
  const unsigned id = class_id;
  return {static_cast<std::uint8_t>((id * 37u) % 256u), static_cast<std::uint8_t>((id * 101u + 64u) % 256u),
          static_cast<std::uint8_t>((id * 53u + 32u) % 256u)};
}

RgbImage colorize(const GrayImage& class_map) {
  RgbImage out{class_map.width, class_map.height, std::vector<std::uint8_t>(class_map.pixels.size() * 3)};
  for (std::size_t i = 0; i < class_map.pixels.size(); ++i) {
    const auto c = palette_color(class_map.pixels[i]);
    out.rgb[3 * i] = c[0];
    out.rgb[3 * i + 1] = c[1];
    out.rgb[3 * i + 2] = c[2];
  }
  return out;
}

}  // namespace halsie
