#pragma once

// Grayscale float images in [0, 1] and binary PGM (P5) I/O.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gombf/core.hpp"
#include "gombf/io.hpp"

namespace gombf {

class GrayImage {
 public:
  GrayImage() = default;
  GrayImage(int width, int height, float fill = 0.0f)
      : width_(width), height_(height),
        pixels_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {
    if (width < 1 || height < 1) fail(ErrorKind::kConfig, "image dimensions must be positive");
  }

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return pixels_.empty(); }

  float& at(int x, int y) { return pixels_[index(x, y)]; }
  float at(int x, int y) const { return pixels_[index(x, y)]; }

  /// Nearest pixel with coordinates clamped to the image bounds.
  float sample_nearest(double x, double y) const {
    const int xi = std::clamp(static_cast<int>(std::lround(x)), 0, width_ - 1);
    const int yi = std::clamp(static_cast<int>(std::lround(y)), 0, height_ - 1);
    return pixels_[index(xi, yi)];
  }

  const std::vector<float>& pixels() const { return pixels_; }
  std::vector<float>& pixels() { return pixels_; }

  /// Round-trips through 8-bit storage.
  GrayImage quantized() const {
    GrayImage q = *this;
    for (auto& p : q.pixels_) p = static_cast<float>(to_byte(p)) / 255.0f;
    return q;
  }

  static std::uint8_t to_byte(float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  }

  bool operator==(const GrayImage&) const = default;

 private:
  std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(x);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<float> pixels_;
};

inline std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width()) + ' ' + std::to_string(img.height()) +
                    "\n255\n";
  out.reserve(out.size() + img.pixels().size());
  for (float p : img.pixels()) out.push_back(static_cast<char>(GrayImage::to_byte(p)));
  return out;
}

inline void write_pgm(const GrayImage& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_pgm(img));
}

inline GrayImage read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open '" + path.string() + "'");
  auto next_token = [&]() {
    std::string tok;
    while (in >> tok) {
      if (tok[0] == '#') {
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      return tok;
    }
    fail(ErrorKind::kIntegrity, "truncated PGM header in '" + path.string() + "'");
  };
  if (next_token() != "P5") fail(ErrorKind::kIntegrity, "'" + path.string() + "' is not a binary PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(next_token());
    h = std::stoi(next_token());
    maxval = std::stoi(next_token());
  } catch (const std::logic_error&) {
    fail(ErrorKind::kIntegrity, "malformed PGM header in '" + path.string() + "'");
  }
  if (w < 1 || h < 1 || maxval != 255)
    fail(ErrorKind::kIntegrity, "unsupported PGM geometry or depth in '" + path.string() + "'");
  in.get();
  std::vector<char> bytes(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size()))
    fail(ErrorKind::kIntegrity, "truncated PGM pixel data in '" + path.string() + "'");
  GrayImage img(w, h);
  for (std::size_t i = 0; i < bytes.size(); ++i)
    img.pixels()[i] = static_cast<float>(static_cast<unsigned char>(bytes[i])) / 255.0f;
  return img;
}

}  // namespace gombf
