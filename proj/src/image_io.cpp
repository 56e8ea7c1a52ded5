#include "robustlens/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

namespace robustlens {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("image: cannot open '" + path.string() + "'");
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

GrayImage decode_png(const std::string& bytes, const std::filesystem::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("image: corrupt PNG stream '" + path.string() + "': " + msg);
  }
  constexpr png_uint_32 kRejected = PNG_FORMAT_FLAG_COLOR | PNG_FORMAT_FLAG_ALPHA | PNG_FORMAT_FLAG_LINEAR;
  if (img.format & kRejected) {
    png_image_free(&img);
    throw DataError("image: unsupported PNG format in '" + path.string() +
                    "' (expected 8-bit grayscale)");
  }
  img.format = PNG_FORMAT_GRAY;
  GrayImage out;
  out.height = img.height;
  out.width = img.width;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("image: corrupt PNG stream '" + path.string() + "': " + msg);
  }
  return out;
}

GrayImage decode_pgm(const std::string& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  auto fail = [&](const std::string& what) -> DataError {
    return DataError("image: corrupt PGM stream '" + path.string() + "': " + what);
  };
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      if (++digits > 9) throw fail("header value too large");
    }
    if (digits == 0) throw fail("malformed header");
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0) throw fail("non-positive dimensions");
  if (maxval <= 0 || maxval > 255) {
    throw DataError("image: unsupported PGM maxval " + std::to_string(maxval) + " in '" +
                    path.string() + "' (expected 8-bit)");
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) throw fail("malformed header");
  ++pos;
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() - pos < n) throw fail("truncated pixel data");
  GrayImage out;
  out.height = static_cast<std::size_t>(h);
  out.width = static_cast<std::size_t>(w);
  out.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                    bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  if (maxval != 255) {
    for (auto& p : out.pixels) {
      p = static_cast<std::uint8_t>(std::lround(std::min<long>(p, maxval) * 255.0 / maxval));
    }
  }
  return out;
}

void write_png_impl(const std::filesystem::path& path, std::size_t h, std::size_t w,
                    png_uint_32 format, const std::uint8_t* data) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, data, 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw DataError("image: cannot write '" + path.string() + "': " + msg);
  }
}

}  // namespace

GrayImage read_gray_image(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  static constexpr unsigned char kPngSig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSig, 8) == 0) return decode_png(bytes, path);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return decode_pgm(bytes, path);
  throw DataError("image: unsupported format '" + path.string() + "' (expected PNG or binary PGM)");
}

void write_png(const std::filesystem::path& path, const GrayImage& image) {
  write_png_impl(path, image.height, image.width, PNG_FORMAT_GRAY, image.pixels.data());
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  write_png_impl(path, image.height, image.width, PNG_FORMAT_RGB, image.pixels.data());
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("image: cannot write '" + path.string() + "'");
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
}

std::vector<double> resize_plane_bilinear(std::span<const double> plane, std::size_t in_h, std::size_t in_w,
                                          std::size_t height, std::size_t width) {
  if (in_h == 0 || in_w == 0 || height == 0 || width == 0 || plane.size() != in_h * in_w) {
    throw ShapeError("resize: invalid plane extents");
  }
  std::vector<double> out(height * width);
  const double sy = static_cast<double>(in_h) / static_cast<double>(height);
  const double sx = static_cast<double>(in_w) / static_cast<double>(width);
  const double ymax = static_cast<double>(in_h - 1);
  const double xmax = static_cast<double>(in_w - 1);
  for (std::size_t i = 0; i < height; ++i) {
    const double y = std::clamp((static_cast<double>(i) + 0.5) * sy - 0.5, 0.0, ymax);
    const std::size_t y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < width; ++j) {
      const double x = std::clamp((static_cast<double>(j) + 0.5) * sx - 0.5, 0.0, xmax);
      const std::size_t x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double fx = x - static_cast<double>(x0);
      auto px = [&](std::size_t yy, std::size_t xx) { return plane[yy * in_w + xx]; };
      out[i * width + j] = (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x1)) +
                           fy * ((1 - fx) * px(y1, x0) + fx * px(y1, x1));
    }
  }
  return out;
}

std::vector<double> resize_bilinear(const GrayImage& image, std::size_t height, std::size_t width) {
  if (image.height == 0 || image.width == 0 || height == 0 || width == 0) {
    throw DataError("image: cannot resize an empty image");
  }
  const std::vector<double> plane(image.pixels.begin(), image.pixels.end());
  return resize_plane_bilinear(plane, image.height, image.width, height, width);
}

Tensor<float> decode_image(const std::filesystem::path& path, std::size_t height, std::size_t width,
                           double rescale) {
  const GrayImage img = read_gray_image(path);
  const std::vector<double> resized = resize_bilinear(img, height, width);
  Tensor<float> out({1, height, width});
  for (std::size_t i = 0; i < resized.size(); ++i) {
    out[i] = std::clamp(static_cast<float>(resized[i] * rescale), 0.0f, 1.0f);
  }
  return out;
}

Tensor<float> decode_mask(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  const GrayImage img = read_gray_image(path);
  Tensor<float> out({height, width});
  for (std::size_t i = 0; i < height; ++i) {
    const std::size_t y = std::min(img.height - 1, (2 * i + 1) * img.height / (2 * height));
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t x = std::min(img.width - 1, (2 * j + 1) * img.width / (2 * width));
      out[i * width + j] = img.pixels[y * img.width + x] >= 128 ? 1.0f : 0.0f;
    }
  }
  return out;
}

GrayImage to_gray_image(const Tensor<float>& image) {
  const Shape& s = image.shape();
  if (!(s.size() == 2 || (s.size() == 3 && s[0] == 1))) {
    throw ShapeError("image: expected H x W or 1 x H x W, got " + shape_str(s));
  }
  GrayImage out;
  out.height = s[s.size() - 2];
  out.width = s[s.size() - 1];
  out.pixels.resize(image.numel());
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const float v = std::clamp(image[i], 0.0f, 1.0f);
    out.pixels[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

}  // namespace robustlens
