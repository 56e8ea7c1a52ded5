#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "robustlens/tensor.hpp"

namespace robustlens {

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // row-major
};

/// Interleaved 8-bit RGB.
struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

/// Reads an 8-bit grayscale PNG or binary PGM (P5), detected by signature.
/// Throws DataError on unsupported formats or corrupt streams.
GrayImage read_gray_image(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const GrayImage& image);
void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

/// Bilinear resize of a row-major plane with half-pixel centers and edge
/// clamping.
std::vector<double> resize_plane_bilinear(std::span<const double> plane, std::size_t in_h, std::size_t in_w,
                                          std::size_t height, std::size_t width);

/// Bilinear resize with half-pixel centers and edge clamping; returns values
/// on the original 0..255 scale.
std::vector<double> resize_bilinear(const GrayImage& image, std::size_t height, std::size_t width);

/// Decodes to a 1 x H x W tensor: bilinear resize, multiply by `rescale`,
/// clamp to [0, 1].
Tensor<float> decode_image(const std::filesystem::path& path, std::size_t height, std::size_t width,
                           double rescale = 1.0 / 255.0);

/// Decodes a mask to H x W in {0, 1} (nearest-neighbor resize, >= 128 is set).
Tensor<float> decode_mask(const std::filesystem::path& path, std::size_t height, std::size_t width);

/// Quantizes an H x W (or 1 x H x W) tensor in [0, 1] to 8 bits.
GrayImage to_gray_image(const Tensor<float>& image);

}  // namespace robustlens
