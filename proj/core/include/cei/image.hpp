#pragma once

// 8-bit PGM/PPM I/O and label generators.
//
// Images are (1, channels, height, width) float tensors with values in [0, 1].

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "cei/random.hpp"
#include "cei/tensor.hpp"

namespace cei {

using Image = Tensor;

class ImageError : public std::runtime_error {
 public:
  enum class Kind { Io, Malformed, Truncated, Unsupported };
  ImageError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Binary PGM (P5) or PPM (P6) with maxval <= 255.
Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& source = "<memory>");
Image read_image(const std::filesystem::path& path);

/// Values are clamped to [0, 1] and rounded to 8 bits. 1 channel -> P5, 3 -> P6.
std::vector<std::uint8_t> encode_pnm(const Image& img);
void write_image(const Image& img, const std::filesystem::path& path);

/// Checks a (1, 1|3, H, W) shape with positive extents.
void require_image_shape(const Tensor& t, const char* what);

/// Normalized discrete Gaussian taps for offsets -r..r, r = ceil(3 sigma).
std::vector<double> gaussian_kernel(double sigma);

/// Separable Gaussian blur with edge replication. sigma = 0 returns the input.
Image gaussian_blur(const Image& img, double sigma);

/// Pads right/bottom by edge replication to even extents.
Image pad_to_even(const Image& img);
/// Crops to the top-left (h, w) region.
Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w);
/// Horizontal concatenation of equally tall images, with a gap of `gap` pixels of value `fill`.
Image tile_horizontal(const std::vector<Image>& tiles, std::size_t gap, float fill);

/// Burns a short label (digits, letters, '.', '-', '=', ' ') into the image with a 5x7 bitmap font.
void draw_text(Image& img, std::size_t x, std::size_t y, const std::string& text, float value);

/// Grayscale test image: flat regions and smooth ramps with fine texture on top.
Image synthetic_image(std::size_t height, std::size_t width, Rng& rng);

}  // namespace cei
