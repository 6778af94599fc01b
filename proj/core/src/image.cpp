#include "cei/image.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

namespace cei {

namespace {

class HeaderReader {
 public:
  HeaderReader(const std::vector<std::uint8_t>& bytes, const std::string& source) : b_(bytes), src_(source) {}

  std::size_t number(const char* field) {
    skip_space_and_comments();
    if (pos_ >= b_.size() || !std::isdigit(b_[pos_])) {
      throw ImageError(ImageError::Kind::Malformed, src_ + ": malformed header, expected " + field);
    }
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + static_cast<std::size_t>(b_[pos_] - '0');
      if (v > (1u << 24)) throw ImageError(ImageError::Kind::Malformed, src_ + ": header " + field + " too large");
      ++pos_;
    }
    return v;
  }

  /// Exactly one whitespace byte separates the header from the raster.
  std::size_t raster_start() {
    if (pos_ >= b_.size() || !std::isspace(b_[pos_])) {
      throw ImageError(ImageError::Kind::Malformed, src_ + ": malformed header, no separator before pixel data");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& b_;
  const std::string& src_;
  std::size_t pos_ = 2;
};

std::uint8_t quantize(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

}  // namespace

void require_image_shape(const Tensor& t, const char* what) {
  const Shape& s = t.shape();
  if (s.n != 1 || (s.c != 1 && s.c != 3) || s.h == 0 || s.w == 0) {
    throw ShapeError(std::string(what) + ": expected an image of shape (1, 1|3, H, W), got " + to_string(s));
  }
}

Image decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& source) {
  if (bytes.size() < 2 || bytes[0] != 'P') {
    throw ImageError(ImageError::Kind::Malformed, source + ": not a PGM/PPM file (bad magic)");
  }
  std::size_t channels = 0;
  if (bytes[1] == '5') {
    channels = 1;
  } else if (bytes[1] == '6') {
    channels = 3;
  } else {
    throw ImageError(ImageError::Kind::Unsupported,
                     source + ": only binary PGM (P5) and PPM (P6) are supported, got P" + static_cast<char>(bytes[1]));
  }
  HeaderReader hdr(bytes, source);
  const std::size_t w = hdr.number("width");
  const std::size_t h = hdr.number("height");
  const std::size_t maxval = hdr.number("maxval");
  if (w == 0 || h == 0) throw ImageError(ImageError::Kind::Malformed, source + ": zero image extent");
  if (maxval == 0 || maxval > 255) {
    throw ImageError(ImageError::Kind::Unsupported, source + ": maxval " + std::to_string(maxval) + " (only 8-bit)");
  }
  const std::size_t start = hdr.raster_start();
  const std::size_t avail = bytes.size() - std::min(bytes.size(), start);
  // Divide rather than multiply so absurd header extents cannot overflow.
  if (w > avail || h > avail / (w * channels)) {
    throw ImageError(ImageError::Kind::Truncated, source + ": truncated pixel data for a " + std::to_string(w) + "x" +
                                                      std::to_string(h) + " image, found " + std::to_string(avail) +
                                                      " bytes");
  }
  const std::size_t need = w * h * channels;
  if (bytes.size() < start + need) {
    throw ImageError(ImageError::Kind::Truncated, source + ": truncated pixel data, expected " + std::to_string(need) +
                                                      " bytes, found " + std::to_string(bytes.size() - std::min(bytes.size(), start)));
  }
  Image img(Shape{1, channels, h, w});
  const auto denom = static_cast<float>(maxval);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        img.at(0, c, y, x) = static_cast<float>(bytes[start + (y * w + x) * channels + c]) / denom;
      }
    }
  }
  return img;
}

Image read_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError(ImageError::Kind::Io, path.string() + ": cannot open for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pnm(bytes, path.string());
}

std::vector<std::uint8_t> encode_pnm(const Image& img) {
  require_image_shape(img, "encode_pnm");
  const Shape& s = img.shape();
  const std::string header = (s.c == 1 ? "P5\n" : "P6\n") + std::to_string(s.w) + " " + std::to_string(s.h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + s.numel());
  for (std::size_t y = 0; y < s.h; ++y) {
    for (std::size_t x = 0; x < s.w; ++x) {
      for (std::size_t c = 0; c < s.c; ++c) out.push_back(quantize(img.at(0, c, y, x)));
    }
  }
  return out;
}

void write_image(const Image& img, const std::filesystem::path& path) {
  const auto bytes = encode_pnm(img);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError(ImageError::Kind::Io, path.string() + ": cannot open for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ImageError(ImageError::Kind::Io, path.string() + ": write failed");
}

std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("gaussian sigma must be finite and >= 0");
  if (sigma == 0.0) return {1.0};
  const auto r = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double total = 0.0;
  for (std::ptrdiff_t i = -r; i <= r; ++i) {
    const double v = std::exp(-static_cast<double>(i * i) / (2.0 * sigma * sigma));
    k[static_cast<std::size_t>(i + r)] = v;
    total += v;
  }
  for (double& v : k) v /= total;
  return k;
}

Image gaussian_blur(const Image& img, double sigma) {
  const auto k = gaussian_kernel(sigma);
  if (k.size() == 1) return img;
  const Shape& s = img.shape();
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  const auto H = static_cast<std::ptrdiff_t>(s.h);
  const auto W = static_cast<std::ptrdiff_t>(s.w);
  Image out(s);
  std::vector<double> tmp(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      auto src = img.plane(n, c);
      auto dst = out.plane(n, c);
      for (std::ptrdiff_t y = 0; y < H; ++y) {
        for (std::ptrdiff_t x = 0; x < W; ++x) {
          double acc = 0.0;
          for (std::ptrdiff_t i = -r; i <= r; ++i) {
            const std::ptrdiff_t xx = std::clamp<std::ptrdiff_t>(x + i, 0, W - 1);
            acc += k[static_cast<std::size_t>(i + r)] * static_cast<double>(src[static_cast<std::size_t>(y * W + xx)]);
          }
          tmp[static_cast<std::size_t>(y * W + x)] = acc;
        }
      }
      for (std::ptrdiff_t y = 0; y < H; ++y) {
        for (std::ptrdiff_t x = 0; x < W; ++x) {
          double acc = 0.0;
          for (std::ptrdiff_t i = -r; i <= r; ++i) {
            const std::ptrdiff_t yy = std::clamp<std::ptrdiff_t>(y + i, 0, H - 1);
            acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(yy * W + x)];
          }
          dst[static_cast<std::size_t>(y * W + x)] = static_cast<float>(acc);
        }
      }
    }
  }
  return out;
}

Image pad_to_even(const Image& img) {
  const Shape& s = img.shape();
  const std::size_t h = s.h + s.h % 2;
  const std::size_t w = s.w + s.w % 2;
  if (h == s.h && w == s.w) return img;
  Image out(Shape{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          out.at(n, c, y, x) = img.at(n, c, std::min(y, s.h - 1), std::min(x, s.w - 1));
        }
      }
    }
  }
  return out;
}

Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  const Shape& s = img.shape();
  if (y0 + h > s.h || x0 + w > s.w) {
    throw ShapeError("crop of " + std::to_string(h) + "x" + std::to_string(w) + " at (" + std::to_string(y0) + "," +
                     std::to_string(x0) + ") exceeds image " + to_string(s));
  }
  Image out(Shape{s.n, s.c, h, w});
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < h; ++y) {
        const float* src = &img.at(n, c, y0 + y, x0);
        std::copy(src, src + w, &out.at(n, c, y, 0));
      }
    }
  }
  return out;
}

Image tile_horizontal(const std::vector<Image>& tiles, std::size_t gap, float fill) {
  if (tiles.empty()) throw std::invalid_argument("tile_horizontal: no tiles");
  const Shape& first = tiles.front().shape();
  std::size_t width = 0;
  for (const auto& t : tiles) {
    const Shape& s = t.shape();
    if (s.n != 1 || s.c != first.c || s.h != first.h) {
      throw ShapeError("tile_horizontal: tile " + to_string(s) + " does not match " + to_string(first));
    }
    width += s.w;
  }
  width += gap * (tiles.size() - 1);
  Image out(Shape{1, first.c, first.h, width}, fill);
  std::size_t x0 = 0;
  for (const auto& t : tiles) {
    for (std::size_t c = 0; c < first.c; ++c) {
      for (std::size_t y = 0; y < first.h; ++y) {
        const float* src = &t.at(0, c, y, 0);
        std::copy(src, src + t.shape().w, &out.at(0, c, y, x0));
      }
    }
    x0 += t.shape().w + gap;
  }
  return out;
}

namespace {

struct Glyph {
  char ch;
  std::array<std::uint8_t, 7> rows;
};

// 5x7 glyphs, most significant of the low five bits is the leftmost column.
constexpr std::array<Glyph, 27> kFont{{
    {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}},
    {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}},
    {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
    {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}},
    {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
    {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}},
    {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
    {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}},
    {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
    {'.', {0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C}},
    {'-', {0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00}},
    {'=', {0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00}},
    {'A', {0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11}},
    {'B', {0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E}},
    {'C', {0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E}},
    {'D', {0x1C, 0x12, 0x11, 0x11, 0x11, 0x12, 0x1C}},
    {'E', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F}},
    {'F', {0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x10}},
    {'G', {0x0E, 0x11, 0x10, 0x17, 0x11, 0x11, 0x0F}},
    {'I', {0x0E, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
    {'M', {0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11}},
    {'N', {0x11, 0x11, 0x19, 0x15, 0x13, 0x11, 0x11}},
    {'O', {0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E}},
    {'R', {0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11}},
    {'S', {0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E}},
    {'T', {0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04}},
}};

const Glyph* find_glyph(char ch) {
  const char up = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  for (const auto& g : kFont) {
    if (g.ch == up) return &g;
  }
  return nullptr;
}

}  // namespace

void draw_text(Image& img, std::size_t x, std::size_t y, const std::string& text, float value) {
  const Shape& s = img.shape();
  for (const char ch : text) {
    if (const Glyph* g = find_glyph(ch)) {
      for (std::size_t row = 0; row < 7; ++row) {
        for (std::size_t col = 0; col < 5; ++col) {
          if (!((g->rows[row] >> (4 - col)) & 1u)) continue;
          const std::size_t py = y + row, px = x + col;
          if (py >= s.h || px >= s.w) continue;
          for (std::size_t c = 0; c < s.c; ++c) img.at(0, c, py, px) = value;
        }
      }
    }
    x += 6;
  }
}

Image synthetic_image(std::size_t height, std::size_t width, Rng& rng) {
  Image img(Shape{1, 1, height, width});
  const double H = static_cast<double>(height), W = static_cast<double>(width);

  // Structure: a tilted ramp plus a few flat rectangles and disks.
  const double gx = rng.uniform(-0.3, 0.3), gy = rng.uniform(-0.3, 0.3), base = rng.uniform(0.3, 0.7);
  std::vector<double> layer(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      layer[y * width + x] = base + gx * (static_cast<double>(x) / W - 0.5) + gy * (static_cast<double>(y) / H - 0.5);
    }
  }
  const std::size_t shapes = 3 + rng.index(4);
  for (std::size_t k = 0; k < shapes; ++k) {
    const double level = rng.uniform(0.15, 0.85);
    const double cx = rng.uniform(0.0, W), cy = rng.uniform(0.0, H);
    const double rx = rng.uniform(0.1, 0.35) * W, ry = rng.uniform(0.1, 0.35) * H;
    const bool disk = rng.bernoulli(0.5);
    for (std::size_t y = 0; y < height; ++y) {
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = (static_cast<double>(x) - cx) / rx, dy = (static_cast<double>(y) - cy) / ry;
        const bool inside = disk ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside) layer[y * width + x] = level;
      }
    }
  }

  // Texture: oriented stripes of random period, plus light noise.
  const double amp = rng.uniform(0.04, 0.1);
  const double period = rng.uniform(2.5, 6.0);
  const double theta = rng.uniform(0.0, std::numbers::pi);
  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  const double fx = std::cos(theta) * 2.0 * std::numbers::pi / period;
  const double fy = std::sin(theta) * 2.0 * std::numbers::pi / period;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double t = amp * std::sin(fx * static_cast<double>(x) + fy * static_cast<double>(y) + phase);
      const double v = layer[y * width + x] + t + 0.02 * rng.normal();
      // Quantize so the in-memory image matches what a PGM round trip gives.
      img.at(0, 0, y, x) = static_cast<float>(quantize(static_cast<float>(v))) / 255.0f;
    }
  }
  return img;
}

}  // namespace cei
