#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <png.h>

#include "focuskit/error.hpp"
#include "focuskit/util.hpp"

namespace focuskit {

/// Row-major H x W x C float image with values in [0, 1].
struct ImageGrid {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> values;

  ImageGrid() = default;
  ImageGrid(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c), values(static_cast<std::size_t>(w) * h * c, fill) {
    if (w <= 0 || h <= 0 || c <= 0) {
      throw ValidationError(fmt::format("image dimensions must be positive, got {}x{}x{}", w, h, c));
    }
  }

  float& at(int x, int y, int c) { return values[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  float at(int x, int y, int c) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::string shape() const { return fmt::format("{}x{}x{}", width, height, channels); }

  bool operator==(const ImageGrid&) const = default;
};

inline void validate(const ImageGrid& img) {
  if (img.width <= 0 || img.height <= 0 || img.channels <= 0) {
    throw ValidationError("image dimensions must be positive, got " + img.shape());
  }
  if (img.values.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw ValidationError(fmt::format("image {} holds {} values", img.shape(), img.values.size()));
  }
  for (float v : img.values) {
    if (!(v >= 0.0f && v <= 1.0f)) throw ValidationError("image value outside [0,1]");
  }
}

namespace detail {

inline ImageGrid from_bytes(const unsigned char* px, int w, int h, int src_channels) {
  ImageGrid img(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const unsigned char* p = px + (static_cast<std::size_t>(y) * w + x) * src_channels;
      for (int c = 0; c < 3; ++c) {
        img.at(x, y, c) = static_cast<float>(p[src_channels == 1 ? 0 : c]) / 255.0f;
      }
    }
  }
  return img;
}

inline ImageGrid decode_png(const std::string& bytes, const std::string& origin) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw DecodeError(fmt::format("{}: {}", origin, image.message));
  }
  const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
  image.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DecodeError(fmt::format("{}: {}", origin, image.message));
  }
  return from_bytes(buf.data(), static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : 3);
}

// Binary PGM (P5) / PPM (P6), maxval 255.
inline ImageGrid decode_pnm(const std::string& bytes, const std::string& origin) {
  std::size_t pos = 2;
  auto next_int = [&]() -> int {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    int v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw DecodeError(origin + ": malformed PNM header");
    return v;
  };
  const int channels = bytes[1] == '5' ? 1 : 3;
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw DecodeError(origin + ": only 8-bit PNM supported");
  ++pos;
  const std::size_t need = static_cast<std::size_t>(w) * h * channels;
  if (w <= 0 || h <= 0 || bytes.size() < pos + need) throw DecodeError(origin + ": truncated PNM payload");
  return from_bytes(reinterpret_cast<const unsigned char*>(bytes.data() + pos), w, h, channels);
}

inline std::vector<unsigned char> to_bytes(const ImageGrid& img) {
  std::vector<unsigned char> out(img.values.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<unsigned char>(std::lround(std::clamp(img.values[i], 0.0f, 1.0f) * 255.0f));
  }
  return out;
}

}  // namespace detail

/// Loads an 8-bit PNG or binary PPM/PGM as float RGB; grayscale inputs are
/// replicated across three channels.
inline ImageGrid load_image(const fs::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() >= 8 && static_cast<unsigned char>(bytes[0]) == 0x89 && bytes.compare(1, 3, "PNG") == 0) {
    return detail::decode_png(bytes, path.string());
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    return detail::decode_pnm(bytes, path.string());
  }
  throw DecodeError(path.string() + ": unrecognised image format (expected PNG or binary PPM/PGM)");
}

inline void write_png(const ImageGrid& img, const fs::path& path) {
  if (img.channels != 1 && img.channels != 3) throw ValidationError("PNG export needs 1 or 3 channels");
  const auto bytes = detail::to_bytes(img);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, bytes.data(), 0, nullptr)) {
    throw IoError(fmt::format("PNG encode failed: {}", image.message));
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, bytes.data(), 0, nullptr)) {
    throw IoError(fmt::format("PNG encode failed: {}", image.message));
  }
  out.resize(size);
  write_file_atomic(path, out);
}

/// Bilinear resampling with pixel-centre alignment.
inline ImageGrid resize_bilinear(const ImageGrid& src, int w, int h) {
  if (src.width == w && src.height == h) return src;
  ImageGrid out(w, h, src.channels);
  const double sx = static_cast<double>(src.width) / w;
  const double sy = static_cast<double>(src.height) / h;
  for (int y = 0; y < h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < src.channels; ++c) {
        const double top = src.at(x0, y0, c) * (1 - tx) + src.at(x1, y0, c) * tx;
        const double bot = src.at(x0, y1, c) * (1 - tx) + src.at(x1, y1, c) * tx;
        out.at(x, y, c) = static_cast<float>(std::clamp(top * (1 - ty) + bot * ty, 0.0, 1.0));
      }
    }
  }
  return out;
}

}  // namespace focuskit
