#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fusedmad {

class ImageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row-major interleaved image with float samples in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> pixels;

  Image() = default;
  Image(int w, int h, int c, double fill = 0.0) : width(w), height(h), channels(c) {
    if (w <= 0 || h <= 0) throw ImageError("image dimensions must be positive");
    if (c != 1 && c != 3) throw ImageError("image must have 1 or 3 channels");
    pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
  }

  double& at(int x, int y, int c = 0) { return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  double at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  bool same_geometry(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }

  bool in_range() const {
    return std::all_of(pixels.begin(), pixels.end(), [](double v) { return v >= 0.0 && v <= 1.0; });
  }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Bilinear sample with clamp-to-edge; integer coordinates return the stored sample exactly.
inline double sample_bilinear(const Image& img, double x, double y, int c) {
  x = std::clamp(x, 0.0, static_cast<double>(img.width - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.height - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double fx = x - x0;
  const double fy = y - y0;
  if (fx == 0.0 && fy == 0.0) return img.at(x0, y0, c);
  const int x1 = std::min(x0 + 1, img.width - 1);
  const int y1 = std::min(y0 + 1, img.height - 1);
  const double top = img.at(x0, y0, c) * (1.0 - fx) + img.at(x1, y0, c) * fx;
  const double bottom = img.at(x0, y1, c) * (1.0 - fx) + img.at(x1, y1, c) * fx;
  return std::clamp(top * (1.0 - fy) + bottom * fy, 0.0, 1.0);
}

/// ITU-R BT.601 luma.
inline Image to_grayscale(const Image& img) {
  if (img.channels == 1) return img;
  Image out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      out.at(x, y) = std::clamp(0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2), 0.0, 1.0);
    }
  }
  return out;
}

/// Area-average resampling to an arbitrary size.
inline Image resize_area(const Image& img, int width, int height) {
  Image out(width, height, img.channels);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int oy = 0; oy < height; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < width; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int iy = static_cast<int>(std::floor(y0)); iy < static_cast<int>(std::ceil(y1)) && iy < img.height; ++iy) {
          const double wy = std::min(y1, iy + 1.0) - std::max(y0, static_cast<double>(iy));
          if (wy <= 0.0) continue;
          for (int ix = static_cast<int>(std::floor(x0)); ix < static_cast<int>(std::ceil(x1)) && ix < img.width;
               ++ix) {
            const double wx = std::min(x1, ix + 1.0) - std::max(x0, static_cast<double>(ix));
            if (wx <= 0.0) continue;
            acc += wx * wy * img.at(ix, iy, c);
            wsum += wx * wy;
          }
        }
        out.at(ox, oy, c) = std::clamp(acc / wsum, 0.0, 1.0);
      }
    }
  }
  return out;
}

// Netpbm I/O: binary PGM (P5) and PPM (P6), maxval up to 65535.

namespace detail {

inline std::string next_pnm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

}  // namespace detail

inline Image decode_pnm(std::istream& in, const std::string& what = "image") {
  const std::string magic = detail::next_pnm_token(in);
  int channels;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw ImageError(what + ": unsupported format '" + magic + "' (expected binary PGM/PPM)");
  }
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(detail::next_pnm_token(in));
    h = std::stoi(detail::next_pnm_token(in));
    maxval = std::stoi(detail::next_pnm_token(in));
  } catch (const std::exception&) {
    throw ImageError(what + ": malformed header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw ImageError(what + ": invalid header values");
  Image img(w, h, channels);
  const bool wide = maxval > 255;
  for (double& v : img.pixels) {
    int raw;
    if (wide) {
      const int hi = in.get();
      const int lo = in.get();
      if (lo == EOF) throw ImageError(what + ": truncated pixel data");
      raw = (hi << 8) | lo;
    } else {
      raw = in.get();
      if (raw == EOF) throw ImageError(what + ": truncated pixel data");
    }
    v = std::min(1.0, static_cast<double>(raw) / maxval);
  }
  return img;
}

inline Image read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image '" + path + "'");
  return decode_pnm(in, path);
}

/// Writes 8-bit binary PGM/PPM; samples are rounded to the nearest of 256 levels.
inline void encode_pnm(std::ostream& out, const Image& img) {
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  for (double v : img.pixels) {
    const auto q = static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
    out.put(static_cast<char>(q));
  }
}

inline void write_pnm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ImageError("cannot open '" + path + "' for writing");
  encode_pnm(out, img);
  if (!out) throw ImageError("write failed for '" + path + "'");
}

}  // namespace fusedmad
