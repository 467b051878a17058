#include "physiogait/rpimage.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace physiogait {

std::vector<std::vector<double>> modified_rp_matrix(
    const std::vector<double>& signal) {
  const std::size_t n = signal.size();
  if (n < 2) fail(ErrorCode::SignalTooShort, "RP needs >= 2 samples");
  std::vector<std::vector<double>> m(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      m[i][j] = signal[i] - signal[j];
    }
  }
  return m;
}

namespace {

// Min-max normalized matrix flattened row-major; constant input maps to 0.5.
std::vector<double> normalized_rp(const std::vector<double>& signal) {
  const std::size_t n = signal.size();
  std::vector<double> flat(n * n);
  double mn = 1e300, mx = -1e300;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double v = signal[i] - signal[j];
      flat[i * n + j] = v;
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
  }
  if (mx == mn) {
    std::fill(flat.begin(), flat.end(), 0.5);
  } else {
    double range = mx - mn;
    for (double& v : flat) v = (v - mn) / range;
  }
  return flat;
}

// Bilinear resize with half-pixel centers: destination pixel (x, y) samples
// source coordinate ((x + 0.5) * sw/dw - 0.5, (y + 0.5) * sh/dh - 0.5).
void resize_bilinear(const std::vector<double>& src, std::size_t sn,
                     RpImage& image, int channel) {
  const double sx_scale = static_cast<double>(sn) / kRpWidth;
  const double sy_scale = static_cast<double>(sn) / kRpHeight;
  for (int y = 0; y < kRpHeight; ++y) {
    double fy = (y + 0.5) * sy_scale - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(sn - 1));
    std::size_t y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, sn - 1);
    double wy = fy - static_cast<double>(y0);
    for (int x = 0; x < kRpWidth; ++x) {
      double fx = (x + 0.5) * sx_scale - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(sn - 1));
      std::size_t x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, sn - 1);
      double wx = fx - static_cast<double>(x0);
      double top = src[y0 * sn + x0] * (1.0 - wx) + src[y0 * sn + x1] * wx;
      double bot = src[y1 * sn + x0] * (1.0 - wx) + src[y1 * sn + x1] * wx;
      image.at(channel, y, x) = static_cast<float>(top * (1.0 - wy) + bot * wy);
    }
  }
}

}  // namespace

RpImage encode_window(const std::vector<std::vector<double>>& signals,
                      const std::vector<Channel>& channels) {
  if (signals.size() != 1 && signals.size() != 3)
    fail(ErrorCode::InvalidArgument, "encode_window takes 1 or 3 signals");
  if (channels.size() != signals.size())
    fail(ErrorCode::InvalidArgument, "one channel tag per signal");
  for (const auto& s : signals) {
    if (s.size() < 16) fail(ErrorCode::SignalTooShort, "window under 16 samples");
    if (s.size() > 4096) fail(ErrorCode::SignalTooLong, "window over 4096 samples");
    for (double v : s) {
      if (!std::isfinite(v))
        fail(ErrorCode::NonFiniteSample, "non-finite sample in window");
    }
  }

  RpImage image;
  image.pixels.assign(3 * kRpHeight * kRpWidth, 0.0f);
  if (signals.size() == 3) {
    for (int c = 0; c < 3; ++c) {
      image.source_channels[c] = channels[c];
      auto flat = normalized_rp(signals[c]);
      resize_bilinear(flat, signals[c].size(), image, c);
    }
  } else {
    auto flat = normalized_rp(signals[0]);
    resize_bilinear(flat, signals[0].size(), image, 0);
    for (int c = 1; c < 3; ++c) {
      image.source_channels[c] = channels[0];
      std::memcpy(&image.pixels[c * kRpHeight * kRpWidth],
                  &image.pixels[0], sizeof(float) * kRpHeight * kRpWidth);
    }
    image.source_channels[0] = channels[0];
  }
  return image;
}

namespace {

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

void put_chunk(std::vector<unsigned char>& out, const char type[4],
               const std::vector<unsigned char>& payload) {
  put_u32(out, static_cast<std::uint32_t>(payload.size()));
  std::size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  std::uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + crc_start, static_cast<uInt>(4 + payload.size()));
  put_u32(out, crc);
}

}  // namespace

void write_png(const RpImage& image, const std::filesystem::path& path) {
  const int h = kRpHeight, w = kRpWidth;
  // Raw scanlines: filter byte 0 then RGB triples.
  std::vector<unsigned char> raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * w));
  for (int y = 0; y < h; ++y) {
    raw.push_back(0);
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        float p = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        raw.push_back(static_cast<unsigned char>(std::lround(255.0f * p)));
      }
    }
  }

  uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> z(zlen);
  if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()),
                6) != Z_OK)
    fail(ErrorCode::IoError, "PNG deflate failed");
  z.resize(zlen);

  std::vector<unsigned char> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<unsigned char> ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // color type: truecolor
  ihdr.push_back(0);   // compression
  ihdr.push_back(0);   // filter
  ihdr.push_back(0);   // interlace
  put_chunk(png, "IHDR", ihdr);
  put_chunk(png, "IDAT", z);
  put_chunk(png, "IEND", {});

  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorCode::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(png.data()),
            static_cast<std::streamsize>(png.size()));
}

}  // namespace physiogait
