#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "physiogait/core.hpp"

namespace physiogait {

constexpr int kRpHeight = 155;
constexpr int kRpWidth = 220;

/// 3-channel recurrence-plot image, row-major [channel][row][col],
/// every pixel in [0, 1].
struct RpImage {
  std::vector<float> pixels;  // 3 * kRpHeight * kRpWidth
  std::array<Channel, 3> source_channels{};

  float& at(int c, int y, int x) {
    return pixels[(c * kRpHeight + y) * kRpWidth + x];
  }
  float at(int c, int y, int x) const {
    return pixels[(c * kRpHeight + y) * kRpWidth + x];
  }
};

/// Signed unthresholded recurrence matrix M[i][j] = s[i] - s[j]. Unlike the
/// binary RP of classic RQA this keeps trajectory direction.
std::vector<std::vector<double>> modified_rp_matrix(
    const std::vector<double>& signal);

/// Encode 1 or 3 window signals as an RpImage: per signal build the modified
/// RP matrix, min-max normalize to [0,1] (an all-constant matrix maps to
/// 0.5), bilinear-resize to 155x220 with half-pixel centers. Three signals
/// fill the three channels in order; a single signal is replicated.
RpImage encode_window(const std::vector<std::vector<double>>& signals,
                      const std::vector<Channel>& channels);

/// 8-bit RGB debug export, pixel value = round(255 * p).
void write_png(const RpImage& image, const std::filesystem::path& path);

}  // namespace physiogait
