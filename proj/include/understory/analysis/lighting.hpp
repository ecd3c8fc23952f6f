// Copyright 2026 The Understory Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "understory/error.hpp"
#include "understory/image.hpp"

namespace understory {

struct ExposureHistogram {
  std::vector<double> counts;  ///< n_bins over luminance [0, 1]
  double bimodality_coefficient = 0.0;
  bool bimodal = false;
  std::vector<double> mode_positions;  ///< bin-center luminance of the dominant peaks, ascending
};

/// Bimodality coefficient (skewness^2 + 1) / kurtosis from population moments;
/// 0 for constant samples.
inline double bimodality_coefficient(const std::vector<double>& x) {
  if (x.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double m2 = 0.0, m3 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - mean;
    m2 += d * d;
    m3 += d * d * d;
    m4 += d * d * d * d;
  }
  const double n = static_cast<double>(x.size());
  m2 /= n;
  m3 /= n;
  m4 /= n;
  if (m2 <= 1e-18) return 0.0;
  const double skew = m3 / std::pow(m2, 1.5);
  const double kurt = m4 / (m2 * m2);
  return (skew * skew + 1.0) / kurt;
}

/// Luminance histogram of the image values as given. A histogram is flagged
/// bimodal when the bimodality coefficient exceeds 0.555 and the two highest
/// peaks of the lightly smoothed histogram lie at least n_bins/4 bins apart.
inline ExposureHistogram exposure_histogram(const Image& image, int n_bins) {
  if (n_bins < 16) throw InputError("n_bins must be at least 16");
  if (image.pixel_count() == 0) throw InputError("empty image");
  ExposureHistogram h;
  h.counts.assign(static_cast<std::size_t>(n_bins), 0.0);
  std::vector<double> lum(image.pixel_count());
  for (std::size_t i = 0; i < image.pixel_count(); ++i) {
    lum[i] = std::clamp(luminance(image.at(i)), 0.0, 1.0);
    const int b = std::min(n_bins - 1, static_cast<int>(lum[i] * n_bins));
    h.counts[b] += 1.0;
  }
  h.bimodality_coefficient = bimodality_coefficient(lum);

  constexpr double kKernel[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};
  std::vector<double> smooth(h.counts.size(), 0.0);
  for (int i = 0; i < n_bins; ++i)
    for (int k = -2; k <= 2; ++k) {
      const int j = i + k;
      if (j >= 0 && j < n_bins) smooth[i] += kKernel[k + 2] * h.counts[j];
    }
  const double top = *std::max_element(smooth.begin(), smooth.end());
  std::vector<int> peaks;
  for (int i = 0; i < n_bins; ++i) {
    const double left = i > 0 ? smooth[i - 1] : -1.0;
    const double right = i + 1 < n_bins ? smooth[i + 1] : -1.0;
    if (smooth[i] > left && smooth[i] >= right && smooth[i] >= 0.1 * top) peaks.push_back(i);
  }
  std::stable_sort(peaks.begin(), peaks.end(), [&](int a, int b) { return smooth[a] > smooth[b]; });
  if (peaks.size() > 2) peaks.resize(2);
  std::sort(peaks.begin(), peaks.end());
  for (int p : peaks) h.mode_positions.push_back((p + 0.5) / n_bins);
  const bool separated = peaks.size() == 2 && peaks[1] - peaks[0] >= n_bins / 4.0;
  h.bimodal = h.bimodality_coefficient > 0.555 && separated;
  return h;
}

}  // namespace understory
