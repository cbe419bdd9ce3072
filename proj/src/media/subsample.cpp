#include <algorithm>
#include <cmath>
#include <string>

#include "gaussmpm/error.hpp"
#include "gaussmpm/media_clients.hpp"

namespace gaussmpm {

namespace {

constexpr int kThumb = 64;

// Box-filtered luma thumbnail.
std::vector<double> thumbnail(const Image& img) {
  std::vector<double> out(kThumb * kThumb, 0.0);
  if (img.empty()) return out;
  for (int ty = 0; ty < kThumb; ++ty) {
    const int y0 = ty * img.height / kThumb;
    const int y1 = std::max(y0 + 1, (ty + 1) * img.height / kThumb);
    for (int tx = 0; tx < kThumb; ++tx) {
      const int x0 = tx * img.width / kThumb;
      const int x1 = std::max(x0 + 1, (tx + 1) * img.width / kThumb);
      double sum = 0.0;
      int n = 0;
      for (int y = y0; y < std::min(y1, img.height); ++y) {
        for (int x = x0; x < std::min(x1, img.width); ++x) {
          const std::uint8_t* p = img.pixel(x, y);
          sum += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
          ++n;
        }
      }
      out[static_cast<std::size_t>(ty * kThumb + tx)] = n ? sum / n : 0.0;
    }
  }
  return out;
}

}  // namespace

std::vector<double> motion_profile(const std::vector<Image>& frames) {
  std::vector<double> d;
  if (frames.size() < 2) return d;
  std::vector<double> prev = thumbnail(frames[0]);
  for (std::size_t f = 1; f < frames.size(); ++f) {
    std::vector<double> cur = thumbnail(frames[f]);
    double sum = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) sum += std::abs(cur[i] - prev[i]);
    d.push_back(sum / static_cast<double>(cur.size()));
    prev = std::move(cur);
  }
  return d;
}

std::vector<std::size_t> subsample_indices(const std::vector<Image>& frames, std::size_t k) {
  const std::size_t n = frames.size();
  if (k < 2) throw ParameterError("subsampling needs k >= 2");
  if (k > n) throw ParameterError("cannot pick " + std::to_string(k) + " frames out of " + std::to_string(n));
  std::vector<std::size_t> picked;
  if (k == n) {
    for (std::size_t i = 0; i < n; ++i) picked.push_back(i);
    return picked;
  }
  const std::vector<double> d = motion_profile(frames);
  std::vector<double> cumulative(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) cumulative[i] = cumulative[i - 1] + d[i - 1];
  const double total = cumulative.back();

  picked.push_back(0);
  for (std::size_t m = 1; m + 1 < k; ++m) {
    // leave room for the remaining picks and the last frame
    const std::size_t lo = picked.back() + 1;
    const std::size_t hi = n - 1 - (k - 1 - m);
    std::size_t best = lo;
    if (total > 0.0) {
      const double target = total * static_cast<double>(m) / static_cast<double>(k - 1);
      double best_err = std::abs(cumulative[lo] - target);
      for (std::size_t j = lo + 1; j <= hi; ++j) {
        const double err = std::abs(cumulative[j] - target);
        if (err < best_err) {
          best_err = err;
          best = j;
        }
      }
    } else {
      const double ideal = static_cast<double>(m) * static_cast<double>(n - 1) / static_cast<double>(k - 1);
      best = std::clamp(static_cast<std::size_t>(std::llround(ideal)), lo, hi);
    }
    picked.push_back(best);
  }
  picked.push_back(n - 1);
  return picked;
}

std::vector<Image> subsample_frames(const std::vector<Image>& frames, std::size_t k) {
  std::vector<Image> out;
  for (std::size_t i : subsample_indices(frames, k)) out.push_back(frames[i]);
  return out;
}

}  // namespace gaussmpm
