#pragma once

// Independent reference computations and helpers shared by the unit tests and
// the acceptance runner. Oracles here are plain scalar loops written without
// reusing library code paths.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dsmsr/autograd.hpp"
#include "dsmsr/data/raster.hpp"
#include "dsmsr/tensor.hpp"

namespace dsmsr::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("dsmsr_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

template <typename T>
Tensor<T> random_tensor(Shape s, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<T> t(s);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(u(rng));
  return t;
}

inline RasterGrid random_grid(int h, int w, int c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  RasterGrid g(h, w, c);
  for (auto& v : g.values) v = u(rng);
  return g;
}

// Smooth image in (0, 1) so that bicubic resampling stays well inside range.
inline RasterGrid smooth_grid(int h, int w, int c, double phase = 0.0) {
  RasterGrid g(h, w, c);
  for (int k = 0; k < c; ++k)
    for (int r = 0; r < h; ++r)
      for (int q = 0; q < w; ++q) {
        g.at(k, r, q) = static_cast<float>(0.5 + 0.2 * std::sin(0.11 * r + 0.3 * k + phase) *
                                                     std::cos(0.07 * q - 0.2 * k + phase));
      }
  return g;
}

inline bool close_rel(double a, double b, double rel, double abs_floor = 0.0) {
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b)) + abs_floor;
}

// Loss oracles.

inline double oracle_huber(const std::vector<double>& a, const std::vector<double>& b, double eps) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::fabs(a[i] - b[i]);
    s += d <= eps ? 0.5 * d * d : eps * d - 0.5 * eps * eps;
  }
  return s / static_cast<double>(a.size());
}

inline double oracle_neg_log(double s) { return -std::log(std::max(s, 1e-7)); }

inline double oracle_adversarial(const std::vector<double>& fake) {
  double s = 0;
  for (double v : fake) s += oracle_neg_log(v);
  return s / static_cast<double>(fake.size());
}

inline double oracle_bce(double target, double s) {
  const double p = std::min(std::max(s, 1e-7), 1.0 - 1e-7);
  return -(target * std::log(p) + (1.0 - target) * std::log(1.0 - p));
}

// Mean BCE of the real batch against 1 - smoothing plus mean BCE of the fake
// batch against 0.
inline double oracle_discriminator(const std::vector<double>& real, const std::vector<double>& fake, double smooth) {
  double r = 0, f = 0;
  for (double v : real) r += oracle_bce(1.0 - smooth, v);
  for (double v : fake) f += oracle_bce(0.0, v);
  return r / static_cast<double>(real.size()) + f / static_cast<double>(fake.size());
}

// Mean over pixels of the squared difference of channel means.
template <typename T>
double oracle_channel_mean_ndsm(const Tensor<T>& sr, const Tensor<T>& hr) {
  double s = 0;
  for (int n = 0; n < sr.n(); ++n)
    for (int r = 0; r < sr.h(); ++r)
      for (int q = 0; q < sr.w(); ++q) {
        double ms = 0, mh = 0;
        for (int c = 0; c < sr.c(); ++c) {
          ms += sr.at(n, c, r, q);
          mh += hr.at(n, c, r, q);
        }
        const double d = (ms - mh) / sr.c();
        s += d * d;
      }
  return s / (static_cast<double>(sr.n()) * sr.h() * sr.w());
}

// Height-map stand-in: the channel mean, realized as a fixed 1x1 convolution
// so it runs through the graph like a real network.
template <typename T>
struct ChannelMeanNet {
  Var<T> forward(Graph<T>& g, const Var<T>& x) const {
    const int c = x->value.c();
    Tensor<T> w(Shape{1, c, 1, 1}, static_cast<T>(1.0 / c));
    return conv2d(g, x, g.input(w), g.input(Tensor<T>(Shape{1, 1, 1, 1})), 1, 0);
  }
};

// Metric oracles.

inline double oracle_psnr(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = s / static_cast<double>(a.size());
  return 10.0 * std::log10(1.0 / mse);
}

// SSIM evaluated window by window with explicit 2-D Gaussian weights.
inline double oracle_ssim(const RasterGrid& a, const RasterGrid& b, int win = 11, double sigma = 1.5) {
  std::vector<double> w2(static_cast<std::size_t>(win) * win);
  double tot = 0;
  const double c = (win - 1) / 2.0;
  for (int i = 0; i < win; ++i)
    for (int j = 0; j < win; ++j) {
      const double v = std::exp(-((i - c) * (i - c) + (j - c) * (j - c)) / (2 * sigma * sigma));
      w2[static_cast<std::size_t>(i) * win + j] = v;
      tot += v;
    }
  for (auto& v : w2) v /= tot;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double chan_sum = 0;
  for (int ch = 0; ch < a.channels; ++ch) {
    double sum = 0;
    int count = 0;
    for (int r0 = 0; r0 + win <= a.height; ++r0)
      for (int q0 = 0; q0 + win <= a.width; ++q0) {
        double mx = 0, my = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double wt = w2[static_cast<std::size_t>(i) * win + j];
            mx += wt * a.at(ch, r0 + i, q0 + j);
            my += wt * b.at(ch, r0 + i, q0 + j);
          }
        double vx = 0, vy = 0, cxy = 0;
        for (int i = 0; i < win; ++i)
          for (int j = 0; j < win; ++j) {
            const double wt = w2[static_cast<std::size_t>(i) * win + j];
            const double dx = a.at(ch, r0 + i, q0 + j) - mx, dy = b.at(ch, r0 + i, q0 + j) - my;
            vx += wt * dx * dx;
            vy += wt * dy * dy;
            cxy += wt * dx * dy;
          }
        sum += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++count;
      }
    chan_sum += sum / count;
  }
  return chan_sum / a.channels;
}

}  // namespace dsmsr::testing
