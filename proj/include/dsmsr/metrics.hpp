#pragma once

// Full-reference image quality: PSNR and Gaussian-window SSIM, plus the
// per-image report used by the evaluation command.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dsmsr/data/raster.hpp"
#include "dsmsr/error.hpp"

namespace dsmsr {

inline constexpr double kInfinitePsnr = std::numeric_limits<double>::infinity();

struct SsimParams {
  int window_px = 11;
  double window_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window_px < 3 || window_px % 2 == 0) throw UsageError("ssim window must be odd and >= 3");
    if (!(window_sigma > 0)) throw UsageError("ssim window sigma must be > 0");
    if (!(k1 > 0 && k2 > 0)) throw UsageError("ssim constants must be > 0");
    if (!(dynamic_range > 0)) throw UsageError("ssim dynamic range must be > 0");
  }
};

// Normalized 1-D Gaussian; the 2-D window is its outer product.
inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const double c = (size - 1) / 2.0;
  double total = 0;
  for (int i = 0; i < size; ++i) {
    w[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    total += w[i];
  }
  for (auto& v : w) v /= total;
  return w;
}

// 10 log10(max^2 / MSE) over every element; +inf when the inputs are equal.
template <typename T>
double psnr(std::span<const T> a, std::span<const T> b, double max_value = 1.0) {
  if (a.size() != b.size()) throw DataError("psnr: inputs have different sizes");
  if (a.empty()) throw DataError("psnr: empty input");
  if (!(max_value > 0)) throw UsageError("psnr: max_value must be > 0");
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  const double mse = acc / static_cast<double>(a.size());
  if (mse == 0) return kInfinitePsnr;
  return 10.0 * std::log10(max_value * max_value / mse);
}

namespace detail {
inline void require_same_extent(const RasterGrid& a, const RasterGrid& b, const char* what) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw DataError(std::string(what) + ": shape mismatch " + std::to_string(a.channels) + "x" +
                    std::to_string(a.height) + "x" + std::to_string(a.width) + " vs " + std::to_string(b.channels) +
                    "x" + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

// Valid-mode separable filtering of one plane.
inline std::vector<double> filter_valid(const std::vector<double>& x, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * x[static_cast<std::size_t>(r) * w + c + i];
      tmp[static_cast<std::size_t>(r) * ow + c] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(r + i) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = s;
    }
  return out;
}
}  // namespace detail

// Mean SSIM of one plane over all windows that fit entirely inside it.
inline double ssim_plane(std::span<const float> a, std::span<const float> b, int height, int width,
                         const SsimParams& p = {}) {
  p.validate();
  if (a.size() != b.size() || a.size() != static_cast<std::size_t>(height) * width) {
    throw DataError("ssim: plane size mismatch");
  }
  if (height < p.window_px || width < p.window_px) {
    throw DataError("ssim: image " + std::to_string(height) + "x" + std::to_string(width) + " is smaller than the " +
                    std::to_string(p.window_px) + " px window");
  }
  const auto k = gaussian_window(p.window_px, p.window_sigma);
  const std::size_t n = a.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a[i];
    y[i] = b[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto mx = detail::filter_valid(x, height, width, k);
  const auto my = detail::filter_valid(y, height, width, k);
  const auto mxx = detail::filter_valid(xx, height, width, k);
  const auto myy = detail::filter_valid(yy, height, width, k);
  const auto mxy = detail::filter_valid(xy, height, width, k);
  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  double total = 0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double va = mxx[i] - mx[i] * mx[i];
    const double vb = myy[i] - my[i] * my[i];
    const double cov = mxy[i] - mx[i] * my[i];
    const double num = (2 * mx[i] * my[i] + c1) * (2 * cov + c2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (va + vb + c2);
    total += num / den;
  }
  return total / static_cast<double>(mx.size());
}

// Per-channel SSIM, averaged over channels.
inline double ssim(const RasterGrid& a, const RasterGrid& b, const SsimParams& p = {}) {
  detail::require_same_extent(a, b, "ssim");
  const std::size_t plane = a.pixels();
  double total = 0;
  for (int c = 0; c < a.channels; ++c) {
    total += ssim_plane(std::span<const float>(a.values).subspan(c * plane, plane),
                        std::span<const float>(b.values).subspan(c * plane, plane), a.height, a.width, p);
  }
  return total / a.channels;
}

inline double psnr(const RasterGrid& a, const RasterGrid& b, double max_value = 1.0) {
  detail::require_same_extent(a, b, "psnr");
  return psnr(std::span<const float>(a.values), std::span<const float>(b.values), max_value);
}

struct ImageMetrics {
  std::string id;
  double psnr_db = 0;
  double ssim = 0;
  bool operator==(const ImageMetrics&) const = default;
};

struct MetricReport {
  std::vector<ImageMetrics> per_image;  // sorted by id
  double mean_psnr_db = 0;              // over finite entries; +inf if none
  double mean_ssim = 0;
  int infinite_psnr_count = 0;          // entries left out of mean_psnr_db

  bool operator==(const MetricReport&) const = default;
};

// Recomputes the aggregates from per_image (sorting it by id first).
inline MetricReport summarize(std::vector<ImageMetrics> rows) {
  if (rows.empty()) throw DataError("metric report needs at least one image");
  std::sort(rows.begin(), rows.end(), [](const auto& x, const auto& y) { return x.id < y.id; });
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].id == rows[i - 1].id) throw DataError("duplicate image id '" + rows[i].id + "'");
  }
  MetricReport r;
  double psnr_sum = 0, ssim_sum = 0;
  int finite = 0;
  for (const auto& m : rows) {
    if (std::isinf(m.psnr_db)) {
      ++r.infinite_psnr_count;
    } else {
      psnr_sum += m.psnr_db;
      ++finite;
    }
    ssim_sum += m.ssim;
  }
  r.mean_psnr_db = finite ? psnr_sum / finite : kInfinitePsnr;
  r.mean_ssim = ssim_sum / static_cast<double>(rows.size());
  r.per_image = std::move(rows);
  return r;
}

struct EvalPair {
  const RasterGrid* sr;
  const RasterGrid* hr;
  std::string id;
};

inline MetricReport evaluate_pairs(const std::vector<EvalPair>& pairs, const SsimParams& params = {}) {
  if (pairs.empty()) throw DataError("evaluate_pairs: no image pairs");
  std::vector<ImageMetrics> rows;
  rows.reserve(pairs.size());
  for (const auto& p : pairs) rows.push_back({p.id, psnr(*p.sr, *p.hr), ssim(*p.sr, *p.hr, params)});
  return summarize(std::move(rows));
}

// One JSON object per line: {"id", "psnr_db", "ssim"}; infinite PSNR is the
// string "inf".
inline std::string to_records(const MetricReport& r) {
  std::string out;
  for (const auto& m : r.per_image) {
    nlohmann::json j;
    j["id"] = m.id;
    if (std::isinf(m.psnr_db)) {
      j["psnr_db"] = "inf";
    } else {
      j["psnr_db"] = m.psnr_db;
    }
    j["ssim"] = m.ssim;
    out += j.dump() + "\n";
  }
  return out;
}

inline MetricReport parse_records(const std::string& text) {
  std::vector<ImageMetrics> rows;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ImageMetrics m;
      m.id = j.at("id").get<std::string>();
      const auto& p = j.at("psnr_db");
      m.psnr_db = p.is_string() ? (p.get<std::string>() == "inf" ? kInfinitePsnr
                                                                  : throw DataError("bad psnr_db value"))
                                : p.get<double>();
      m.ssim = j.at("ssim").get<double>();
      rows.push_back(std::move(m));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("metric records line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return summarize(std::move(rows));
}

namespace detail {
inline std::string fmt_psnr(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}
inline std::string fmt_ssim(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}
}  // namespace detail

// Human-readable table with one PSNR/SSIM column pair per named report. All
// reports must cover the same ids.
inline std::string format_table(const std::vector<std::pair<std::string, const MetricReport*>>& columns) {
  if (columns.empty()) throw UsageError("format_table: no columns");
  const auto& first = *columns.front().second;
  for (const auto& [name, rep] : columns) {
    if (rep->per_image.size() != first.per_image.size()) throw DataError("report columns cover different images");
    for (std::size_t i = 0; i < first.per_image.size(); ++i)
      if (rep->per_image[i].id != first.per_image[i].id) throw DataError("report columns cover different images");
  }
  std::size_t id_w = 4;
  for (const auto& m : first.per_image) id_w = std::max(id_w, m.id.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(id_w)) << "id";
  for (const auto& [name, rep] : columns) {
    os << "  " << std::right << std::setw(12) << (name + " PSNR") << "  " << std::setw(12) << (name + " SSIM");
  }
  os << "\n";
  auto row = [&](const std::string& label, auto&& cell) {
    os << std::left << std::setw(static_cast<int>(id_w)) << label;
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto [p, s] = cell(*columns[c].second);
      os << "  " << std::right << std::setw(12) << p << "  " << std::setw(12) << s;
    }
    os << "\n";
  };
  for (std::size_t i = 0; i < first.per_image.size(); ++i) {
    row(first.per_image[i].id, [i](const MetricReport& r) {
      return std::pair{detail::fmt_psnr(r.per_image[i].psnr_db), detail::fmt_ssim(r.per_image[i].ssim)};
    });
  }
  row("mean", [](const MetricReport& r) {
    return std::pair{detail::fmt_psnr(r.mean_psnr_db), detail::fmt_ssim(r.mean_ssim)};
  });
  for (const auto& [name, rep] : columns) {
    if (rep->infinite_psnr_count > 0) {
      os << "note: " << name << " mean PSNR excludes " << rep->infinite_psnr_count << " identical image(s)\n";
    }
  }
  return os.str();
}

inline std::string format_table(const MetricReport& r, const std::string& name = "SR") {
  return format_table({{name, &r}});
}

}  // namespace dsmsr
