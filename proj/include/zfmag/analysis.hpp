#pragma once

// Products derived from parameter maps: row profiles, shot-noise sensitivity,
// current-linearity fits, comparison against simulated fields and PNG
// renderings.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "zfmag/core.hpp"
#include "zfmag/fitstack.hpp"
#include "zfmag/magnetostatics.hpp"
#include "zfmag/raster_io.hpp"

namespace zfmag {

// ---------------------------------------------------------------------------
// Cross sections

struct ProfilePoint {
  std::size_t index = 0;
  double x_um = 0.0;  // superpixel center, stage coordinates
  double value = 0.0; // copied verbatim, NaN gaps kept
};

inline std::vector<ProfilePoint> cross_section(const Raster<double>& map, const GridSpec& grid, std::size_t row) {
  if (row >= map.ny)
    throw std::out_of_range("cross_section: row " + std::to_string(row) + " outside 0.." + std::to_string(map.ny - 1));
  std::vector<ProfilePoint> out;
  out.reserve(map.nx);
  for (std::size_t ix = 0; ix < map.nx; ++ix)
    out.push_back({ix, grid.pixel_center(ix, row).x * 1e6, map(ix, row)});
  return out;
}

// ---------------------------------------------------------------------------
// Sensitivity

enum class LinewidthUnits {
  Field,      // linewidth in tesla, used directly
  Frequency,  // linewidth in Hz, converted with h / (g mu_B)
};

struct SensitivityInputs {
  double p_f = 0.70;           // lineshape factor for a Gaussian resonance
  double gamma_fwhm = 2e-3;    // T in Field mode, Hz in Frequency mode
  double contrast = 0.01;      // fractional peak depth
  double photon_rate = 9.68e8; // detected photons / s
  double h_planck = constants::planck;
  double g_factor = constants::nv_g_factor;
  double mu_b = constants::bohr_magneton;

  void validate() const {
    if (!(p_f > 0.0 && p_f <= 1.0)) throw std::invalid_argument("sensitivity: p_f must be in (0, 1]");
    if (!(gamma_fwhm > 0.0)) throw std::invalid_argument("sensitivity: linewidth must be > 0");
    if (!(contrast > 0.0)) throw std::invalid_argument("sensitivity: contrast must be > 0");
    if (!(photon_rate > 0.0)) throw std::invalid_argument("sensitivity: photon rate must be > 0");
    if (!(h_planck > 0.0 && g_factor > 0.0 && mu_b > 0.0))
      throw std::invalid_argument("sensitivity: physical constants must be > 0");
  }
};

/// Shot-noise-limited sensitivity, T / sqrt(Hz):
///   Field:     p_f * Gamma_T / (C sqrt(I0))
///   Frequency: p_f * h / (g mu_B) * Gamma_Hz / (C sqrt(I0))
inline double sensitivity(const SensitivityInputs& in, LinewidthUnits mode = LinewidthUnits::Field) {
  in.validate();
  const double width_t = mode == LinewidthUnits::Field ? in.gamma_fwhm : in.h_planck / (in.g_factor * in.mu_b) * in.gamma_fwhm;
  return in.p_f * width_t / (in.contrast * std::sqrt(in.photon_rate));
}

inline double linewidth_hz(double width_t, const SensitivityInputs& c = {}) {
  return c.g_factor * c.mu_b * width_t / c.h_planck;
}

/// Per-superpixel sensitivity from fitted FWHM and contrast; NaN where the
/// fit is unusable or the rate is not positive.
inline Raster<double> sensitivity_map(const ParameterMaps& maps, const Raster<double>& photon_rate,
                                      const SensitivityInputs& consts = {}) {
  if (!photon_rate.same_shape(maps.fwhm)) throw std::invalid_argument("sensitivity_map: rate map shape mismatch");
  Raster<double> out(maps.fwhm.nx, maps.fwhm.ny, kMasked);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double c = maps.contrast_pct.data[i] / 100.0;
    if (!maps.usable(i) || !(c > 0.0) || !(photon_rate.data[i] > 0.0) || !(maps.fwhm.data[i] > 0.0)) continue;
    SensitivityInputs in = consts;
    in.gamma_fwhm = maps.fwhm.data[i];
    in.contrast = c;
    in.photon_rate = photon_rate.data[i];
    out.data[i] = sensitivity(in, LinewidthUnits::Field);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linearity

struct LinearFit {
  double slope = kMasked;
  double intercept = kMasked;
  double r2 = kMasked;
  std::size_t n = 0;
};

inline LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  LinearFit f;
  f.n = x.size();
  if (x.size() < 2) return f;
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(y.size());
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0) return f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double ss_res = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double r = y[i] - (f.intercept + f.slope * x[i]);
    ss_res += r * r;
  }
  f.r2 = syy > 0.0 ? std::clamp(1.0 - ss_res / syy, 0.0, 1.0) : (ss_res == 0.0 ? 1.0 : 0.0);
  return f;
}

/// Rectangular superpixel region; values are averaged over usable pixels.
struct Roi {
  std::size_t ix = 0;
  std::size_t iy = 0;
  std::size_t nx = 1;
  std::size_t ny = 1;
};

inline double roi_mean(const Raster<double>& map, const ParameterMaps& maps, const Roi& roi) {
  if (roi.nx == 0 || roi.ny == 0 || roi.ix + roi.nx > map.nx || roi.iy + roi.ny > map.ny)
    throw std::out_of_range("ROI outside the map");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t iy = roi.iy; iy < roi.iy + roi.ny; ++iy)
    for (std::size_t ix = roi.ix; ix < roi.ix + roi.nx; ++ix) {
      const std::size_t i = iy * map.nx + ix;
      if (!maps.usable(i) || !std::isfinite(map.data[i])) continue;
      sum += map.data[i];
      ++n;
    }
  return n ? sum / static_cast<double>(n) : kMasked;
}

struct LinearityReport {
  Roi roi;
  std::vector<double> currents;
  std::vector<double> shift, fwhm, contrast_pct;
  LinearFit shift_fit, fwhm_fit, contrast_fit;
  double broadening_min_current = 0.1;
};

/// Straight-line fits of the ROI parameters against current. Width and
/// contrast are only fitted over |I| >= broadening_min_current, where their
/// response is linear.
inline LinearityReport linearity(const std::vector<std::pair<double, ParameterMaps>>& series, const Roi& roi,
                                 double broadening_min_current = 0.1) {
  if (series.size() < 3) throw std::invalid_argument("linearity: need at least 3 currents");
  LinearityReport rep;
  rep.roi = roi;
  rep.broadening_min_current = broadening_min_current;
  const auto& g0 = series.front().second.grid;
  for (const auto& [current, maps] : series) {
    if (!(maps.grid == g0)) throw std::invalid_argument("linearity: maps in the series have different geometry");
    rep.currents.push_back(current);
    rep.shift.push_back(roi_mean(maps.shift, maps, roi));
    rep.fwhm.push_back(roi_mean(maps.fwhm, maps, roi));
    rep.contrast_pct.push_back(roi_mean(maps.contrast_pct, maps, roi));
    if (!std::isfinite(rep.shift.back()))
      throw std::invalid_argument("linearity: ROI has no usable pixels at " + format_number(current) + " A");
  }
  const auto [lo, hi] = std::minmax_element(rep.currents.begin(), rep.currents.end());
  if (*lo == *hi) throw std::invalid_argument("linearity: degenerate series (all currents equal)");
  rep.shift_fit = fit_line(rep.currents, rep.shift);
  std::vector<double> xi, wi, ci;
  for (std::size_t k = 0; k < rep.currents.size(); ++k) {
    if (std::abs(rep.currents[k]) < broadening_min_current) continue;
    xi.push_back(std::abs(rep.currents[k]));
    wi.push_back(rep.fwhm[k]);
    ci.push_back(rep.contrast_pct[k]);
  }
  rep.fwhm_fit = fit_line(xi, wi);
  rep.contrast_fit = fit_line(xi, ci);
  return rep;
}

// ---------------------------------------------------------------------------
// Comparison with simulation

struct Comparison {
  double rmse = 0.0;
  double pearson_r = 0.0;
  double max_abs_err = 0.0;
  std::size_t pixels = 0;
};

/// Mean-pools the simulated Bz onto the map's superpixel grid.
inline Raster<double> pool_to_grid(const FieldMap& sim, const GridSpec& target) {
  const double ratio = target.pitch / sim.grid.pitch;
  const auto factor = static_cast<std::size_t>(std::lround(ratio));
  if (factor < 1 || std::abs(ratio - static_cast<double>(factor)) > 1e-6 * ratio)
    throw std::invalid_argument("compare: map pitch is not an integer multiple of the simulation pitch");
  if (norm(target.origin - sim.grid.origin) > 1e-3 * sim.grid.pitch)
    throw std::invalid_argument("compare: map and simulation grids have different origins");
  Raster<double> pooled = bin_frame(sim.bz, factor);
  if (pooled.nx != target.nx || pooled.ny != target.ny)
    throw std::invalid_argument("compare: pooled simulation is " + std::to_string(pooled.nx) + "x" +
                                std::to_string(pooled.ny) + ", map is " + std::to_string(target.nx) + "x" +
                                std::to_string(target.ny));
  return pooled;
}

/// Metrics over pixels with mask == 0 and a finite shift. An empty mask
/// raster means no mask.
inline Comparison compare(const Raster<double>& shift, const Raster<double>& reference,
                          const Raster<std::uint8_t>& mask = {}) {
  if (!shift.same_shape(reference)) throw std::invalid_argument("compare: shape mismatch");
  if (mask.size() && !mask.same_shape(shift)) throw std::invalid_argument("compare: mask shape mismatch");
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < shift.size(); ++i)
    if ((!mask.size() || mask.data[i] == 0) && std::isfinite(shift.data[i]) && std::isfinite(reference.data[i]))
      idx.push_back(i);
  if (idx.empty()) throw std::invalid_argument("compare: no overlapping unmasked pixels");
  Comparison c;
  c.pixels = idx.size();
  double mx = 0, my = 0, se = 0;
  for (auto i : idx) {
    const double d = shift.data[i] - reference.data[i];
    se += d * d;
    c.max_abs_err = std::max(c.max_abs_err, std::abs(d));
    mx += shift.data[i];
    my += reference.data[i];
  }
  const double n = static_cast<double>(idx.size());
  c.rmse = std::sqrt(se / n);
  mx /= n;
  my /= n;
  double sxx = 0, syy = 0, sxy = 0;
  for (auto i : idx) {
    const double dx = shift.data[i] - mx, dy = reference.data[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) c.pearson_r = kMasked;
  else c.pearson_r = std::clamp(sxx == syy ? sxy / sxx : sxy / std::sqrt(sxx * syy), -1.0, 1.0);
  return c;
}

inline Comparison compare(const ParameterMaps& maps, const FieldMap& sim, const Raster<std::uint8_t>& mask = {}) {
  return compare(maps.shift, pool_to_grid(sim, maps.grid), mask);
}

// ---------------------------------------------------------------------------
// Rendering

enum class Colormap { Diverging, Sequential };

using Rgb = std::array<std::uint8_t, 3>;
inline constexpr Rgb kMaskedColor{128, 128, 128};

namespace detail {

inline Rgb lerp_rgb(const std::array<double, 3>& a, const std::array<double, 3>& b, double t) {
  Rgb out;
  for (int k = 0; k < 3; ++k) out[k] = static_cast<std::uint8_t>(std::lround(a[k] + (b[k] - a[k]) * t));
  return out;
}

}  // namespace detail

/// Diverging: blue below zero, white at zero, red above, symmetric about zero
/// with half-range max(|lo|, |hi|); the red end is the blue end with R and B
/// swapped, so negating the data mirrors the image. Sequential: viridis-like
/// ramp over [lo, hi]. NaN pixels get kMaskedColor.
inline Rgb map_color(double v, Colormap cmap, double lo, double hi) {
  if (!std::isfinite(v)) return kMaskedColor;
  if (cmap == Colormap::Diverging) {
    constexpr std::array<double, 3> white{255, 255, 255}, blue{40, 60, 200}, red{200, 60, 40};
    const double half = std::max(std::abs(lo), std::abs(hi));
    const double t = half > 0.0 ? std::clamp(v / half, -1.0, 1.0) : 0.0;
    return t >= 0.0 ? detail::lerp_rgb(white, red, t) : detail::lerp_rgb(white, blue, -t);
  }
  static constexpr std::array<std::array<double, 3>, 5> stops{
      {{68, 1, 84}, {59, 82, 139}, {33, 145, 140}, {94, 201, 98}, {253, 231, 37}}};
  const double t = hi > lo ? std::clamp((v - lo) / (hi - lo), 0.0, 1.0) : 0.0;
  const double pos = t * (stops.size() - 1);
  const auto k = std::min<std::size_t>(static_cast<std::size_t>(pos), stops.size() - 2);
  return detail::lerp_rgb(stops[k], stops[k + 1], pos - static_cast<double>(k));
}

/// RGB image with +y up (raster row ny-1 becomes the first image row).
inline RgbImage colorize(const Raster<double>& r, Colormap cmap, double lo, double hi) {
  if (!std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("colorize: range must be finite");
  RgbImage img{r.nx, r.ny, std::vector<std::uint8_t>(r.size() * 3)};
  for (std::size_t y = 0; y < r.ny; ++y)
    for (std::size_t x = 0; x < r.nx; ++x) {
      const Rgb c = map_color(r(x, r.ny - 1 - y), cmap, lo, hi);
      std::copy(c.begin(), c.end(), img.rgb.begin() + static_cast<std::ptrdiff_t>((y * r.nx + x) * 3));
    }
  return img;
}

inline void render_png(const Raster<double>& r, Colormap cmap, double lo, double hi, const fs::path& path) {
  write_png(path, colorize(r, cmap, lo, hi));
}

/// Finite min/max, or {0, 0} when every value is NaN.
inline std::pair<double, double> finite_range(const Raster<double>& r) {
  double lo = INFINITY, hi = -INFINITY;
  for (double v : r.data)
    if (std::isfinite(v)) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  if (lo > hi) return {0.0, 0.0};
  return {lo, hi};
}

}  // namespace zfmag
