#pragma once

// Superpixel binning, per-pixel spectrum extraction and damped least-squares
// fitting of the Gaussian zero-field feature across a whole stack.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "zfmag/core.hpp"
#include "zfmag/lineshape.hpp"
#include "zfmag/synth.hpp"

namespace zfmag {

inline constexpr double kMasked = std::numeric_limits<double>::quiet_NaN();

struct BinnedStack {
  std::vector<Raster<double>> frames;
  std::vector<double> b_values;
  std::size_t bin_factor = 16;
  GridSpec grid;  // superpixel grid
};

/// Mean over `factor`x`factor` blocks; trailing partial blocks are dropped.
template <class Sample>
Raster<double> bin_frame(const Raster<Sample>& frame, std::size_t factor) {
  if (factor < 1) throw std::invalid_argument("bin: factor must be >= 1");
  if (factor > frame.nx || factor > frame.ny)
    throw std::invalid_argument("bin: factor " + std::to_string(factor) + " exceeds image size " +
                                std::to_string(frame.nx) + "x" + std::to_string(frame.ny));
  Raster<double> out(frame.nx / factor, frame.ny / factor);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t by = 0; by < out.ny; ++by) {
    for (std::size_t bx = 0; bx < out.nx; ++bx) {
      double sum = 0.0;
      for (std::size_t iy = by * factor; iy < (by + 1) * factor; ++iy)
        for (std::size_t ix = bx * factor; ix < (bx + 1) * factor; ++ix) sum += static_cast<double>(frame(ix, iy));
      out(bx, by) = sum * inv;
    }
  }
  return out;
}

template <class Sample>
BinnedStack bin(const ImageStack<Sample>& stack, std::size_t factor, int threads = 0) {
  if (stack.frames.empty()) throw std::invalid_argument("bin: empty stack");
  BinnedStack out;
  out.b_values = stack.b_values;
  out.bin_factor = factor;
  out.frames.resize(stack.frames.size());
  bin_frame(stack.frames.front(), factor);  // argument check on the caller's thread
  parallel_for(stack.frames.size(), threads, [&](std::size_t k) { out.frames[k] = bin_frame(stack.frames[k], factor); });
  out.grid = stack.grid.binned(factor);
  return out;
}

struct Spectrum {
  std::vector<double> b;
  std::vector<double> y;

  void validate() const {
    if (b.size() != y.size()) throw std::invalid_argument("spectrum: b and y lengths differ");
    if (b.size() < 5) throw std::invalid_argument("spectrum: need at least 5 samples");
    for (std::size_t i = 1; i < b.size(); ++i)
      if (!(b[i] > b[i - 1])) throw std::invalid_argument("spectrum: b must be strictly increasing");
  }
  double span() const { return b.back() - b.front(); }
  double step() const { return span() / static_cast<double>(b.size() - 1); }
};

inline Spectrum extract(const BinnedStack& binned, std::size_t ix, std::size_t iy) {
  if (ix >= binned.grid.nx || iy >= binned.grid.ny)
    throw std::out_of_range("extract: superpixel (" + std::to_string(ix) + "," + std::to_string(iy) +
                            ") outside " + std::to_string(binned.grid.nx) + "x" + std::to_string(binned.grid.ny));
  Spectrum s;
  s.b = binned.b_values;
  s.y.reserve(binned.frames.size());
  for (const auto& f : binned.frames) s.y.push_back(f(ix, iy));
  return s;
}

// ---------------------------------------------------------------------------
// Initial guess

struct InitialGuess {
  ZeroFieldFeature feature;
  double noise = 0.0;  // robust per-sample noise estimate
  bool low_snr = false;
};

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  const double hi = *mid;
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

/// Noise from the MAD of second differences, which suppresses smooth signal.
inline double robust_noise(const std::vector<double>& y) {
  std::vector<double> d2;
  for (std::size_t i = 1; i + 1 < y.size(); ++i) d2.push_back(y[i - 1] - 2.0 * y[i] + y[i + 1]);
  const double m = median(d2);
  for (auto& v : d2) v = std::abs(v - m);
  return 1.482602218505602 * median(d2) / std::sqrt(6.0);
}

inline InitialGuess init_guess(const Spectrum& s) {
  s.validate();
  const std::size_t n = s.y.size();
  const std::size_t edge = std::max<std::size_t>(1, n / 10);
  std::vector<double> outer(s.y.begin(), s.y.begin() + static_cast<std::ptrdiff_t>(edge));
  outer.insert(outer.end(), s.y.end() - static_cast<std::ptrdiff_t>(edge), s.y.end());
  const double y0 = median(outer);

  std::vector<double> smooth(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i == 0 ? 0 : i - 1;
    const std::size_t hi = std::min(n - 1, i + 1);
    double sum = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) sum += s.y[k];
    smooth[i] = sum / static_cast<double>(hi - lo + 1);
  }
  const std::size_t imin = static_cast<std::size_t>(std::min_element(smooth.begin(), smooth.end()) - smooth.begin());
  const double depth = y0 - smooth[imin];
  const double half = y0 - 0.5 * depth;

  // Half-depth crossings either side of the minimum, linearly interpolated.
  double left = s.b.front(), right = s.b.back();
  for (std::size_t i = imin; i > 0; --i) {
    if (smooth[i - 1] >= half) {
      const double t = (half - smooth[i]) / (smooth[i - 1] - smooth[i]);
      left = s.b[i] + t * (s.b[i - 1] - s.b[i]);
      break;
    }
  }
  for (std::size_t i = imin; i + 1 < n; ++i) {
    if (smooth[i + 1] >= half) {
      const double t = (half - smooth[i]) / (smooth[i + 1] - smooth[i]);
      right = s.b[i] + t * (s.b[i + 1] - s.b[i]);
      break;
    }
  }
  const double sigma = std::clamp((right - left) / kFwhmPerSigma, s.step(), 0.5 * s.span());

  InitialGuess g;
  g.noise = robust_noise(s.y);
  g.low_snr = !(depth > 3.0 * g.noise);
  g.feature = {y0 > 0.0 ? y0 : std::max(std::abs(y0), 1e-12), -depth * sigma * kSqrt2Pi, s.b[imin], sigma};
  return g;
}

// ---------------------------------------------------------------------------
// Fit

enum class FitStatus : std::uint8_t { Ok = 0, MaxIter = 1, Singular = 2, BoundsHit = 3, LowSNR = 4, Rejected = 5 };

inline std::string_view to_string(FitStatus s) {
  switch (s) {
    case FitStatus::Ok: return "ok";
    case FitStatus::MaxIter: return "max_iter";
    case FitStatus::Singular: return "singular";
    case FitStatus::BoundsHit: return "bounds_hit";
    case FitStatus::LowSNR: return "low_snr";
    case FitStatus::Rejected: return "rejected";
  }
  return "?";
}

struct FitOptions {
  int max_iter = 200;
  double rss_rtol = 1e-10;
  double step_rtol = 1e-8;
  bool poisson_weights = false;
};

struct FitResult {
  ZeroFieldFeature feature;
  std::array<double, 4> std_error{};  // offset, amplitude, center, sigma
  double rss = 0.0;
  int n_iter = 0;
  bool converged = false;
  std::optional<FitStatus> failure;

  FitStatus status() const { return failure.value_or(FitStatus::Ok); }
  double center_err() const { return std_error[2]; }
};

struct FitBounds {
  double sigma_lo, sigma_hi, center_lo, center_hi, offset_lo;

  static FitBounds for_spectrum(const Spectrum& s) {
    const double span = s.span();
    return {0.1 * s.step(), span, s.b.front() - 0.5 * span, s.b.back() + 0.5 * span, 0.0};
  }
};

namespace detail {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

inline ZeroFieldFeature to_feature(const Vec4& p) { return {p[0], p[1], p[2], p[3]}; }

struct Linearization {
  double rss = 0.0;
  Mat4 jtj = Mat4::Zero();
  Vec4 jtr = Vec4::Zero();
};

/// Weighted RSS and, when `want_jacobian`, the normal equations in the
/// scaled coordinates theta = p / scale.
inline Linearization linearize(const Spectrum& s, const std::vector<double>& w, const Vec4& p, const Vec4& scale,
                               bool want_jacobian) {
  Linearization lin;
  const double inv_norm = 1.0 / (p[3] * kSqrt2Pi);
  for (std::size_t i = 0; i < s.b.size(); ++i) {
    const double u = (s.b[i] - p[2]) / p[3];
    const double g = inv_norm * std::exp(-0.5 * u * u);
    const double r = s.y[i] - (p[0] + p[1] * g);
    lin.rss += w[i] * r * r;
    if (!want_jacobian) continue;
    Vec4 j;
    j << 1.0, g, p[1] * g * u / p[3], p[1] * g * (u * u - 1.0) / p[3];
    j = j.cwiseProduct(scale);
    lin.jtj.noalias() += w[i] * j * j.transpose();
    lin.jtr.noalias() += w[i] * r * j;
  }
  return lin;
}

inline Vec4 clamp_to_bounds(Vec4 p, const FitBounds& bnd, double offset_floor) {
  p[0] = std::max(p[0], offset_floor);
  p[2] = std::clamp(p[2], bnd.center_lo, bnd.center_hi);
  p[3] = std::clamp(p[3], bnd.sigma_lo, bnd.sigma_hi);
  return p;
}

}  // namespace detail

/// Levenberg-Marquardt minimisation of sum w_i (y_i - model_i)^2 with the
/// analytic Jacobian. Parameters are scaled by the starting magnitudes and
/// damped with Marquardt's diagonal, so the 4x4 system is well conditioned
/// despite offsets in counts and widths in tesla.
///
/// Stops when an accepted step changes RSS by < rss_rtol (relative) or moves
/// the scaled parameters by < step_rtol (relative). Failures are reported in
/// the result, never thrown.
inline FitResult fit(const Spectrum& s, const ZeroFieldFeature& guess, const FitOptions& opt = {}) {
  using detail::Vec4;
  s.validate();
  const std::size_t n = s.b.size();
  std::vector<double> w(n, 1.0);
  if (opt.poisson_weights)
    for (std::size_t i = 0; i < n; ++i) w[i] = 1.0 / std::max(std::abs(s.y[i]), 1.0);

  const FitBounds bnd = FitBounds::for_spectrum(s);
  const double offset_floor = std::max(std::abs(guess.offset), 1.0) * 1e-12;
  Vec4 p(guess.offset, guess.amplitude, guess.center, guess.sigma);
  p = detail::clamp_to_bounds(p, bnd, offset_floor);
  Vec4 scale(std::abs(p[0]), std::abs(p[1]) > 0.0 ? std::abs(p[1]) : std::abs(p[0]) * p[3] * 1e-3, p[3], p[3]);

  FitResult res;
  auto lin = detail::linearize(s, w, p, scale, true);
  double lambda = 1e-3;
  bool done = false;
  while (!done && res.n_iter < opt.max_iter) {
    ++res.n_iter;
    const Eigen::Vector4d diag = lin.jtj.diagonal();
    if (!(diag.minCoeff() > 0.0) || !diag.allFinite()) {
      res.failure = FitStatus::Singular;
      break;
    }
    bool accepted = false;
    while (!accepted) {
      detail::Mat4 m = lin.jtj;
      m.diagonal() += lambda * diag;
      const Eigen::LDLT<detail::Mat4> ldlt(m);
      Vec4 trial = p;
      double trial_rss = std::numeric_limits<double>::infinity();
      if (ldlt.info() == Eigen::Success && ldlt.isPositive()) {
        const Vec4 delta = ldlt.solve(lin.jtr);
        trial = detail::clamp_to_bounds(p + delta.cwiseProduct(scale), bnd, offset_floor);
        trial_rss = detail::linearize(s, w, trial, scale, false).rss;
      }
      if (std::isfinite(trial_rss) && trial_rss <= lin.rss) {
        const double rss_drop = lin.rss - trial_rss;
        const double step = ((trial - p).cwiseQuotient(scale)).norm();
        const double size = std::max(p.cwiseQuotient(scale).norm(), 1.0);
        const double prev_rss = lin.rss;
        p = trial;
        lin = detail::linearize(s, w, p, scale, true);
        lambda = std::max(lambda * 0.1, 1e-15);
        accepted = true;
        done = lin.rss == 0.0 || rss_drop <= opt.rss_rtol * prev_rss || step <= opt.step_rtol * size;
      } else {
        lambda *= 10.0;
        if (lambda > 1e16) {
          // No descent direction left at working precision.
          done = true;
          break;
        }
      }
    }
  }
  if (!res.failure && !done) res.failure = FitStatus::MaxIter;

  // Near the minimum RSS is flat to rounding, so comparing RSS values pins the
  // parameters only to ~sqrt(eps). A few undamped Gauss-Newton steps, driven
  // by the gradient instead, take them to the precision of J^T r. Steps must
  // shrink monotonically and may not raise RSS beyond rounding.
  if (!res.failure && lin.rss > 0.0) {
    double last_step = std::numeric_limits<double>::infinity();
    for (int k = 0; k < 8; ++k) {
      const Eigen::LDLT<detail::Mat4> ldlt(lin.jtj);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
      const Vec4 trial = detail::clamp_to_bounds(p + ldlt.solve(lin.jtr).cwiseProduct(scale), bnd, offset_floor);
      const double step = ((trial - p).cwiseQuotient(scale)).norm();
      if (!(step < last_step) || step == 0.0) break;
      const auto next = detail::linearize(s, w, trial, scale, true);
      if (!(next.rss <= lin.rss * (1.0 + 1e-12))) break;
      p = trial;
      lin = next;
      last_step = step;
      if (step <= 1e-15 * std::max(p.cwiseQuotient(scale).norm(), 1.0)) break;
    }
  }
  res.feature = detail::to_feature(p);
  res.rss = lin.rss;

  if (!res.failure) {
    const Eigen::FullPivLU<detail::Mat4> lu(lin.jtj);
    if (!lu.isInvertible() || lu.rcond() < 1e-14) {
      res.failure = FitStatus::Singular;
    } else {
      const detail::Mat4 cov = lu.inverse();
      const double dof = n > 4 ? static_cast<double>(n - 4) : 1.0;
      const double s2 = lin.rss / dof;
      for (int k = 0; k < 4; ++k) res.std_error[k] = scale[k] * std::sqrt(std::max(cov(k, k), 0.0) * s2);
      for (double e : res.std_error)
        if (!std::isfinite(e)) res.failure = FitStatus::Singular;
    }
  }
  if (!res.failure) {
    const bool at_bound = p[0] <= offset_floor || p[2] <= bnd.center_lo || p[2] >= bnd.center_hi ||
                          p[3] <= bnd.sigma_lo || p[3] >= bnd.sigma_hi;
    if (at_bound) res.failure = FitStatus::BoundsHit;
  }
  res.converged = !res.failure.has_value();
  return res;
}

/// init_guess followed by fit; a low-SNR spectrum is reported without fitting.
inline FitResult fit_spectrum(const Spectrum& s, const FitOptions& opt = {}) {
  const InitialGuess g = init_guess(s);
  if (g.low_snr) {
    FitResult r;
    r.feature = g.feature;
    r.std_error.fill(kMasked);
    r.rss = kMasked;
    r.failure = FitStatus::LowSNR;
    return r;
  }
  return fit(s, g.feature, opt);
}

// ---------------------------------------------------------------------------
// Maps

struct ParameterMaps {
  GridSpec grid;  // superpixel grid
  std::size_t bin_factor = 16;
  Raster<double> shift;         // T, equals the pattern's along-scan field
  Raster<double> shift_err;     // T
  Raster<double> contrast_pct;  // %
  Raster<double> fwhm;          // T
  Raster<double> offset;        // counts
  Raster<std::uint8_t> quality; // FitStatus

  bool usable(std::size_t i) const { return quality.data[i] == static_cast<std::uint8_t>(FitStatus::Ok); }
};

/// The dip center sits at -Bz (where the scan cancels the pattern field), so
/// the reported shift is the negated center. This is the only place the
/// sign flip happens.
inline double shift_from_center(double center) { return -center; }

struct FitSummary {
  std::size_t pixels = 0;
  std::array<std::size_t, 6> by_status{};
  double mean_iterations = 0.0;

  double converged_fraction() const {
    return pixels ? static_cast<double>(by_status[0]) / static_cast<double>(pixels) : 0.0;
  }
};

inline FitSummary summarize(const ParameterMaps& maps, const std::vector<int>& iterations = {}) {
  FitSummary s;
  s.pixels = maps.quality.size();
  for (auto q : maps.quality.data) ++s.by_status.at(q);
  if (!iterations.empty()) {
    double sum = 0;
    for (int it : iterations) sum += it;
    s.mean_iterations = sum / static_cast<double>(iterations.size());
  }
  return s;
}

/// Fits every superpixel independently. Work is split into square tiles of
/// `tile` superpixels; each pixel's result depends only on its own spectrum,
/// so the maps are identical for any thread count or tile size.
inline ParameterMaps fit_all(const BinnedStack& binned, const FitOptions& opt = {}, int threads = 0,
                             std::vector<int>* iterations = nullptr, std::size_t tile = 8) {
  if (binned.frames.empty()) throw std::invalid_argument("fit_all: empty stack");
  const auto& g = binned.grid;
  ParameterMaps maps;
  maps.grid = g;
  maps.bin_factor = binned.bin_factor;
  for (auto* r : {&maps.shift, &maps.shift_err, &maps.contrast_pct, &maps.fwhm, &maps.offset})
    *r = Raster<double>(g.nx, g.ny, kMasked);
  maps.quality = Raster<std::uint8_t>(g.nx, g.ny, 0);
  std::vector<int> iters(g.nx * g.ny, 0);

  tile = std::max<std::size_t>(tile, 1);
  const std::size_t tx = (g.nx + tile - 1) / tile, ty = (g.ny + tile - 1) / tile;
  parallel_for(tx * ty, threads, [&](std::size_t t) {
    const std::size_t x0 = (t % tx) * tile, y0 = (t / tx) * tile;
    for (std::size_t iy = y0; iy < std::min(g.ny, y0 + tile); ++iy) {
      for (std::size_t ix = x0; ix < std::min(g.nx, x0 + tile); ++ix) {
        const std::size_t i = iy * g.nx + ix;
        const FitResult r = fit_spectrum(extract(binned, ix, iy), opt);
        iters[i] = r.n_iter;
        maps.quality.data[i] = static_cast<std::uint8_t>(r.status());
        if (!r.converged) continue;
        maps.shift.data[i] = shift_from_center(r.feature.center);
        maps.shift_err.data[i] = r.center_err();
        maps.contrast_pct.data[i] = 100.0 * peak_contrast(r.feature);
        maps.fwhm.data[i] = fwhm(r.feature);
        maps.offset.data[i] = r.feature.offset;
      }
    }
  });
  if (iterations) *iterations = std::move(iters);
  return maps;
}

struct QualityThresholds {
  double min_contrast_pct = 0.2;
  double max_fwhm = 6e-3;
  double max_center_err = 0.5e-3;

  void validate() const {
    if (!(min_contrast_pct > 0.0) || !(max_fwhm > 0.0) || !(max_center_err > 0.0))
      throw std::invalid_argument("quality thresholds must be positive");
  }
};

/// 1 where a pixel failed its fit or any threshold, 0 where it is kept.
inline Raster<std::uint8_t> quality_mask(const ParameterMaps& maps, const QualityThresholds& th = {}) {
  th.validate();
  Raster<std::uint8_t> mask(maps.quality.nx, maps.quality.ny, 0);
  for (std::size_t i = 0; i < mask.size(); ++i) {
    const bool keep = maps.usable(i) && maps.contrast_pct.data[i] >= th.min_contrast_pct &&
                      maps.fwhm.data[i] <= th.max_fwhm && maps.shift_err.data[i] <= th.max_center_err;
    mask.data[i] = keep ? 0 : 1;
  }
  return mask;
}

/// Maps with masked pixels set to the sentinel and flagged Rejected.
inline ParameterMaps apply_mask(ParameterMaps maps, const Raster<std::uint8_t>& mask) {
  if (!mask.same_shape(maps.quality)) throw std::invalid_argument("apply_mask: shape mismatch");
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask.data[i]) continue;
    for (auto* r : {&maps.shift, &maps.shift_err, &maps.contrast_pct, &maps.fwhm, &maps.offset}) r->data[i] = kMasked;
    if (maps.usable(i)) maps.quality.data[i] = static_cast<std::uint8_t>(FitStatus::Rejected);
  }
  return maps;
}

}  // namespace zfmag
