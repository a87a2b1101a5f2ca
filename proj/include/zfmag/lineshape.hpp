#pragma once

// Gaussian model of the zero-field cross-relaxation fluorescence feature and
// its response to along-scan and transverse magnetic fields.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "zfmag/core.hpp"
#include "zfmag/format.hpp"

namespace zfmag {

inline constexpr double kSqrt2Pi = 2.50662827463100050242;
/// FWHM / sigma for a Gaussian, 2 sqrt(2 ln 2).
inline const double kFwhmPerSigma = 2.0 * std::sqrt(2.0 * std::log(2.0));

/// y(b) = offset + amplitude / (sigma sqrt(2 pi)) * exp(-(b - center)^2 / (2 sigma^2))
///
/// `amplitude` is signed (negative for a fluorescence dip) and carries units
/// of offset x tesla; `center` and `sigma` are in tesla.
struct ZeroFieldFeature {
  double offset = 1.0;
  double amplitude = 0.0;
  double center = 0.0;
  double sigma = 1e-3;

  /// Dip with fractional peak depth `contrast` and full width `fwhm_t`.
  static ZeroFieldFeature dip(double offset, double contrast, double fwhm_t, double center = 0.0) {
    const double sigma = fwhm_t / kFwhmPerSigma;
    return {offset, -contrast * offset * sigma * kSqrt2Pi, center, sigma};
  }

  void validate() const {
    if (!std::isfinite(offset) || !std::isfinite(amplitude) || !std::isfinite(center) || !std::isfinite(sigma))
      throw std::invalid_argument("feature: non-finite parameter");
    if (!(sigma > 0.0)) throw std::invalid_argument("feature: sigma must be > 0");
    if (!(offset > 0.0)) throw std::invalid_argument("feature: offset must be > 0");
    if (!(std::abs(amplitude) / (sigma * kSqrt2Pi) < offset))
      throw std::invalid_argument("feature: dip deeper than the offset");
  }

  friend bool operator==(const ZeroFieldFeature&, const ZeroFieldFeature&) = default;
};

inline double evaluate(const ZeroFieldFeature& f, double b_scan) {
  const double u = (b_scan - f.center) / f.sigma;
  return f.offset + f.amplitude / (f.sigma * kSqrt2Pi) * std::exp(-0.5 * u * u);
}

inline double fwhm(const ZeroFieldFeature& f) { return kFwhmPerSigma * f.sigma; }

/// Fractional peak depth relative to the offset.
inline double peak_contrast(const ZeroFieldFeature& f) {
  return std::abs(f.amplitude) / (f.sigma * kSqrt2Pi) / f.offset;
}

/// Piecewise-linear transverse-field response above a knee. The default
/// slopes are synthetic-scene knobs, not measured values.
struct TransverseResponse {
  double width_slope = 0.8;       // sigma growth per tesla of transverse field
  double contrast_slope = 500.0;  // fractional depth loss per tesla
  double knee = 0.0;              // tesla

  void validate() const {
    if (!(width_slope >= 0.0) || !(contrast_slope >= 0.0) || !(knee >= 0.0))
      throw std::invalid_argument("transverse response: slopes and knee must be >= 0");
  }
};

/// Feature seen under an along-scan field `b_par` (moves the center) and an
/// in-plane field magnitude `b_perp` (widens and flattens the dip).
inline ZeroFieldFeature respond(const ZeroFieldFeature& base, const TransverseResponse& resp, double b_par,
                                double b_perp) {
  const double excess = std::max(0.0, b_perp - resp.knee);
  ZeroFieldFeature out = base;
  out.center = base.center + b_par;
  if (excess == 0.0) return out;
  out.sigma = base.sigma + resp.width_slope * excess;
  const double depth_scale = std::max(0.0, 1.0 - resp.contrast_slope * excess);
  // Keep peak_contrast = depth_scale * peak_contrast(base) at the new width.
  out.amplitude = base.amplitude * depth_scale * (out.sigma / base.sigma);
  return out;
}

inline void to_json(nlohmann::json& j, const ZeroFieldFeature& f) {
  j = nlohmann::json{{"offset", f.offset},
                     {"amplitude", f.amplitude},
                     {"center_T", f.center},
                     {"sigma_T", f.sigma},
                     {"fwhm_T", fwhm(f)},
                     {"peak_contrast", peak_contrast(f)},
                     {"units", {{"offset", "counts"}, {"amplitude", "counts*T"}, {"peak_contrast", "fraction"}}}};
}

inline void from_json(const nlohmann::json& j, ZeroFieldFeature& f) {
  f.offset = j.at("offset").get<double>();
  f.amplitude = j.at("amplitude").get<double>();
  f.center = j.at("center_T").get<double>();
  f.sigma = j.at("sigma_T").get<double>();
}

inline std::string feature_csv_header() { return "offset,amplitude,center_T,sigma_T,fwhm_T,peak_contrast"; }

inline std::string csv_row(const ZeroFieldFeature& f) {
  return join_numbers({f.offset, f.amplitude, f.center, f.sigma, fwhm(f), peak_contrast(f)});
}

}  // namespace zfmag
