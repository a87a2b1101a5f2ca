#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "gen.hpp"
#include "oracles.hpp"
#include "zfmag/analysis.hpp"
#include "zfmag/pipeline.hpp"

using namespace zfmag;

namespace {

// Constants and formula written out here, independent of the library.
constexpr double kPlanck = 6.62607015e-34, kBohr = 9.2740100783e-24;

double direct_field_mode(double p_f, double gamma_t, double c, double rate) {
  return p_f * gamma_t / (c * std::sqrt(rate));
}

ParameterMaps uniform_maps(std::size_t nx, std::size_t ny, double shift, double fwhm_t, double contrast_pct) {
  ParameterMaps m;
  m.grid = GridSpec::centered(nx * 16, ny * 16, 0.15e-6, 0.11e-3).binned(16);
  m.shift = Raster<double>(nx, ny, shift);
  m.shift_err = Raster<double>(nx, ny, 1e-6);
  m.contrast_pct = Raster<double>(nx, ny, contrast_pct);
  m.fwhm = Raster<double>(nx, ny, fwhm_t);
  m.offset = Raster<double>(nx, ny, 1000.0);
  m.quality = Raster<std::uint8_t>(nx, ny, 0);
  return m;
}

/// Symmetric field of view: 38x32 superpixels centred on the cross.
FieldMap symmetric_p34(double current) {
  const GridSpec g = GridSpec::centered(608, 512, 0.15e-6, 0.11e-3);
  return field_on_grid(build_cross(CrossPattern{}, Route::P34, current), g, 0);
}

}  // namespace

// ---------------------------------------------------------------------------
// cross_section

TEST(CrossSection, CopiesRowVerbatimWithGaps) {
  const GridSpec g = GridSpec::centered(5, 3, 2.4e-6, 0.11e-3);
  Raster<double> r(5, 3);
  for (std::size_t i = 0; i < r.size(); ++i) r.data[i] = 1e-4 * std::sin(static_cast<double>(i));
  r(2, 1) = kMasked;
  const auto p = cross_section(r, g, 1);
  ASSERT_EQ(p.size(), 5u);
  for (std::size_t ix = 0; ix < 5; ++ix) {
    EXPECT_EQ(p[ix].index, ix);
    EXPECT_DOUBLE_EQ(p[ix].x_um, (-0.5 * 5 * 2.4 + (ix + 0.5) * 2.4));
    if (ix == 2) {
      EXPECT_TRUE(std::isnan(p[ix].value));
    } else {
      EXPECT_EQ(std::memcmp(&p[ix].value, &r(ix, 1), sizeof(double)), 0);
    }
  }
  EXPECT_THROW(cross_section(r, g, 3), std::out_of_range);
}

TEST(CrossSection, SuperpixelPitchIsBinTimesCameraPitch) {
  const GridSpec g = GridSpec{}.binned(16);
  const auto p = cross_section(Raster<double>(g.nx, g.ny), g, 0);
  ASSERT_EQ(p.size(), g.nx);
  EXPECT_NEAR(p[1].x_um - p[0].x_um, 16 * 0.15, 1e-12);
}

TEST(CrossSection, P34ProfileCrossesZeroAtWireAxis) {
  const FieldMap sim = symmetric_p34(0.5);
  const GridSpec g = sim.grid.binned(16);
  const Raster<double> pooled = pool_to_grid(sim, g);
  const auto p = cross_section(pooled, g, g.ny / 2);
  std::vector<double> crossings;
  for (std::size_t k = 0; k + 1 < p.size(); ++k)
    if ((p[k].value < 0) != (p[k + 1].value < 0))
      crossings.push_back(p[k].x_um + (p[k + 1].x_um - p[k].x_um) * p[k].value / (p[k].value - p[k + 1].value));
  ASSERT_EQ(crossings.size(), 1u);
  EXPECT_NEAR(crossings[0], 0.0, 1e-3);  // um
}

TEST(CrossSection, P34ExtremaAntisymmetric) {
  const FieldMap sim = symmetric_p34(0.5);
  const GridSpec g = sim.grid.binned(16);
  const auto p = cross_section(pool_to_grid(sim, g), g, g.ny / 2);
  double lo = 0, hi = 0;
  for (const auto& q : p) {
    lo = std::min(lo, q.value);
    hi = std::max(hi, q.value);
  }
  ASSERT_GT(hi, 0.0);
  EXPECT_NEAR(-lo / hi, 1.0, 0.02);
}

// ---------------------------------------------------------------------------
// sensitivity

TEST(Sensitivity, HeadlineValue) {
  SensitivityInputs in;
  in.gamma_fwhm = 2.0e-3;
  in.contrast = 0.01;
  in.photon_rate = 9.68e8;
  const double v = sensitivity(in);
  EXPECT_NEAR(v, 4.5e-6, 0.01 * 4.5e-6);
  EXPECT_NEAR(v, direct_field_mode(0.70, 2e-3, 0.01, 9.68e8), 1e-20);
}

TEST(Sensitivity, HomogeneityProperty) {
  gen::for_all(200, 51, [](gen::Gen& g) {
    SCOPED_TRACE(gen::label(g.seed));
    SensitivityInputs in;
    in.p_f = g.uniform(0.1, 1.0);
    in.gamma_fwhm = g.log_uniform(1e-4, 1e-2);
    in.contrast = g.log_uniform(1e-3, 0.3);
    in.photon_rate = g.log_uniform(1e3, 1e12);
    const double base = sensitivity(in);
    EXPECT_NEAR(base, direct_field_mode(in.p_f, in.gamma_fwhm, in.contrast, in.photon_rate), 1e-14 * base);
    const double s = g.log_uniform(0.01, 100);
    SensitivityInputs a = in, b = in, c = in;
    a.gamma_fwhm *= s;
    b.photon_rate *= s;
    c.contrast *= s;
    EXPECT_NEAR(sensitivity(a) / base, s, 1e-13 * s);
    EXPECT_NEAR(sensitivity(b) / base, 1 / std::sqrt(s), 1e-13 / std::sqrt(s));
    EXPECT_NEAR(sensitivity(c) / base, 1 / s, 1e-13 / s);
  });
  SensitivityInputs in;
  SensitivityInputs twice = in;
  twice.contrast *= 2;
  EXPECT_DOUBLE_EQ(sensitivity(twice), 0.5 * sensitivity(in));
}

TEST(Sensitivity, FrequencyModeConvertsWithGyromagneticRatio) {
  SensitivityInputs in;
  const double gamma_hz = 2.003 * kBohr * 2e-3 / kPlanck;  // about 56 MHz
  EXPECT_NEAR(linewidth_hz(2e-3), gamma_hz, 1e-9 * gamma_hz);
  in.gamma_fwhm = gamma_hz;
  const double expect = 0.70 * kPlanck / (2.003 * kBohr) * gamma_hz / (0.01 * std::sqrt(9.68e8));
  EXPECT_NEAR(sensitivity(in, LinewidthUnits::Frequency), expect, 1e-12 * expect);
  SensitivityInputs field;
  EXPECT_NEAR(sensitivity(in, LinewidthUnits::Frequency), sensitivity(field), 1e-12 * sensitivity(field));
}

TEST(Sensitivity, RejectsInvalidInputs) {
  for (auto bad : {+[](SensitivityInputs& s) { s.contrast = 0; }, +[](SensitivityInputs& s) { s.photon_rate = -1; },
                   +[](SensitivityInputs& s) { s.p_f = 1.5; }, +[](SensitivityInputs& s) { s.gamma_fwhm = 0; },
                   +[](SensitivityInputs& s) { s.mu_b = 0; }}) {
    SensitivityInputs in;
    bad(in);
    EXPECT_THROW(sensitivity(in), std::invalid_argument);
  }
}

TEST(SensitivityMap, UniformInputsGiveUniformMap) {
  const ParameterMaps m = uniform_maps(6, 4, 0.0, 2e-3, 1.0);
  const Raster<double> s = sensitivity_map(m, Raster<double>(6, 4, 9.68e8));
  for (double v : s.data) EXPECT_EQ(v, s.data[0]);
  EXPECT_NEAR(s.data[0], direct_field_mode(0.7, 2e-3, 0.01, 9.68e8), 1e-20);
}

TEST(SensitivityMap, BrighterPixelsAreMoreSensitive) {
  const ParameterMaps m = uniform_maps(10, 1, 0.0, 1.8e-3, 0.9);
  Raster<double> rate(10, 1);
  for (std::size_t i = 0; i < 10; ++i) rate.data[i] = 1e7 * (1.0 + i);
  const Raster<double> s = sensitivity_map(m, rate);
  for (std::size_t i = 1; i < 10; ++i) EXPECT_LT(s.data[i], s.data[i - 1]);
}

TEST(SensitivityMap, MaskedAndInvalidPixelsAreNaN) {
  ParameterMaps m = uniform_maps(4, 1, 0.0, 2e-3, 1.0);
  m.quality.data[0] = static_cast<std::uint8_t>(FitStatus::Rejected);
  m.contrast_pct.data[1] = kMasked;
  Raster<double> rate(4, 1, 1e8);
  rate.data[2] = 0.0;
  const Raster<double> s = sensitivity_map(m, rate);
  EXPECT_TRUE(std::isnan(s.data[0]));
  EXPECT_TRUE(std::isnan(s.data[1]));
  EXPECT_TRUE(std::isnan(s.data[2]));
  EXPECT_TRUE(std::isfinite(s.data[3]));
  EXPECT_THROW(sensitivity_map(m, Raster<double>(3, 1, 1e8)), std::invalid_argument);
}

TEST(SensitivityMap, MapMeanCloseToValueAtMeanParameters) {
  RunConfig cfg;
  cfg.scene.grid = GridSpec::centered(256, 256, 0.15e-6, 0.11e-3);
  cfg.threads = 2;
  const RoundtripRun run = roundtrip_run(cfg, 0.5, true);
  const ParameterMaps maps = apply_mask(run.maps, run.mask);
  const Raster<double> rate = photon_rate_map(maps, cfg.camera.gain, cfg.protocol.exposure_s);
  const Raster<double> smap = sensitivity_map(maps, rate);
  double sum = 0, w = 0, c = 0, r = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < smap.size(); ++i)
    if (std::isfinite(smap.data[i])) {
      sum += smap.data[i];
      w += maps.fwhm.data[i];
      c += maps.contrast_pct.data[i] / 100;
      r += rate.data[i];
      ++n;
    }
  ASSERT_GT(n, smap.size() / 2);
  const double at_mean = direct_field_mode(0.7, w / n, c / n, r / n);
  EXPECT_NEAR(sum / n / at_mean, 1.0, 0.3);
}

// ---------------------------------------------------------------------------
// linearity

TEST(FitLine, ExactLineHasUnitR2) {
  gen::for_all(100, 52, [](gen::Gen& g) {
    SCOPED_TRACE(gen::label(g.seed));
    const double a = g.uniform(-1, 1), b = g.uniform(-1e-3, 1e-3);
    std::vector<double> x, y;
    for (int k = 0; k < g.integer(3, 12); ++k) {
      x.push_back(g.uniform(-1, 1));
      y.push_back(a + b * x.back());
    }
    const LinearFit f = fit_line(x, y);
    EXPECT_NEAR(f.r2, 1.0, 1e-12);
    EXPECT_NEAR(f.slope, b, 1e-12);
    EXPECT_NEAR(f.intercept, a, 1e-12);
  });
  EXPECT_TRUE(std::isnan(fit_line({1, 1, 1}, {1, 2, 3}).slope));
}

TEST(Linearity, ExactlyLinearSeries) {
  std::vector<std::pair<double, ParameterMaps>> series;
  for (double i : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}) {
    // width and contrast only respond linearly above 0.1 A: bend the 0 A point
    const double w = i >= 0.1 ? 2e-3 + 1e-3 * i : 1.9e-3;
    series.emplace_back(i, uniform_maps(3, 2, 0.6e-3 * i, w, 1.0 - 0.8 * i));
  }
  const LinearityReport rep = linearity(series, {1, 1, 1, 1});
  EXPECT_NEAR(rep.shift_fit.r2, 1.0, 1e-12);
  EXPECT_NEAR(rep.shift_fit.slope, 0.6e-3, 1e-15);
  EXPECT_NEAR(rep.shift_fit.intercept, 0.0, 1e-15);
  EXPECT_EQ(rep.fwhm_fit.n, 5u);
  EXPECT_NEAR(rep.fwhm_fit.r2, 1.0, 1e-12);
  EXPECT_NEAR(rep.fwhm_fit.slope, 1e-3, 1e-14);
  EXPECT_NEAR(rep.contrast_fit.slope, -0.8, 1e-12);
}

TEST(Linearity, RoiAveragesUsablePixels) {
  std::vector<std::pair<double, ParameterMaps>> series;
  for (double i : {0.1, 0.2, 0.3}) {
    ParameterMaps m = uniform_maps(2, 2, i, 2e-3, 1.0);
    m.shift(0, 0) = 3 * i;
    m.shift(1, 1) = 1e9;  // excluded below
    m.quality(1, 1) = static_cast<std::uint8_t>(FitStatus::Rejected);
    series.emplace_back(i, m);
  }
  const LinearityReport rep = linearity(series, {0, 0, 2, 2});
  EXPECT_NEAR(rep.shift_fit.slope, (3.0 + 1 + 1) / 3, 1e-12);
}

TEST(Linearity, RejectsDegenerateSeries) {
  const auto m = uniform_maps(2, 2, 0, 2e-3, 1);
  EXPECT_THROW(linearity({{0.1, m}, {0.2, m}}, {}), std::invalid_argument);
  EXPECT_THROW(linearity({{0.2, m}, {0.2, m}, {0.2, m}}, {}), std::invalid_argument);
  EXPECT_THROW(linearity({{0.1, m}, {0.2, m}, {0.3, uniform_maps(3, 2, 0, 2e-3, 1)}}, {}), std::invalid_argument);
  EXPECT_THROW(linearity({{0.1, m}, {0.2, m}, {0.3, m}}, {1, 1, 2, 1}), std::out_of_range);
  auto dead = m;
  dead.quality.data.assign(4, static_cast<std::uint8_t>(FitStatus::LowSNR));
  EXPECT_THROW(linearity({{0.1, m}, {0.2, dead}, {0.3, m}}, {}), std::invalid_argument);
}

TEST(Linearity, NoiselessSyntheticSeries) {
  RunConfig cfg;
  cfg.scene.grid = GridSpec::centered(128, 96, 0.15e-6, 0.11e-3);
  cfg.threads = 2;
  std::vector<std::pair<double, ParameterMaps>> series;
  for (double i : {0.1, 0.2, 0.3, 0.4, 0.5}) {
    const RoundtripRun r = roundtrip_run(cfg, i, false);
    series.emplace_back(i, apply_mask(r.maps, r.mask));
  }
  const Roi roi = auto_roi(series);
  const LinearityReport rep = linearity(series, roi);
  EXPECT_GE(rep.shift_fit.r2, 0.999999);
  // slope against the field per ampere, from an independent 1 A simulation
  const FieldMap one = field_on_grid(build_cross(cfg.scene.pattern, Route::P34, 1.0), cfg.scene.grid, 1);
  double bz = 0;  // superpixel mean
  for (std::size_t iy = roi.iy * 16; iy < roi.iy * 16 + 16; ++iy)
    for (std::size_t ix = roi.ix * 16; ix < roi.ix * 16 + 16; ++ix) bz += one.bz(ix, iy) / 256;
  EXPECT_NEAR(rep.shift_fit.slope / bz, 1.0, 0.01);
  EXPECT_NEAR(rep.shift_fit.intercept, 0.0, 1e-3 * std::abs(bz));
  EXPECT_GE(rep.fwhm_fit.r2, 0.999);
  EXPECT_GE(rep.contrast_fit.r2, 0.999);
}

// ---------------------------------------------------------------------------
// compare

TEST(Compare, SelfComparisonIsExact) {
  gen::Gen g(53);
  Raster<double> r(9, 7);
  for (double& v : r.data) v = g.uniform(-3e-4, 3e-4);
  const Comparison c = compare(r, r);
  EXPECT_EQ(c.rmse, 0.0);
  EXPECT_EQ(c.pearson_r, 1.0);
  EXPECT_EQ(c.max_abs_err, 0.0);
  EXPECT_EQ(c.pixels, r.size());
}

TEST(Compare, MetricsMatchDirectFormulasProperty) {
  gen::for_all(50, 54, [](gen::Gen& g) {
    SCOPED_TRACE(gen::label(g.seed));
    Raster<double> a(8, 5), b(8, 5);
    Raster<std::uint8_t> mask(8, 5);
    std::vector<double> xa, xb;
    double se = 0, mx = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      b.data[i] = g.uniform(-1e-3, 1e-3);
      a.data[i] = b.data[i] + g.normal(0, 1e-5);
      mask.data[i] = g.integer(0, 4) == 0;
      if (mask.data[i]) {
        a.data[i] = g.coin() ? kMasked : 1.0;  // masked values must not leak in
        continue;
      }
      xa.push_back(a.data[i]);
      xb.push_back(b.data[i]);
      se += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
      mx = std::max(mx, std::abs(a.data[i] - b.data[i]));
    }
    const Comparison c = compare(a, b, mask);
    EXPECT_EQ(c.pixels, xa.size());
    EXPECT_NEAR(c.rmse, std::sqrt(se / xa.size()), 1e-18);
    EXPECT_EQ(c.max_abs_err, mx);
    EXPECT_NEAR(c.pearson_r, oracle::pearson(xa, xb), 1e-12);
  });
}

TEST(Compare, Errors) {
  const Raster<double> a(3, 3, 1.0);
  EXPECT_THROW(compare(a, Raster<double>(3, 2)), std::invalid_argument);
  EXPECT_THROW(compare(a, a, Raster<std::uint8_t>(2, 3)), std::invalid_argument);
  EXPECT_THROW(compare(a, a, Raster<std::uint8_t>(3, 3, 1)), std::invalid_argument);
  EXPECT_THROW(compare(Raster<double>(3, 3, kMasked), a), std::invalid_argument);
}

TEST(PoolToGrid, BlockMeanOfSimulatedBz) {
  const GridSpec g = GridSpec::centered(32, 16, 0.15e-6, 0.11e-3);
  const FieldMap sim = field_on_grid(build_cross(CrossPattern{}, Route::P14, 0.5), g, 1);
  const Raster<double> p = pool_to_grid(sim, g.binned(8));
  ASSERT_EQ(p.nx, 4u);
  ASSERT_EQ(p.ny, 2u);
  double s = 0;
  for (std::size_t iy = 8; iy < 16; ++iy)
    for (std::size_t ix = 16; ix < 24; ++ix) s += sim.bz(ix, iy);
  EXPECT_NEAR(p(2, 1), s / 64, 1e-18);
}

TEST(PoolToGrid, RejectsIncompatibleGrids) {
  const GridSpec g = GridSpec::centered(32, 16, 0.15e-6, 0.11e-3);
  const FieldMap sim = field_on_grid(build_cross(CrossPattern{}, Route::P14, 0.5), g, 1);
  GridSpec odd = g.binned(8);
  odd.pitch *= 1.1;
  EXPECT_THROW(pool_to_grid(sim, odd), std::invalid_argument);
  GridSpec moved = g.binned(8);
  moved.origin.x += 1e-6;
  EXPECT_THROW(pool_to_grid(sim, moved), std::invalid_argument);
  GridSpec big = g.binned(8);
  big.nx += 1;
  EXPECT_THROW(pool_to_grid(sim, big), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// rendering

TEST(Colors, ZeroIsWhiteAndUniform) {
  const RgbImage img = colorize(Raster<double>(5, 4, 0.0), Colormap::Diverging, -1, 1);
  for (auto v : img.rgb) EXPECT_EQ(v, 255);
  const RgbImage flat = colorize(Raster<double>(5, 4, 0.0), Colormap::Diverging, 0, 0);
  for (auto v : flat.rgb) EXPECT_EQ(v, 255);
}

TEST(Colors, SignFlipMirrorsDivergingColors) {
  gen::for_all(200, 55, [](gen::Gen& g) {
    SCOPED_TRACE(gen::label(g.seed));
    const double v = g.uniform(-2, 2), lo = -g.uniform(0.1, 2), hi = g.uniform(0.1, 2);
    const Rgb a = map_color(v, Colormap::Diverging, lo, hi), b = map_color(-v, Colormap::Diverging, lo, hi);
    EXPECT_EQ(a[0], b[2]);
    EXPECT_EQ(a[1], b[1]);
    EXPECT_EQ(a[2], b[0]);
  });
  EXPECT_GT(map_color(1, Colormap::Diverging, -1, 1)[0], map_color(1, Colormap::Diverging, -1, 1)[2]);  // red up
}

TEST(Colors, MaskedPixelsAreNeutralGray) {
  EXPECT_EQ(map_color(kMasked, Colormap::Diverging, -1, 1), (Rgb{128, 128, 128}));
  EXPECT_EQ(map_color(kMasked, Colormap::Sequential, 0, 1), (Rgb{128, 128, 128}));
}

TEST(Colors, SequentialEndsAndClamping) {
  EXPECT_EQ(map_color(0, Colormap::Sequential, 0, 1), (Rgb{68, 1, 84}));
  EXPECT_EQ(map_color(1, Colormap::Sequential, 0, 1), (Rgb{253, 231, 37}));
  EXPECT_EQ(map_color(5, Colormap::Sequential, 0, 1), (Rgb{253, 231, 37}));
  EXPECT_EQ(map_color(-5, Colormap::Sequential, 0, 1), (Rgb{68, 1, 84}));
}

TEST(Colors, ImageHasPositiveYUp) {
  Raster<double> r(1, 2);
  r(0, 0) = -1;
  r(0, 1) = 1;
  const RgbImage img = colorize(r, Colormap::Diverging, -1, 1);
  EXPECT_GT(img.rgb[0], img.rgb[2]);  // first image row is the top (+y) row: red
  EXPECT_THROW(colorize(r, Colormap::Diverging, -INFINITY, 1), std::invalid_argument);
}

TEST(RenderPng, DeterministicBytes) {
  const fs::path dir = fs::temp_directory_path() / "zfmag_test_png";
  fs::create_directories(dir);
  Raster<double> r(13, 9);
  for (std::size_t i = 0; i < r.size(); ++i) r.data[i] = std::cos(0.3 * static_cast<double>(i));
  r.data[5] = kMasked;
  render_png(r, Colormap::Diverging, -1, 1, dir / "a.png");
  render_png(r, Colormap::Diverging, -1, 1, dir / "b.png");
  const std::string a = read_file_bytes(dir / "a.png"), b = read_file_bytes(dir / "b.png");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.substr(1, 3), "PNG");
  fs::remove_all(dir);
}

TEST(FiniteRange, SkipsNaN) {
  Raster<double> r(3, 1);
  r.data = {kMasked, -2.0, 5.0};
  EXPECT_EQ(finite_range(r), (std::pair<double, double>{-2.0, 5.0}));
  EXPECT_EQ(finite_range(Raster<double>(2, 2, kMasked)), (std::pair<double, double>{0.0, 0.0}));
}
