#pragma once

// Synthetic field-scanned fluorescence stacks of a nanodiamond layer above a
// current pattern: brightness texture, per-pixel feature response, photon
// shot noise, read noise and 12-bit quantization.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "zfmag/core.hpp"
#include "zfmag/lineshape.hpp"
#include "zfmag/magnetostatics.hpp"
#include "zfmag/random.hpp"

namespace zfmag {

struct ScanProtocol {
  double b_start = -4e-3;
  double b_stop = 4e-3;
  int n_steps = 81;
  double exposure_s = 1.0;

  void validate() const {
    if (!(b_start < b_stop)) throw std::invalid_argument("protocol: b_start must be < b_stop");
    if (n_steps < 3) throw std::invalid_argument("protocol: n_steps must be >= 3");
    if (!(exposure_s > 0.0)) throw std::invalid_argument("protocol: exposure must be > 0");
  }
  double step() const { return (b_stop - b_start) / (n_steps - 1); }
  std::vector<double> b_values() const {
    std::vector<double> b(static_cast<std::size_t>(n_steps));
    for (int k = 0; k < n_steps; ++k) b[k] = k == n_steps - 1 ? b_stop : b_start + k * step();
    return b;
  }
};

struct CameraModel {
  int bit_depth = 12;
  double gain = 1500.0;          // photons per count
  double read_noise_rms = 0.0;   // counts

  int full_well_counts() const { return (1 << bit_depth) - 1; }
  void validate() const {
    if (bit_depth < 1 || bit_depth > 16) throw std::invalid_argument("camera: bit_depth must be 1..16");
    if (!(gain > 0.0)) throw std::invalid_argument("camera: gain must be > 0");
    if (!(read_noise_rms >= 0.0)) throw std::invalid_argument("camera: read noise must be >= 0");
  }
  friend bool operator==(const CameraModel&, const CameraModel&) = default;
};

/// Multiplicative lognormal brightness texture: unit-variance Gaussian values
/// on a world-fixed lattice of pitch `cell`, bilinearly interpolated, mapped
/// through exp(sigma g - sigma^2/2). sigma = 0 disables it.
struct ClusterSpec {
  double sigma = 0.2;
  double cell = 5e-6;

  void validate() const {
    if (!(sigma >= 0.0)) throw std::invalid_argument("clusters: sigma must be >= 0");
    if (!(cell > 0.0)) throw std::invalid_argument("clusters: cell must be > 0");
  }
};

struct SceneConfig {
  CrossPattern pattern;
  GridSpec grid;
  double base_rate = 2.5e6;  // photons / s / pixel
  ClusterSpec clusters;
  ZeroFieldFeature feature = ZeroFieldFeature::dip(1.0, 0.01, 2e-3);
  TransverseResponse response;
  /// Hold the field constant over blocks of this many pixels (1 = per pixel).
  std::size_t field_block = 1;

  void validate() const {
    pattern.validate();
    grid.validate();
    if (!(base_rate >= 0.0) || !std::isfinite(base_rate)) throw std::invalid_argument("scene: base rate must be >= 0");
    clusters.validate();
    feature.validate();
    response.validate();
    if (field_block < 1) throw std::invalid_argument("scene: field_block must be >= 1");
  }
};

struct Scene {
  GridSpec grid;
  Raster<double> brightness;  // photons / s / pixel
  ZeroFieldFeature feature_base;
  TransverseResponse response;
  FieldMap field;
};

enum class NoiseMode {
  Poisson,    // shot noise + read noise + quantization
  Noiseless,  // round(lambda / gain), no randomness
  Expected,   // lambda / gain as a real number, clamped to the full well
};

inline std::string_view to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::Poisson: return "poisson";
    case NoiseMode::Noiseless: return "noiseless";
    case NoiseMode::Expected: return "expected";
  }
  return "?";
}

inline NoiseMode parse_noise_mode(std::string_view s) {
  if (s == "poisson") return NoiseMode::Poisson;
  if (s == "noiseless") return NoiseMode::Noiseless;
  if (s == "expected") return NoiseMode::Expected;
  throw std::invalid_argument("unknown noise mode '" + std::string(s) + "'");
}

inline double unit_normal(CounterRng& rng) { return std::normal_distribution<double>(0.0, 1.0)(rng); }

inline Raster<double> cluster_texture(const GridSpec& grid, const ClusterSpec& spec, std::uint64_t seed) {
  Raster<double> tex(grid.nx, grid.ny, 1.0);
  if (spec.sigma == 0.0) return tex;
  auto node = [&](long long i, long long j) {
    CounterRng rng(seed, RngDomain::Texture, static_cast<std::uint32_t>(j + (1LL << 31)),
                   static_cast<std::uint32_t>(i + (1LL << 31)));
    return unit_normal(rng);
  };
  for (std::size_t iy = 0; iy < grid.ny; ++iy) {
    for (std::size_t ix = 0; ix < grid.nx; ++ix) {
      const Vec3 p = grid.pixel_center(ix, iy);
      const double u = p.x / spec.cell, v = p.y / spec.cell;
      const double fu = std::floor(u), fv = std::floor(v);
      const auto i = static_cast<long long>(fu), j = static_cast<long long>(fv);
      const double tu = u - fu, tv = v - fv;
      const double g = (1 - tu) * (1 - tv) * node(i, j) + tu * (1 - tv) * node(i + 1, j) +
                       (1 - tu) * tv * node(i, j + 1) + tu * tv * node(i + 1, j + 1);
      tex(ix, iy) = std::exp(spec.sigma * g - 0.5 * spec.sigma * spec.sigma);
    }
  }
  return tex;
}

inline Scene make_scene(const SceneConfig& cfg, double current, Route route, std::uint64_t seed, int threads = 0) {
  cfg.validate();
  if (!std::isfinite(current)) throw std::invalid_argument("scene: current must be finite");
  Scene scene;
  scene.grid = cfg.grid;
  scene.feature_base = cfg.feature;
  scene.response = cfg.response;
  scene.field = field_on_grid(build_cross(cfg.pattern, route, current), cfg.grid, threads);
  if (cfg.field_block > 1) scene.field = block_average(scene.field, cfg.field_block);
  scene.brightness = cluster_texture(cfg.grid, cfg.clusters, seed);
  for (auto& v : scene.brightness.data) v *= cfg.base_rate;
  return scene;
}

/// Feature at one pixel. The dip sits where the scan cancels the pattern's
/// along-scan field, i.e. at b_scan = -Bz; in-plane components act as the
/// transverse field.
inline ZeroFieldFeature pixel_feature(const Scene& scene, std::size_t ix, std::size_t iy) {
  const double bz = scene.field.bz(ix, iy);
  const double b_perp = std::hypot(scene.field.bx(ix, iy), scene.field.by(ix, iy));
  return respond(scene.feature_base, scene.response, -bz, b_perp);
}

inline std::vector<ZeroFieldFeature> pixel_features(const Scene& scene) {
  std::vector<ZeroFieldFeature> out;
  out.reserve(scene.grid.nx * scene.grid.ny);
  for (std::size_t iy = 0; iy < scene.grid.ny; ++iy)
    for (std::size_t ix = 0; ix < scene.grid.nx; ++ix) out.push_back(pixel_feature(scene, ix, iy));
  return out;
}

/// Expected detected photons at one pixel and scan value.
inline double expected_photons(double brightness, double exposure_s, const ZeroFieldFeature& f, double b_scan) {
  return brightness * exposure_s * evaluate(f, b_scan) / f.offset;
}

template <class Sample>
struct Frame {
  Raster<Sample> counts;
  std::size_t saturated = 0;
};

/// Per-pixel sample for one frame. Randomness is keyed on
/// (seed, frame_index, pixel index) only.
inline double sample_counts(double lambda, const CameraModel& camera, NoiseMode mode, std::uint64_t seed,
                            std::uint32_t frame_index, std::uint32_t pixel) {
  switch (mode) {
    case NoiseMode::Expected:
      return lambda / camera.gain;
    case NoiseMode::Noiseless:
      return std::round(lambda / camera.gain);
    case NoiseMode::Poisson: {
      double photons = 0.0;
      if (lambda > 0.0) {
        CounterRng rng(seed, RngDomain::Photon, frame_index, pixel);
        photons = static_cast<double>(std::poisson_distribution<long long>(lambda)(rng));
      }
      double counts = photons / camera.gain;
      if (camera.read_noise_rms > 0.0) {
        CounterRng rng(seed, RngDomain::ReadNoise, frame_index, pixel);
        counts += camera.read_noise_rms * unit_normal(rng);
      }
      return std::round(counts);
    }
  }
  return 0.0;
}

namespace detail {

template <class Sample>
Frame<Sample> render_frame_impl(const Scene& scene, const std::vector<ZeroFieldFeature>& features, double b_scan,
                                const CameraModel& camera, double exposure_s, NoiseMode mode, std::uint64_t seed,
                                std::uint32_t frame_index, int threads) {
  const auto& g = scene.grid;
  Frame<Sample> frame{Raster<Sample>(g.nx, g.ny), 0};
  const double full_well = camera.full_well_counts();
  std::vector<std::size_t> saturated(g.ny, 0);
  parallel_for(g.ny, threads, [&](std::size_t iy) {
    for (std::size_t ix = 0; ix < g.nx; ++ix) {
      const std::size_t idx = iy * g.nx + ix;
      const double lambda = expected_photons(scene.brightness.data[idx], exposure_s, features[idx], b_scan);
      double c = sample_counts(lambda, camera, mode, seed, frame_index, static_cast<std::uint32_t>(idx));
      if (c > full_well) {
        c = full_well;
        ++saturated[iy];
      }
      frame.counts.data[idx] = static_cast<Sample>(std::max(0.0, c));
    }
  });
  for (auto n : saturated) frame.saturated += n;
  return frame;
}

}  // namespace detail

/// One camera frame at scan value `b_scan`. Counts are clamped to
/// [0, full well]; clamped pixels are counted in `saturated`.
inline Frame<std::uint16_t> render_frame(const Scene& scene, double b_scan, const CameraModel& camera,
                                         double exposure_s, NoiseMode mode, std::uint64_t seed,
                                         std::uint32_t frame_index, int threads = 0) {
  if (mode == NoiseMode::Expected) throw std::invalid_argument("render_frame: use render_expected_frame for expected mode");
  return detail::render_frame_impl<std::uint16_t>(scene, pixel_features(scene), b_scan, camera, exposure_s, mode,
                                                  seed, frame_index, threads);
}

/// Unquantized expectation lambda / gain, the variance-free oracle frame.
inline Frame<double> render_expected_frame(const Scene& scene, double b_scan, const CameraModel& camera,
                                           double exposure_s, int threads = 0) {
  return detail::render_frame_impl<double>(scene, pixel_features(scene), b_scan, camera, exposure_s,
                                           NoiseMode::Expected, 0, 0, threads);
}

template <class Sample>
struct ImageStack {
  std::vector<Raster<Sample>> frames;
  std::vector<double> b_values;
  CameraModel camera;
  GridSpec grid;
  double exposure_s = 1.0;
  std::vector<std::size_t> saturated;

  void validate() const {
    if (frames.size() != b_values.size()) throw std::invalid_argument("stack: frame count != b_values count");
    for (std::size_t k = 1; k < b_values.size(); ++k)
      if (!(b_values[k] > b_values[k - 1])) throw std::invalid_argument("stack: b_values must be increasing");
    for (const auto& f : frames)
      if (f.nx != grid.nx || f.ny != grid.ny) throw std::invalid_argument("stack: frame dims differ from grid");
  }
};

using CountStack = ImageStack<std::uint16_t>;
using ExpectedStack = ImageStack<double>;

namespace detail {

template <class Sample>
ImageStack<Sample> render_stack_impl(const Scene& scene, const ScanProtocol& protocol, const CameraModel& camera,
                                     NoiseMode mode, std::uint64_t seed, int threads) {
  protocol.validate();
  camera.validate();
  ImageStack<Sample> stack;
  stack.b_values = protocol.b_values();
  stack.camera = camera;
  stack.grid = scene.grid;
  stack.exposure_s = protocol.exposure_s;
  const auto features = pixel_features(scene);
  for (std::size_t k = 0; k < stack.b_values.size(); ++k) {
    auto frame = render_frame_impl<Sample>(scene, features, stack.b_values[k], camera, protocol.exposure_s, mode,
                                           seed, static_cast<std::uint32_t>(k), threads);
    stack.frames.push_back(std::move(frame.counts));
    stack.saturated.push_back(frame.saturated);
  }
  return stack;
}

}  // namespace detail

/// Frames in ascending scan order, one per protocol step.
inline CountStack render_stack(const Scene& scene, const ScanProtocol& protocol, const CameraModel& camera,
                               NoiseMode mode, std::uint64_t seed, int threads = 0) {
  if (mode == NoiseMode::Expected) throw std::invalid_argument("render_stack: use render_expected_stack for expected mode");
  return detail::render_stack_impl<std::uint16_t>(scene, protocol, camera, mode, seed, threads);
}

inline ExpectedStack render_expected_stack(const Scene& scene, const ScanProtocol& protocol,
                                           const CameraModel& camera, int threads = 0) {
  return detail::render_stack_impl<double>(scene, protocol, camera, NoiseMode::Expected, 0, threads);
}

}  // namespace zfmag
