#pragma once

// Shared building blocks: physical constants, 3-vectors, row-major rasters,
// grid geometry and a deterministic row-parallel loop.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <exception>
#include <thread>
#include <vector>

namespace zfmag {

// CODATA 2018, SI units.
namespace constants {
inline constexpr double pi = 3.14159265358979323846;
inline constexpr double mu0 = 1.25663706212e-6;        // T m / A
inline constexpr double planck = 6.62607015e-34;       // J s
inline constexpr double bohr_magneton = 9.2740100783e-24;  // J / T
inline constexpr double nv_g_factor = 2.003;
}  // namespace constants

struct Vec3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  constexpr Vec3& operator+=(const Vec3& o) {
    x += o.x; y += o.y; z += o.z;
    return *this;
  }
  constexpr Vec3& operator-=(const Vec3& o) {
    x -= o.x; y -= o.y; z -= o.z;
    return *this;
  }
  constexpr Vec3& operator*=(double s) {
    x *= s; y *= s; z *= s;
    return *this;
  }
  friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
  friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
  friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
  friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
  friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
  friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline bool is_finite(const Vec3& a) {
  return std::isfinite(a.x) && std::isfinite(a.y) && std::isfinite(a.z);
}

/// Dense row-major 2-D raster. Row `iy` occupies `data[iy*nx, (iy+1)*nx)`.
template <class T>
struct Raster {
  std::size_t nx = 0;
  std::size_t ny = 0;
  std::vector<T> data;

  Raster() = default;
  Raster(std::size_t nx_, std::size_t ny_, T fill = T{}) : nx(nx_), ny(ny_), data(nx_ * ny_, fill) {}

  std::size_t size() const { return data.size(); }
  T& operator()(std::size_t ix, std::size_t iy) { return data[iy * nx + ix]; }
  const T& operator()(std::size_t ix, std::size_t iy) const { return data[iy * nx + ix]; }
  std::span<T> row(std::size_t iy) { return {data.data() + iy * nx, nx}; }
  std::span<const T> row(std::size_t iy) const { return {data.data() + iy * nx, nx}; }
  bool same_shape(const auto& o) const { return nx == o.nx && ny == o.ny; }

  friend bool operator==(const Raster&, const Raster&) = default;
};

/// Pixel lattice in the xy plane. `origin` is the lower-left corner of pixel
/// (0,0); pixel centers sit half a pitch inside. Samples are evaluated at
/// height origin.z + standoff_z.
struct GridSpec {
  std::size_t nx = 612;
  std::size_t ny = 512;
  double pitch = 0.15e-6;
  double standoff_z = 0.11e-3;
  Vec3 origin{-0.5 * 612 * 0.15e-6, -0.5 * 512 * 0.15e-6, 0.0};

  static GridSpec centered(std::size_t nx, std::size_t ny, double pitch, double standoff) {
    GridSpec g;
    g.nx = nx;
    g.ny = ny;
    g.pitch = pitch;
    g.standoff_z = standoff;
    g.origin = {-0.5 * static_cast<double>(nx) * pitch, -0.5 * static_cast<double>(ny) * pitch, 0.0};
    return g;
  }

  Vec3 pixel_center(std::size_t ix, std::size_t iy) const {
    return {origin.x + (static_cast<double>(ix) + 0.5) * pitch,
            origin.y + (static_cast<double>(iy) + 0.5) * pitch, origin.z + standoff_z};
  }

  /// Superpixel grid for `factor`x`factor` binning; trailing partial blocks dropped.
  GridSpec binned(std::size_t factor) const {
    GridSpec g = *this;
    g.nx = nx / factor;
    g.ny = ny / factor;
    g.pitch = pitch * static_cast<double>(factor);
    return g;
  }

  void validate() const {
    if (nx < 1 || ny < 1) throw std::invalid_argument("grid: nx and ny must be >= 1");
    if (!(pitch > 0.0) || !std::isfinite(pitch)) throw std::invalid_argument("grid: pitch must be > 0");
    if (!(standoff_z >= 0.0) || !std::isfinite(standoff_z))
      throw std::invalid_argument("grid: standoff must be >= 0");
    if (!is_finite(origin)) throw std::invalid_argument("grid: origin must be finite");
  }

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

inline unsigned resolve_threads(int requested) {
  if (requested > 0) return static_cast<unsigned>(requested);
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs `body(i)` for i in [0, n) on up to `threads` workers, each taking a
/// contiguous block. Bodies must write only to index-owned state, which makes
/// the result independent of the worker count.
template <class Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  const std::size_t workers = std::min<std::size_t>(resolve_threads(threads), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  // one slot per worker; the lowest-index failure is rethrown after joining
  std::vector<std::exception_ptr> errors(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = w * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &body, &err = errors[w]] {
      try {
        for (std::size_t i = lo; i < hi; ++i) body(i);
      } catch (...) {
        err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace zfmag
