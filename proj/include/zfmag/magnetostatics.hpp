#pragma once

// Biot-Savart fields of straight filament segments, polylines, filament
// bundles (finite-width printed wires) and square coils.

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "zfmag/core.hpp"

namespace zfmag {

/// Points closer than this to a segment's supporting line are treated as
/// lying on the wire: the field is reported as zero and flagged.
inline constexpr double kOnWireRadius = 1e-9;

struct Segment {
  Vec3 start;
  Vec3 end;

  double length() const { return norm(end - start); }
};

struct FieldEval {
  Vec3 b;
  bool on_wire = false;

  FieldEval& operator+=(const FieldEval& o) {
    b += o.b;
    on_wire = on_wire || o.on_wire;
    return *this;
  }
};

/// Closed-form field of a straight finite filament carrying `current` from
/// seg.start to seg.end, evaluated at `p`.
///
/// Uses B = mu0 I/(4 pi) (r1 x r2)(|r1|+|r2|) / (|r1||r2|(|r1||r2| + r1.r2))
/// with r1 = p - start, r2 = p - end, which stays well conditioned far from
/// the segment where the textbook cos(a1) - cos(a2) form cancels.
inline FieldEval segment_field(const Segment& seg, double current, const Vec3& p) {
  if (current == 0.0) return {};
  const Vec3 dl = seg.end - seg.start;
  const Vec3 r1 = p - seg.start;
  const Vec3 r2 = p - seg.end;
  const double len2 = dot(dl, dl);
  const Vec3 perp = r1 - dl * (dot(r1, dl) / len2);
  if (norm(perp) < kOnWireRadius) {
    // Collinear points outside the segment carry no field either, so only
    // the interior and endpoints need the flag.
    const double t = dot(r1, dl) / len2;
    if (t >= 0.0 && t <= 1.0) return {{}, true};
    return {};
  }
  const double n1 = norm(r1);
  const double n2 = norm(r2);
  const Vec3 c = cross(r1, r2);
  const double d = dot(r1, r2);
  // n1 n2 + r1.r2 cancels beside the segment interior (r1, r2 nearly
  // antiparallel); there the equal form |r1 x r2|^2 / (n1 n2 - r1.r2) is exact.
  const double s = d >= 0.0 ? n1 * n2 + d : dot(c, c) / (n1 * n2 - d);
  const double scale = constants::mu0 * current / (4.0 * constants::pi) * (n1 + n2) / (n1 * n2 * s);
  return {c * scale, false};
}

/// Connected polyline filament with a signed current.
struct CurrentPath {
  std::vector<Segment> segments;
  double current = 0.0;

  static CurrentPath polyline(const std::vector<Vec3>& vertices, double current) {
    CurrentPath path;
    path.current = current;
    for (std::size_t i = 0; i + 1 < vertices.size(); ++i) path.segments.push_back({vertices[i], vertices[i + 1]});
    path.validate();
    return path;
  }

  void validate() const {
    if (!std::isfinite(current)) throw std::invalid_argument("current path: current must be finite");
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const auto& s = segments[i];
      if (!is_finite(s.start) || !is_finite(s.end)) throw std::invalid_argument("current path: non-finite vertex");
      if (s.start == s.end) throw std::invalid_argument("current path: zero-length segment " + std::to_string(i));
      if (i > 0 && !(segments[i - 1].end == s.start))
        throw std::invalid_argument("current path: segment " + std::to_string(i) + " is not connected");
    }
  }
};

/// A set of filaments evaluated by superposition, e.g. a finite-width wire.
struct Conductor {
  std::vector<CurrentPath> paths;

  Conductor scaled(double factor) const {
    Conductor c = *this;
    for (auto& p : c.paths) p.current *= factor;
    return c;
  }
  friend Conductor operator+(Conductor a, const Conductor& b) {
    a.paths.insert(a.paths.end(), b.paths.begin(), b.paths.end());
    return a;
  }
};

inline FieldEval path_field(const CurrentPath& path, const Vec3& p) {
  FieldEval total;
  for (const auto& seg : path.segments) total += segment_field(seg, path.current, p);
  return total;
}

inline FieldEval path_field(const Conductor& conductor, const Vec3& p) {
  FieldEval total;
  for (const auto& path : conductor.paths) total += path_field(path, p);
  return total;
}

// ---------------------------------------------------------------------------
// Cross pattern

/// Four arms meeting at `center`: arm 1 along -x, arm 2 along +x,
/// arm 3 along -y, arm 4 along +y.
struct CrossPattern {
  double arm_length = 5e-3;
  double wire_width = 65e-6;
  int n_filaments = 9;
  Vec3 center;

  void validate() const {
    if (!(wire_width > 0.0)) throw std::invalid_argument("cross: wire_width must be > 0");
    if (!(arm_length > wire_width)) throw std::invalid_argument("cross: arm_length must exceed wire_width");
    if (n_filaments < 1 || n_filaments % 2 == 0) throw std::invalid_argument("cross: n_filaments must be odd and >= 1");
    if (!is_finite(center)) throw std::invalid_argument("cross: center must be finite");
  }
};

/// Current enters through the first named arm and leaves through the second.
enum class Route { P34, P14, P12, P13, P23, P24 };

inline constexpr std::array<Route, 6> kAllRoutes{Route::P34, Route::P14, Route::P12,
                                                 Route::P13, Route::P23, Route::P24};

inline std::string_view to_string(Route r) {
  switch (r) {
    case Route::P34: return "P34";
    case Route::P14: return "P14";
    case Route::P12: return "P12";
    case Route::P13: return "P13";
    case Route::P23: return "P23";
    case Route::P24: return "P24";
  }
  return "?";
}

inline Route parse_route(std::string_view s) {
  for (Route r : kAllRoutes)
    if (to_string(r) == s) return r;
  throw std::invalid_argument("unknown route '" + std::string(s) + "' (expected P34, P14, P12, P13, P23 or P24)");
}

inline Vec3 arm_direction(int arm) {
  switch (arm) {
    case 1: return {-1, 0, 0};
    case 2: return {1, 0, 0};
    case 3: return {0, -1, 0};
    case 4: return {0, 1, 0};
  }
  throw std::invalid_argument("arm index must be 1..4");
}

inline std::array<int, 2> route_arms(Route r) {
  switch (r) {
    case Route::P34: return {3, 4};
    case Route::P14: return {1, 4};
    case Route::P12: return {1, 2};
    case Route::P13: return {1, 3};
    case Route::P23: return {2, 3};
    case Route::P24: return {2, 4};
  }
  return {3, 4};
}

/// Lateral filament offsets: centers of `n` equal strips across the width.
inline std::vector<double> filament_offsets(const CrossPattern& pattern) {
  std::vector<double> out;
  const int n = pattern.n_filaments;
  for (int k = 0; k < n; ++k)
    out.push_back((k - 0.5 * (n - 1)) * pattern.wire_width / n);
  return out;
}

/// Filament bundle for `route`, `current` shared equally among filaments.
///
/// Straight routes are offset along the in-plane normal. For L routes the
/// filament with offset o turns at center + o*(dA + dB), which keeps the
/// filaments parallel and non-crossing; the o = 0 filament turns exactly at
/// the center (no fillet).
inline Conductor build_cross(const CrossPattern& pattern, Route route, double current) {
  pattern.validate();
  const auto [arm_in, arm_out] = route_arms(route);
  const Vec3 da = arm_direction(arm_in);
  const Vec3 db = arm_direction(arm_out);
  const bool straight = dot(da, db) < -0.5;
  const double per_filament = current / pattern.n_filaments;
  const double len = pattern.arm_length;
  const Vec3& c = pattern.center;

  Conductor out;
  for (double o : filament_offsets(pattern)) {
    std::vector<Vec3> v;
    if (straight) {
      const Vec3 normal = cross(Vec3{0, 0, 1}, db);
      v = {c + da * len + normal * o, c + normal * o, c + db * len + normal * o};
    } else {
      v = {c + da * len + db * o, c + (da + db) * o, c + db * len + da * o};
    }
    out.paths.push_back(CurrentPath::polyline(v, per_filament));
  }
  return out;
}

/// Single square loop of side `side` in the plane z = center.z, counter-clockwise seen from +z.
inline CurrentPath square_loop(double side, double current, const Vec3& center = {}) {
  const double h = 0.5 * side;
  return CurrentPath::polyline({center + Vec3{-h, -h, 0}, center + Vec3{h, -h, 0}, center + Vec3{h, h, 0},
                                center + Vec3{-h, h, 0}, center + Vec3{-h, -h, 0}},
                               current);
}

/// `turns` coincident square loops centered at the origin.
inline FieldEval square_coil_field(double side, int turns, double current, const Vec3& p) {
  if (!(side > 0.0) || turns < 1) throw std::invalid_argument("square coil: side must be > 0 and turns >= 1");
  FieldEval f = path_field(square_loop(side, current), p);
  f.b *= static_cast<double>(turns);
  return f;
}

// ---------------------------------------------------------------------------
// Rasters

struct FieldMap {
  GridSpec grid;
  Raster<double> bx, by, bz;
  std::size_t on_wire_pixels = 0;

  const Raster<double>& component(char c) const {
    switch (c) {
      case 'x': return bx;
      case 'y': return by;
      case 'z': return bz;
    }
    throw std::invalid_argument("field component must be x, y or z");
  }
};

inline FieldMap field_on_grid(const Conductor& conductor, const GridSpec& grid, int threads = 0) {
  grid.validate();
  FieldMap map{grid, Raster<double>(grid.nx, grid.ny), Raster<double>(grid.nx, grid.ny),
               Raster<double>(grid.nx, grid.ny), 0};
  std::vector<std::size_t> flagged(grid.ny, 0);
  parallel_for(grid.ny, threads, [&](std::size_t iy) {
    for (std::size_t ix = 0; ix < grid.nx; ++ix) {
      const FieldEval f = path_field(conductor, grid.pixel_center(ix, iy));
      map.bx(ix, iy) = f.b.x;
      map.by(ix, iy) = f.b.y;
      map.bz(ix, iy) = f.b.z;
      if (f.on_wire) ++flagged[iy];
    }
  });
  for (auto n : flagged) map.on_wire_pixels += n;
  return map;
}

inline FieldMap field_on_grid(const CurrentPath& path, const GridSpec& grid, int threads = 0) {
  return field_on_grid(Conductor{{path}}, grid, threads);
}

/// Replaces every `block`x`block` tile (partial tiles at the edges included)
/// by its mean, per component.
inline FieldMap block_average(const FieldMap& in, std::size_t block) {
  if (block <= 1) return in;
  FieldMap out = in;
  const auto& g = in.grid;
  for (std::size_t by0 = 0; by0 < g.ny; by0 += block) {
    for (std::size_t bx0 = 0; bx0 < g.nx; bx0 += block) {
      const std::size_t bx1 = std::min(g.nx, bx0 + block);
      const std::size_t by1 = std::min(g.ny, by0 + block);
      double sx = 0, sy = 0, sz = 0;
      for (std::size_t iy = by0; iy < by1; ++iy)
        for (std::size_t ix = bx0; ix < bx1; ++ix) {
          sx += in.bx(ix, iy);
          sy += in.by(ix, iy);
          sz += in.bz(ix, iy);
        }
      const double n = static_cast<double>((bx1 - bx0) * (by1 - by0));
      for (std::size_t iy = by0; iy < by1; ++iy)
        for (std::size_t ix = bx0; ix < bx1; ++ix) {
          out.bx(ix, iy) = sx / n;
          out.by(ix, iy) = sy / n;
          out.bz(ix, iy) = sz / n;
        }
    }
  }
  return out;
}

}  // namespace zfmag
