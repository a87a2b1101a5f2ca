#pragma once

// On-disk form of simulated field maps and fitted parameter maps.

#include <string>
#include <vector>

#include <json.hpp>

#include "zfmag/fitstack.hpp"
#include "zfmag/magnetostatics.hpp"
#include "zfmag/raster_io.hpp"
#include "zfmag/stack_io.hpp"

namespace zfmag {

inline std::vector<std::pair<std::string, std::string>> grid_csv_meta(const GridSpec& g) {
  return {{"nx", std::to_string(g.nx)},
          {"ny", std::to_string(g.ny)},
          {"pitch_m", format_number(g.pitch)},
          {"standoff_m", format_number(g.standoff_z)},
          {"origin_x_m", format_number(g.origin.x)},
          {"origin_y_m", format_number(g.origin.y)}};
}

/// bx/by/bz as float32 raw + sidecar, plus (optionally) field.csv with one
/// line per pixel.
inline void write_field_map(const FieldMap& map, const fs::path& dir, bool with_csv = true) {
  fs::create_directories(dir);
  for (char c : {'x', 'y', 'z'}) {
    nlohmann::json meta = {{"component", std::string("b") + c}, {"units", "T"}, {"pitch_m", map.grid.pitch},
                           {"standoff_m", map.grid.standoff_z},
                           {"origin_m", {map.grid.origin.x, map.grid.origin.y, map.grid.origin.z}},
                           {"on_wire_pixels", map.on_wire_pixels}};
    write_f32_raster(dir, std::string("b") + c, map.component(c), meta);
  }
  if (!with_csv) return;
  std::string csv;
  for (const auto& [k, v] : grid_csv_meta(map.grid)) csv += "# " + k + "=" + v + "\n";
  csv += "# units=T\nx_m,y_m,bx_T,by_T,bz_T\n";
  for (std::size_t iy = 0; iy < map.grid.ny; ++iy)
    for (std::size_t ix = 0; ix < map.grid.nx; ++ix) {
      const Vec3 p = map.grid.pixel_center(ix, iy);
      csv += join_numbers({p.x, p.y, map.bx(ix, iy), map.by(ix, iy), map.bz(ix, iy)});
      csv += '\n';
    }
  write_file_bytes(dir / "field.csv", csv);
}

/// Reads a field map directory. Values come back at float32 precision.
inline FieldMap read_field_map(const fs::path& dir) {
  FieldMap map;
  nlohmann::json meta;
  map.bx = read_f32_raster(dir, "bx", &meta);
  map.by = read_f32_raster(dir, "by");
  map.bz = read_f32_raster(dir, "bz");
  if (!map.bx.same_shape(map.by) || !map.bx.same_shape(map.bz)) throw IoError(dir.string() + ": component shapes differ");
  map.grid.nx = map.bx.nx;
  map.grid.ny = map.bx.ny;
  map.grid.pitch = meta.at("pitch_m").get<double>();
  map.grid.standoff_z = meta.at("standoff_m").get<double>();
  const auto& o = meta.at("origin_m");
  map.grid.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
  map.on_wire_pixels = meta.value("on_wire_pixels", std::size_t{0});
  return map;
}

struct MapQuantity {
  const char* name;
  const char* units;
  Raster<double> ParameterMaps::*member;
};

inline constexpr std::array<MapQuantity, 5> kMapQuantities{{
    {"shift", "T", &ParameterMaps::shift},
    {"shift_err", "T", &ParameterMaps::shift_err},
    {"contrast_pct", "%", &ParameterMaps::contrast_pct},
    {"fwhm", "T", &ParameterMaps::fwhm},
    {"offset", "counts", &ParameterMaps::offset},
}};

inline nlohmann::json quality_codes_json() {
  nlohmann::json j;
  for (int k = 0; k <= 5; ++k) j[std::to_string(k)] = to_string(static_cast<FitStatus>(k));
  return j;
}

/// `acquisition` (camera gain, exposure) is carried through so a report can
/// turn fitted offsets back into photon rates.
inline void write_parameter_maps(const ParameterMaps& maps, const Raster<std::uint8_t>& mask, const fs::path& dir,
                                 const nlohmann::json& acquisition = {}) {
  fs::create_directories(dir);
  nlohmann::json index = {{"format", "zfmag-maps-1"},
                          {"grid", grid_to_json(maps.grid)},
                          {"bin_factor", maps.bin_factor},
                          {"mask_encoding", "NaN in float rasters and CSV; mask.pgm 255 = masked, 0 = kept"},
                          {"quality_codes", quality_codes_json()},
                          {"quantities", nlohmann::json::array()}};
  if (!acquisition.is_null()) index["acquisition"] = acquisition;
  for (const auto& q : kMapQuantities) {
    const Raster<double>& r = maps.*(q.member);
    write_f32_raster(dir, q.name, r,
                     {{"quantity", q.name}, {"units", q.units}, {"bin_factor", maps.bin_factor},
                      {"pitch_m", maps.grid.pitch}, {"masked_value", "NaN"}});
    auto meta = grid_csv_meta(maps.grid);
    meta.push_back({"quantity", q.name});
    meta.push_back({"units", q.units});
    meta.push_back({"bin_factor", std::to_string(maps.bin_factor)});
    meta.push_back({"masked_value", "nan"});
    write_file_bytes(dir / (std::string(q.name) + ".csv"), encode_csv_matrix(r, meta));
    index["quantities"].push_back({{"name", q.name}, {"units", q.units}});
  }
  write_file_bytes(dir / "quality.pgm", encode_pgm(maps.quality));
  Raster<std::uint8_t> mask_img = mask;
  for (auto& v : mask_img.data) v = v ? 255 : 0;
  write_file_bytes(dir / "mask.pgm", encode_pgm(mask_img));
  write_json(dir / "maps.json", index);
}

struct LoadedMaps {
  ParameterMaps maps;
  Raster<std::uint8_t> mask;
  nlohmann::json index;
};

inline LoadedMaps read_parameter_maps(const fs::path& dir) {
  LoadedMaps out;
  out.index = read_json(dir / "maps.json");
  const auto& index = out.index;
  try {
    out.maps.grid = grid_from_json(index.at("grid"));
    out.maps.bin_factor = index.at("bin_factor").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError((dir / "maps.json").string() + ": " + e.what());
  }
  for (const auto& q : kMapQuantities) {
    const auto& r = out.maps.*(q.member) = read_f32_raster(dir, q.name);
    if (r.nx != out.maps.grid.nx || r.ny != out.maps.grid.ny)
      throw IoError(dir.string() + ": " + q.name + " does not match the grid");
  }
  auto to_u8 = [](const PgmImage& img) {
    Raster<std::uint8_t> r(img.width, img.height);
    for (std::size_t i = 0; i < r.size(); ++i) r.data[i] = static_cast<std::uint8_t>(img.samples.data[i]);
    return r;
  };
  out.maps.quality = to_u8(read_pgm(dir / "quality.pgm"));
  out.mask = to_u8(read_pgm(dir / "mask.pgm"));
  for (auto& v : out.mask.data) v = v ? 1 : 0;
  return out;
}

}  // namespace zfmag
