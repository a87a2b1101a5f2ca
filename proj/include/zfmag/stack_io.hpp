#pragma once

// Stack directory layout: manifest.json + frame_0000.pgm, frame_0001.pgm, ...
// Frames are 16-bit big-endian binary PGM (maxval 65535) holding camera
// counts; the manifest lists {file, b_scan_T} in scan order plus grid and
// camera metadata.

#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "zfmag/raster_io.hpp"
#include "zfmag/synth.hpp"

namespace zfmag {

inline constexpr const char* kStackFormat = "zfmag-stack-1";

struct StackLoadError : IoError {
  using IoError::IoError;
};

inline std::string frame_file_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.pgm", k);
  return buf;
}

inline nlohmann::json grid_to_json(const GridSpec& g) {
  return {{"nx", g.nx}, {"ny", g.ny}, {"pitch_m", g.pitch}, {"standoff_m", g.standoff_z},
          {"origin_m", {g.origin.x, g.origin.y, g.origin.z}}};
}

inline GridSpec grid_from_json(const nlohmann::json& j) {
  GridSpec g;
  g.nx = j.at("nx").get<std::size_t>();
  g.ny = j.at("ny").get<std::size_t>();
  g.pitch = j.at("pitch_m").get<double>();
  g.standoff_z = j.at("standoff_m").get<double>();
  const auto& o = j.at("origin_m");
  g.origin = {o.at(0).get<double>(), o.at(1).get<double>(), o.at(2).get<double>()};
  return g;
}

inline nlohmann::json camera_to_json(const CameraModel& c) {
  return {{"bit_depth", c.bit_depth}, {"full_well_counts", c.full_well_counts()},
          {"gain_photons_per_count", c.gain}, {"read_noise_rms_counts", c.read_noise_rms}};
}

inline CameraModel camera_from_json(const nlohmann::json& j) {
  CameraModel c;
  c.bit_depth = j.at("bit_depth").get<int>();
  c.gain = j.at("gain_photons_per_count").get<double>();
  c.read_noise_rms = j.at("read_noise_rms_counts").get<double>();
  if (j.contains("full_well_counts") && j.at("full_well_counts").get<int>() != c.full_well_counts())
    throw std::invalid_argument("full_well_counts does not match bit_depth");
  return c;
}

/// Everything in a manifest except the pixel data.
struct StackHeader {
  std::vector<std::string> files;
  std::vector<double> b_values;
  std::vector<std::size_t> saturated;
  GridSpec grid;
  CameraModel camera;
  double exposure_s = 1.0;
  nlohmann::json extra;
};

inline nlohmann::json manifest_json(const StackHeader& h) {
  nlohmann::json frames = nlohmann::json::array();
  for (std::size_t k = 0; k < h.files.size(); ++k)
    frames.push_back({{"file", h.files[k]}, {"b_scan_T", h.b_values[k]},
                      {"saturated_pixels", k < h.saturated.size() ? h.saturated[k] : 0}});
  nlohmann::json j = {{"format", kStackFormat}, {"frames", frames}, {"grid", grid_to_json(h.grid)},
                      {"camera", camera_to_json(h.camera)}, {"exposure_s", h.exposure_s},
                      {"sample_encoding", "PGM P5, 16-bit big-endian, maxval 65535"}};
  if (!h.extra.is_null()) j["extra"] = h.extra;
  return j;
}

inline StackHeader read_stack_header(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  if (!fs::exists(mpath)) throw StackLoadError(mpath.string() + ": manifest not found");
  nlohmann::json j;
  try {
    j = read_json(mpath);
  } catch (const IoError& e) {
    throw StackLoadError(e.what());
  }
  StackHeader h;
  try {
    if (j.at("format").get<std::string>() != kStackFormat)
      throw StackLoadError(mpath.string() + ": unsupported format '" + j.at("format").get<std::string>() + "'");
    for (const auto& f : j.at("frames")) {
      h.files.push_back(f.at("file").get<std::string>());
      h.b_values.push_back(f.at("b_scan_T").get<double>());
      h.saturated.push_back(f.value("saturated_pixels", std::size_t{0}));
    }
    h.grid = grid_from_json(j.at("grid"));
    h.camera = camera_from_json(j.at("camera"));
    h.exposure_s = j.at("exposure_s").get<double>();
    if (j.contains("extra")) h.extra = j.at("extra");
    h.grid.validate();
    h.camera.validate();
  } catch (const nlohmann::json::exception& e) {
    throw StackLoadError(mpath.string() + ": malformed manifest: " + e.what());
  } catch (const std::invalid_argument& e) {
    throw StackLoadError(mpath.string() + ": malformed manifest: " + e.what());
  }
  if (h.files.empty()) throw StackLoadError(mpath.string() + ": no frames listed");
  for (std::size_t k = 1; k < h.b_values.size(); ++k)
    if (!(h.b_values[k] > h.b_values[k - 1]))
      throw StackLoadError(mpath.string() + ": b_scan_T not strictly increasing at frame " + std::to_string(k));
  return h;
}

/// Loads and checks frame `k` of a stack directory.
inline Raster<std::uint16_t> read_stack_frame(const fs::path& dir, const StackHeader& h, std::size_t k) {
  const fs::path path = dir / h.files.at(k);
  PgmImage img;
  try {
    img = read_pgm(path);
  } catch (const IoError& e) {
    throw StackLoadError("frame " + std::to_string(k) + " (" + h.files[k] + "): " + e.what());
  }
  if (img.width != h.grid.nx || img.height != h.grid.ny)
    throw StackLoadError("frame " + std::to_string(k) + " (" + h.files[k] + "): dimensions " +
                         std::to_string(img.width) + "x" + std::to_string(img.height) + " do not match grid " +
                         std::to_string(h.grid.nx) + "x" + std::to_string(h.grid.ny));
  const auto full_well = static_cast<std::uint16_t>(h.camera.full_well_counts());
  for (auto v : img.samples.data)
    if (v > full_well)
      throw StackLoadError("frame " + std::to_string(k) + " (" + h.files[k] + "): count " + std::to_string(v) +
                           " exceeds full well " + std::to_string(full_well));
  return std::move(img.samples);
}

inline void write_stack_frame(const fs::path& dir, std::size_t k, const Raster<std::uint16_t>& frame) {
  write_file_bytes(dir / frame_file_name(k), encode_pgm(frame));
}

inline void write_stack(const CountStack& stack, const fs::path& dir, const nlohmann::json& extra = {}) {
  stack.validate();
  fs::create_directories(dir);
  StackHeader h;
  h.b_values = stack.b_values;
  h.saturated = stack.saturated;
  h.grid = stack.grid;
  h.camera = stack.camera;
  h.exposure_s = stack.exposure_s;
  h.extra = extra;
  for (std::size_t k = 0; k < stack.frames.size(); ++k) {
    h.files.push_back(frame_file_name(k));
    write_stack_frame(dir, k, stack.frames[k]);
  }
  write_json(dir / "manifest.json", manifest_json(h));
}

inline CountStack read_stack(const fs::path& dir) {
  const StackHeader h = read_stack_header(dir);
  CountStack stack;
  stack.b_values = h.b_values;
  stack.camera = h.camera;
  stack.grid = h.grid;
  stack.exposure_s = h.exposure_s;
  stack.saturated = h.saturated;
  for (std::size_t k = 0; k < h.files.size(); ++k) stack.frames.push_back(read_stack_frame(dir, h, k));
  return stack;
}

}  // namespace zfmag
