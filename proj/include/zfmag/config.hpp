#pragma once

// Run configuration loaded from TOML. Every physical key carries its unit as
// a suffix (standoff_m, b_start_T, ...); unknown sections and keys are errors.

#include <cstdint>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <toml.hpp>

#include "zfmag/analysis.hpp"
#include "zfmag/fitstack.hpp"
#include "zfmag/synth.hpp"

namespace zfmag {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AnalysisConfig {
  double p_f = 0.70;
  double g_factor = constants::nv_g_factor;
  long profile_row = -1;  // -1: middle row
  long roi_ix = -1;       // -1: automatic
  long roi_iy = -1;
  std::size_t roi_nx = 1;
  std::size_t roi_ny = 1;
};

struct RoundtripConfig {
  bool noisy = false;
  double tol_max_abs_T = 1e-9;
  double tol_rel = 1e-6;
  double min_pearson_r = 0.98;
  double max_rmse_frac = 0.05;
  std::vector<double> currents_A;
};

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 0;
  std::string out_dir = "zfmag_out";
  Route route = Route::P34;
  double current_A = 0.5;
  bool noiseless = false;
  bool write_csv = true;

  SceneConfig scene;
  ScanProtocol protocol;
  CameraModel camera;
  std::size_t bin_factor = 16;
  FitOptions fit;
  QualityThresholds quality;
  AnalysisConfig analysis;
  RoundtripConfig roundtrip;

  void validate() const {
    try {
      scene.validate();
      protocol.validate();
      camera.validate();
      quality.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    if (bin_factor < 1) throw ConfigError("fit.bin_factor must be >= 1");
    if (fit.max_iter < 1) throw ConfigError("fit.max_iter must be >= 1");
    if (!std::isfinite(current_A)) throw ConfigError("run.current_A must be finite");
  }
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& config_schema() {
  static const std::map<std::string, std::set<std::string>> schema{
      {"run", {"seed", "threads", "out_dir", "route", "current_A", "noiseless", "write_csv"}},
      {"pattern", {"arm_length_m", "wire_width_m", "n_filaments", "center_x_m", "center_y_m"}},
      {"grid", {"nx", "ny", "pitch_m", "standoff_m"}},
      {"scene",
       {"base_rate_photons_per_s", "cluster_sigma", "cluster_cell_m", "contrast_fraction", "fwhm_T", "center_T",
        "width_slope", "contrast_slope_per_T", "knee_T", "field_block"}},
      {"protocol", {"b_start_T", "b_stop_T", "n_steps", "exposure_s"}},
      {"camera", {"bit_depth", "gain_photons_per_count", "read_noise_counts"}},
      {"fit",
       {"bin_factor", "max_iter", "rss_rtol", "step_rtol", "poisson_weights", "min_contrast_pct", "max_fwhm_T",
        "max_center_err_T"}},
      {"analysis", {"p_f", "g_factor", "profile_row", "roi_ix", "roi_iy", "roi_nx", "roi_ny"}},
      {"roundtrip", {"noisy", "tol_max_abs_T", "tol_rel", "min_pearson_r", "max_rmse_frac", "currents_A"}},
  };
  return schema;
}

class TableReader {
 public:
  TableReader(const toml::table& root, std::string section) : section_(std::move(section)) {
    if (const auto* t = root.get(section_)) table_ = t->as_table();
  }

  template <class T>
  void get(const std::string& key, T& out) const {
    if (!table_) return;
    const toml::node* node = table_->get(key);
    if (!node) return;
    const std::string where = section_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      auto v = node->value_exact<bool>();
      if (!v) throw ConfigError(where + ": expected a boolean");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::string>) {
      auto v = node->value_exact<std::string>();
      if (!v) throw ConfigError(where + ": expected a string");
      out = *v;
    } else if constexpr (std::is_floating_point_v<T>) {
      auto v = node->value<double>();
      if (!v || node->is_boolean()) throw ConfigError(where + ": expected a number");
      out = *v;
    } else if constexpr (std::is_same_v<T, std::vector<double>>) {
      const auto* arr = node->as_array();
      if (!arr) throw ConfigError(where + ": expected an array of numbers");
      out.clear();
      for (const auto& e : *arr) {
        auto v = e.value<double>();
        if (!v || e.is_boolean()) throw ConfigError(where + ": expected an array of numbers");
        out.push_back(*v);
      }
    } else {
      auto v = node->value_exact<std::int64_t>();
      if (!v) throw ConfigError(where + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (*v < 0) throw ConfigError(where + ": must be non-negative");
      out = static_cast<T>(*v);
    }
  }

 private:
  std::string section_;
  const toml::table* table_ = nullptr;
};

}  // namespace detail

inline RunConfig parse_config(std::string_view text, const std::string& source = "<config>") {
  toml::table root;
  try {
    root = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    throw ConfigError(source + ": " + std::string(e.description()));
  }
  const auto& schema = detail::config_schema();
  for (const auto& [section, node] : root) {
    const std::string name(section.str());
    const auto it = schema.find(name);
    if (it == schema.end()) throw ConfigError(source + ": unknown section [" + name + "]");
    if (!node.is_table()) throw ConfigError(source + ": [" + name + "] must be a table");
    for (const auto& [key, value] : *node.as_table())
      if (!it->second.contains(std::string(key.str())))
        throw ConfigError(source + ": unknown key " + name + "." + std::string(key.str()));
  }

  RunConfig cfg;
  using detail::TableReader;
  TableReader run(root, "run"), pattern(root, "pattern"), grid(root, "grid"), scene(root, "scene"),
      protocol(root, "protocol"), camera(root, "camera"), fit(root, "fit"), analysis(root, "analysis"),
      roundtrip(root, "roundtrip");

  std::int64_t seed = static_cast<std::int64_t>(cfg.seed);
  run.get("seed", seed);
  if (seed < 0) throw ConfigError("run.seed must be non-negative");
  cfg.seed = static_cast<std::uint64_t>(seed);
  run.get("threads", cfg.threads);
  run.get("out_dir", cfg.out_dir);
  std::string route(to_string(cfg.route));
  run.get("route", route);
  try {
    cfg.route = parse_route(route);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("run.route: ") + e.what());
  }
  run.get("current_A", cfg.current_A);
  run.get("noiseless", cfg.noiseless);
  run.get("write_csv", cfg.write_csv);

  auto& pat = cfg.scene.pattern;
  pattern.get("arm_length_m", pat.arm_length);
  pattern.get("wire_width_m", pat.wire_width);
  pattern.get("n_filaments", pat.n_filaments);
  pattern.get("center_x_m", pat.center.x);
  pattern.get("center_y_m", pat.center.y);

  auto& g = cfg.scene.grid;
  std::size_t nx = g.nx, ny = g.ny;
  double pitch = g.pitch, standoff = g.standoff_z;
  grid.get("nx", nx);
  grid.get("ny", ny);
  grid.get("pitch_m", pitch);
  grid.get("standoff_m", standoff);
  g = GridSpec::centered(nx, ny, pitch, standoff);

  auto& sc = cfg.scene;
  double contrast = peak_contrast(sc.feature), width = fwhm(sc.feature), center = sc.feature.center;
  scene.get("base_rate_photons_per_s", sc.base_rate);
  scene.get("cluster_sigma", sc.clusters.sigma);
  scene.get("cluster_cell_m", sc.clusters.cell);
  scene.get("contrast_fraction", contrast);
  scene.get("fwhm_T", width);
  scene.get("center_T", center);
  sc.feature = ZeroFieldFeature::dip(1.0, contrast, width, center);
  scene.get("width_slope", sc.response.width_slope);
  scene.get("contrast_slope_per_T", sc.response.contrast_slope);
  scene.get("knee_T", sc.response.knee);
  scene.get("field_block", sc.field_block);

  protocol.get("b_start_T", cfg.protocol.b_start);
  protocol.get("b_stop_T", cfg.protocol.b_stop);
  protocol.get("n_steps", cfg.protocol.n_steps);
  protocol.get("exposure_s", cfg.protocol.exposure_s);

  camera.get("bit_depth", cfg.camera.bit_depth);
  camera.get("gain_photons_per_count", cfg.camera.gain);
  camera.get("read_noise_counts", cfg.camera.read_noise_rms);

  fit.get("bin_factor", cfg.bin_factor);
  fit.get("max_iter", cfg.fit.max_iter);
  fit.get("rss_rtol", cfg.fit.rss_rtol);
  fit.get("step_rtol", cfg.fit.step_rtol);
  fit.get("poisson_weights", cfg.fit.poisson_weights);
  fit.get("min_contrast_pct", cfg.quality.min_contrast_pct);
  fit.get("max_fwhm_T", cfg.quality.max_fwhm);
  fit.get("max_center_err_T", cfg.quality.max_center_err);

  analysis.get("p_f", cfg.analysis.p_f);
  analysis.get("g_factor", cfg.analysis.g_factor);
  analysis.get("profile_row", cfg.analysis.profile_row);
  analysis.get("roi_ix", cfg.analysis.roi_ix);
  analysis.get("roi_iy", cfg.analysis.roi_iy);
  analysis.get("roi_nx", cfg.analysis.roi_nx);
  analysis.get("roi_ny", cfg.analysis.roi_ny);

  roundtrip.get("noisy", cfg.roundtrip.noisy);
  roundtrip.get("tol_max_abs_T", cfg.roundtrip.tol_max_abs_T);
  roundtrip.get("tol_rel", cfg.roundtrip.tol_rel);
  roundtrip.get("min_pearson_r", cfg.roundtrip.min_pearson_r);
  roundtrip.get("max_rmse_frac", cfg.roundtrip.max_rmse_frac);
  roundtrip.get("currents_A", cfg.roundtrip.currents_A);

  cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

}  // namespace zfmag
