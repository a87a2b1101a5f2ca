#pragma once

// End-to-end commands: simulate, synth, fit, report, roundtrip. Each returns
// a JSON summary plus human-readable text; files are written only under the
// output directory it is given.

#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "zfmag/analysis.hpp"
#include "zfmag/config.hpp"
#include "zfmag/fitstack.hpp"
#include "zfmag/map_io.hpp"
#include "zfmag/stack_io.hpp"
#include "zfmag/synth.hpp"

namespace zfmag {

struct Outcome {
  nlohmann::json summary;
  std::string text;
  bool passed = true;
};

/// A failure inside one pipeline stage, tagged with the stage name.
struct StageError : std::runtime_error {
  std::string stage;
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error("stage '" + stage_name + "': " + what), stage(std::move(stage_name)) {}
};

template <class F>
auto run_stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

// ---------------------------------------------------------------------------
// helpers

inline NoiseMode synth_noise_mode(const RunConfig& cfg) {
  return cfg.noiseless ? NoiseMode::Noiseless : NoiseMode::Poisson;
}

inline FieldMap simulate_field(const RunConfig& cfg, double current) {
  return field_on_grid(build_cross(cfg.scene.pattern, cfg.route, current), cfg.scene.grid, cfg.threads);
}

inline double max_abs(const Raster<double>& r) {
  double m = 0.0;
  for (double v : r.data)
    if (std::isfinite(v)) m = std::max(m, std::abs(v));
  return m;
}

inline std::string si(double v, const char* unit) { return format_number(v) + " " + unit; }

inline nlohmann::json pattern_json(const CrossPattern& p) {
  return {{"arm_length_m", p.arm_length}, {"wire_width_m", p.wire_width}, {"n_filaments", p.n_filaments},
          {"center_m", {p.center.x, p.center.y, p.center.z}}};
}

inline nlohmann::json response_json(const TransverseResponse& r) {
  return {{"width_slope", r.width_slope}, {"contrast_slope_per_T", r.contrast_slope}, {"knee_T", r.knee}};
}

/// Renders the stack frame by frame and bins each frame immediately, so the
/// full-resolution stack is never held in memory.
inline BinnedStack synth_binned(const Scene& scene, const ScanProtocol& protocol, const CameraModel& camera,
                                NoiseMode mode, std::uint64_t seed, std::size_t factor, int threads = 0) {
  protocol.validate();
  camera.validate();
  BinnedStack out;
  out.b_values = protocol.b_values();
  out.bin_factor = factor;
  out.grid = scene.grid.binned(factor);
  const auto features = pixel_features(scene);
  for (std::size_t k = 0; k < out.b_values.size(); ++k) {
    const auto idx = static_cast<std::uint32_t>(k);
    if (mode == NoiseMode::Expected) {
      auto f = detail::render_frame_impl<double>(scene, features, out.b_values[k], camera, protocol.exposure_s, mode,
                                                 seed, idx, threads);
      out.frames.push_back(bin_frame(f.counts, factor));
    } else {
      auto f = detail::render_frame_impl<std::uint16_t>(scene, features, out.b_values[k], camera,
                                                        protocol.exposure_s, mode, seed, idx, threads);
      out.frames.push_back(bin_frame(f.counts, factor));
    }
  }
  return out;
}

inline nlohmann::json status_counts_json(const Raster<std::uint8_t>& quality) {
  std::array<std::size_t, 6> n{};
  for (auto q : quality.data) ++n.at(q);
  nlohmann::json j;
  for (std::size_t k = 0; k < n.size(); ++k) j[std::string(to_string(static_cast<FitStatus>(k)))] = n[k];
  return j;
}

// ---------------------------------------------------------------------------
// simulate

inline Outcome cmd_simulate(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const FieldMap map = simulate_field(cfg, cfg.current_A);
  write_field_map(map, out, cfg.write_csv);
  Outcome o;
  o.summary = {{"command", "simulate"},
               {"route", to_string(cfg.route)},
               {"current_A", cfg.current_A},
               {"grid", grid_to_json(map.grid)},
               {"pattern", pattern_json(cfg.scene.pattern)},
               {"peak_abs_bz_T", max_abs(map.bz)},
               {"peak_abs_bx_T", max_abs(map.bx)},
               {"peak_abs_by_T", max_abs(map.by)},
               {"on_wire_pixels", map.on_wire_pixels},
               {"files", {"bx.f32", "by.f32", "bz.f32"}}};
  write_json(out / "summary.json", o.summary);
  o.text = "simulate: route " + std::string(to_string(cfg.route)) + " at " + si(cfg.current_A, "A") + ", grid " +
           std::to_string(map.grid.nx) + "x" + std::to_string(map.grid.ny) + " at standoff " +
           si(map.grid.standoff_z, "m") + "\n  peak |Bz| = " + si(max_abs(map.bz), "T") +
           "\n  wrote " + out.string() + "\n";
  return o;
}

// ---------------------------------------------------------------------------
// synth

inline Outcome cmd_synth(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  const Scene scene = make_scene(cfg.scene, cfg.current_A, cfg.route, cfg.seed, cfg.threads);
  const auto features = pixel_features(scene);
  const NoiseMode mode = synth_noise_mode(cfg);
  fs::create_directories(out);

  StackHeader h;
  h.grid = scene.grid;
  h.camera = cfg.camera;
  h.exposure_s = cfg.protocol.exposure_s;
  h.b_values = cfg.protocol.b_values();
  std::size_t saturated = 0;
  for (std::size_t k = 0; k < h.b_values.size(); ++k) {
    auto f = detail::render_frame_impl<std::uint16_t>(scene, features, h.b_values[k], cfg.camera,
                                                      cfg.protocol.exposure_s, mode, cfg.seed,
                                                      static_cast<std::uint32_t>(k), cfg.threads);
    write_stack_frame(out, k, f.counts);
    h.files.push_back(frame_file_name(k));
    h.saturated.push_back(f.saturated);
    saturated += f.saturated;
  }
  h.extra = {{"seed", cfg.seed},
             {"route", to_string(cfg.route)},
             {"current_A", cfg.current_A},
             {"noise", to_string(mode)},
             {"pattern", pattern_json(cfg.scene.pattern)},
             {"feature_base", cfg.scene.feature},
             {"response", response_json(cfg.scene.response)},
             {"base_rate_photons_per_s", cfg.scene.base_rate},
             {"cluster_sigma", cfg.scene.clusters.sigma},
             {"cluster_cell_m", cfg.scene.clusters.cell},
             {"field_block", cfg.scene.field_block}};
  write_json(out / "manifest.json", manifest_json(h));

  Outcome o;
  o.summary = {{"command", "synth"},     {"frames", h.files.size()},
               {"grid", grid_to_json(h.grid)}, {"noise", to_string(mode)},
               {"seed", cfg.seed},       {"saturated_pixels", saturated}};
  o.text = "synth: " + std::to_string(h.files.size()) + " frames " + std::to_string(h.grid.nx) + "x" +
           std::to_string(h.grid.ny) + " (" + std::string(to_string(mode)) + ", seed " + std::to_string(cfg.seed) +
           "), " + std::to_string(saturated) + " saturated samples\n  wrote " + out.string() + "\n";
  return o;
}

// ---------------------------------------------------------------------------
// fit

inline Outcome cmd_fit(const RunConfig& cfg, const fs::path& stack_dir, const fs::path& out) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const StackHeader h = read_stack_header(stack_dir);
  if (h.files.size() < 5) throw StackLoadError("stack has " + std::to_string(h.files.size()) + " frames; need >= 5");

  BinnedStack binned;
  binned.b_values = h.b_values;
  binned.bin_factor = cfg.bin_factor;
  binned.grid = h.grid.binned(cfg.bin_factor);
  binned.frames.resize(h.files.size());
  for (std::size_t k = 0; k < h.files.size(); ++k)
    binned.frames[k] = bin_frame(read_stack_frame(stack_dir, h, k), cfg.bin_factor);
  const auto t_load = std::chrono::steady_clock::now();

  std::vector<int> iters;
  const ParameterMaps maps = fit_all(binned, cfg.fit, cfg.threads, &iters);
  const auto mask = quality_mask(maps, cfg.quality);
  const ParameterMaps masked = apply_mask(maps, mask);
  const auto t_fit = std::chrono::steady_clock::now();

  const nlohmann::json acquisition = {{"camera", camera_to_json(h.camera)}, {"exposure_s", h.exposure_s},
                                      {"frames", h.files.size()}};
  write_parameter_maps(masked, mask, out, acquisition);

  const FitSummary fs_ = summarize(maps, iters);
  std::size_t kept = 0;
  for (auto m : mask.data) kept += m == 0;
  Outcome o;
  // no timing here: the summary file must be identical across reruns
  o.summary = {{"command", "fit"},
               {"superpixels", {{"nx", maps.grid.nx}, {"ny", maps.grid.ny}, {"total", fs_.pixels}}},
               {"bin_factor", cfg.bin_factor},
               {"fit_status", status_counts_json(maps.quality)},
               {"converged_fraction", fs_.converged_fraction()},
               {"kept_fraction", static_cast<double>(kept) / static_cast<double>(fs_.pixels)},
               {"mean_iterations", fs_.mean_iterations},
               {"thresholds",
                {{"min_contrast_pct", cfg.quality.min_contrast_pct},
                 {"max_fwhm_T", cfg.quality.max_fwhm},
                 {"max_center_err_T", cfg.quality.max_center_err}}}};
  write_json(out / "summary.json", o.summary);

  using ms = std::chrono::duration<double, std::milli>;
  o.text = "fit: " + std::to_string(maps.grid.nx) + "x" + std::to_string(maps.grid.ny) + " superpixels (bin " +
           std::to_string(cfg.bin_factor) + "), converged " + format_number(100.0 * fs_.converged_fraction()) +
           "%, kept " + std::to_string(kept) + "\n  load+bin " + format_number(std::round(ms(t_load - t0).count())) +
           " ms, fit " + format_number(std::round(ms(t_fit - t_load).count())) + " ms\n  wrote " + out.string() +
           "\n";
  return o;
}

// ---------------------------------------------------------------------------
// report

struct ReportInputs {
  fs::path maps_dir;
  std::optional<fs::path> sim_dir;
  std::vector<std::pair<double, fs::path>> series;  // (current A, maps dir)
  std::optional<long> row;
};

/// Superpixel with the largest |shift| in `maps` that is usable in every map
/// of the series.
inline Roi auto_roi(const std::vector<std::pair<double, ParameterMaps>>& series) {
  const auto& ref = std::max_element(series.begin(), series.end(), [](const auto& a, const auto& b) {
                      return std::abs(a.first) < std::abs(b.first);
                    })->second;
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < ref.shift.size(); ++i) {
    bool ok = true;
    for (const auto& [c, m] : series) ok = ok && m.usable(i);
    if (!ok) continue;
    if (!best || std::abs(ref.shift.data[i]) > std::abs(ref.shift.data[*best])) best = i;
  }
  if (!best) throw std::invalid_argument("linearity: no superpixel is usable at every current");
  return {*best % ref.grid.nx, *best / ref.grid.nx, 1, 1};
}

inline nlohmann::json line_json(const LinearFit& f) {
  return {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}, {"n", f.n}};
}

inline nlohmann::json linearity_json(const LinearityReport& rep) {
  return {{"roi", {{"ix", rep.roi.ix}, {"iy", rep.roi.iy}, {"nx", rep.roi.nx}, {"ny", rep.roi.ny}}},
          {"currents_A", rep.currents},
          {"shift_T", rep.shift},
          {"fwhm_T", rep.fwhm},
          {"contrast_pct", rep.contrast_pct},
          {"shift_fit_T_per_A", line_json(rep.shift_fit)},
          {"fwhm_fit_T_per_A", line_json(rep.fwhm_fit)},
          {"contrast_fit_pct_per_A", line_json(rep.contrast_fit)},
          {"broadening_min_current_A", rep.broadening_min_current}};
}

inline std::string linearity_text(const LinearityReport& rep) {
  return "  linearity at superpixel (" + std::to_string(rep.roi.ix) + "," + std::to_string(rep.roi.iy) +
         "): shift slope " + si(rep.shift_fit.slope, "T/A") + ", R^2 " + format_number(rep.shift_fit.r2) +
         "\n    fwhm slope " + si(rep.fwhm_fit.slope, "T/A") + " (R^2 " + format_number(rep.fwhm_fit.r2) +
         "), contrast slope " + format_number(rep.contrast_fit.slope) + " %/A (R^2 " +
         format_number(rep.contrast_fit.r2) + ")\n";
}

inline nlohmann::json comparison_json(const Comparison& c) {
  return {{"rmse_T", c.rmse}, {"pearson_r", c.pearson_r}, {"max_abs_err_T", c.max_abs_err}, {"pixels", c.pixels}};
}

/// Detected photons per second in each superpixel, from the fitted offset
/// (mean counts per camera pixel).
inline Raster<double> photon_rate_map(const ParameterMaps& maps, double gain, double exposure_s) {
  Raster<double> rate(maps.offset.nx, maps.offset.ny, kMasked);
  const double pixels = static_cast<double>(maps.bin_factor * maps.bin_factor);
  for (std::size_t i = 0; i < rate.size(); ++i) rate.data[i] = maps.offset.data[i] * gain * pixels / exposure_s;
  return rate;
}

inline Outcome cmd_report(const RunConfig& cfg, const ReportInputs& in, const fs::path& out) {
  cfg.validate();
  const LoadedMaps loaded = read_parameter_maps(in.maps_dir);
  const ParameterMaps& maps = loaded.maps;
  const auto& g = maps.grid;

  const long row = in.row.value_or(cfg.analysis.profile_row < 0 ? static_cast<long>(g.ny / 2) : cfg.analysis.profile_row);
  if (row < 0 || static_cast<std::size_t>(row) >= g.ny)
    throw std::out_of_range("report: row " + std::to_string(row) + " outside 0.." + std::to_string(g.ny - 1));
  const auto r = static_cast<std::size_t>(row);

  fs::create_directories(out);
  Outcome o;
  o.summary = {{"command", "report"}, {"superpixels", {{"nx", g.nx}, {"ny", g.ny}}}, {"bin_factor", maps.bin_factor}};
  o.text = "report: " + std::to_string(g.nx) + "x" + std::to_string(g.ny) + " superpixels\n";

  // cross sections
  {
    const auto shift = cross_section(maps.shift, g, r);
    const auto contrast = cross_section(maps.contrast_pct, g, r);
    const auto width = cross_section(maps.fwhm, g, r);
    std::string csv = "# row=" + std::to_string(r) + "\n# units=x_um:um,shift:T,contrast:%,fwhm:T\n"
                      "index,x_um,shift_T,contrast_pct,fwhm_T\n";
    for (std::size_t k = 0; k < shift.size(); ++k)
      csv += std::to_string(k) + "," + join_numbers({shift[k].x_um, shift[k].value, contrast[k].value, width[k].value}) +
             "\n";
    write_file_bytes(out / "profile.csv", csv);
    o.summary["profile"] = {{"row", r}, {"file", "profile.csv"}, {"points", shift.size()}};
    o.text += "  profile of row " + std::to_string(r) + " -> profile.csv\n";
  }

  // sensitivity
  SensitivityInputs consts;
  consts.p_f = cfg.analysis.p_f;
  consts.g_factor = cfg.analysis.g_factor;
  if (loaded.index.contains("acquisition")) {
    const auto& acq = loaded.index.at("acquisition");
    const double gain = acq.at("camera").at("gain_photons_per_count").get<double>();
    const double exposure = acq.at("exposure_s").get<double>();
    const Raster<double> rate = photon_rate_map(maps, gain, exposure);
    const Raster<double> smap = sensitivity_map(maps, rate, consts);
    std::vector<double> vals, widths, contrasts, rates;
    for (std::size_t i = 0; i < smap.size(); ++i)
      if (std::isfinite(smap.data[i])) {
        vals.push_back(smap.data[i]);
        widths.push_back(maps.fwhm.data[i]);
        contrasts.push_back(maps.contrast_pct.data[i] / 100.0);
        rates.push_back(rate.data[i]);
      }
    auto mean = [](const std::vector<double>& v) {
      double s = 0;
      for (double x : v) s += x;
      return v.empty() ? kMasked : s / static_cast<double>(v.size());
    };
    nlohmann::json sj = {{"units", "T/sqrt(Hz)"}, {"pixels", vals.size()}, {"p_f", consts.p_f},
                         {"rate_units", "detected photons/s per superpixel"}};
    if (!vals.empty()) {
      SensitivityInputs at_mean = consts;
      at_mean.gamma_fwhm = mean(widths);
      at_mean.contrast = mean(contrasts);
      at_mean.photon_rate = mean(rates);
      sj["map_mean"] = mean(vals);
      sj["map_median"] = median(vals);
      sj["at_mean_parameters"] = sensitivity(at_mean);
      sj["mean_fwhm_T"] = at_mean.gamma_fwhm;
      sj["mean_contrast"] = at_mean.contrast;
      sj["mean_rate_per_s"] = at_mean.photon_rate;
      o.text += "  sensitivity: map mean " + si(mean(vals), "T/sqrt(Hz)") + ", at mean parameters " +
                si(sensitivity(at_mean), "T/sqrt(Hz)") + "\n";
    }
    write_f32_raster(out, "sensitivity", smap, {{"quantity", "sensitivity"}, {"units", "T/sqrt(Hz)"}});
    const auto [lo, hi] = finite_range(smap);
    render_png(smap, Colormap::Sequential, lo, hi, out / "sensitivity.png");
    o.summary["sensitivity"] = sj;
  } else {
    o.text += "  sensitivity: skipped (maps carry no acquisition metadata)\n";
  }

  // images
  {
    const double s = max_abs(maps.shift);
    render_png(maps.shift, Colormap::Diverging, -s, s, out / "shift.png");
    auto [clo, chi] = finite_range(maps.contrast_pct);
    render_png(maps.contrast_pct, Colormap::Sequential, clo, chi, out / "contrast.png");
    auto [wlo, whi] = finite_range(maps.fwhm);
    render_png(maps.fwhm, Colormap::Sequential, wlo, whi, out / "fwhm.png");
    o.summary["images"] = {"shift.png", "contrast.png", "fwhm.png"};
  }

  // comparison with simulation
  if (in.sim_dir) {
    const FieldMap sim = read_field_map(*in.sim_dir);
    const Comparison c = compare(maps, sim, loaded.mask);
    o.summary["comparison"] = comparison_json(c);
    o.text += "  vs simulation: rmse " + si(c.rmse, "T") + ", r " + format_number(c.pearson_r) + ", max |err| " +
              si(c.max_abs_err, "T") + " over " + std::to_string(c.pixels) + " superpixels\n";
  }

  // linearity
  if (!in.series.empty()) {
    std::vector<std::pair<double, ParameterMaps>> series;
    for (const auto& [current, dir] : in.series) series.emplace_back(current, read_parameter_maps(dir).maps);
    Roi roi;
    if (cfg.analysis.roi_ix >= 0 && cfg.analysis.roi_iy >= 0)
      roi = {static_cast<std::size_t>(cfg.analysis.roi_ix), static_cast<std::size_t>(cfg.analysis.roi_iy),
             cfg.analysis.roi_nx, cfg.analysis.roi_ny};
    else
      roi = auto_roi(series);
    const LinearityReport rep = linearity(series, roi);
    o.summary["linearity"] = linearity_json(rep);
    o.text += linearity_text(rep);
  }

  write_json(out / "report.json", o.summary);
  o.text += "  wrote " + out.string() + "\n";
  return o;
}

// ---------------------------------------------------------------------------
// roundtrip

struct RoundtripRun {
  Scene scene;
  ParameterMaps maps;  // before masking
  Raster<std::uint8_t> mask;
  Raster<double> reference;  // scene Bz pooled to the superpixel grid
};

/// simulate -> synth -> bin -> fit for one current, all in memory. The
/// noiseless variant renders unquantized expected frames from a field that is
/// uniform over each superpixel, so every binned spectrum is exactly the
/// model and the scene truths are defined per superpixel.
inline RoundtripRun roundtrip_run(const RunConfig& cfg, double current, bool noisy) {
  RoundtripRun run;
  SceneConfig sc = cfg.scene;
  if (!noisy) sc.field_block = cfg.bin_factor;
  run.scene = run_stage("simulate", [&] { return make_scene(sc, current, cfg.route, cfg.seed, cfg.threads); });
  const BinnedStack binned = run_stage("synth", [&] {
    return synth_binned(run.scene, cfg.protocol, cfg.camera, noisy ? NoiseMode::Poisson : NoiseMode::Expected,
                        cfg.seed, cfg.bin_factor, cfg.threads);
  });
  run.maps = run_stage("fit", [&] { return fit_all(binned, cfg.fit, cfg.threads); });
  run.mask = run_stage("fit", [&] { return quality_mask(run.maps, cfg.quality); });
  run.reference = run_stage("compare", [&] { return pool_to_grid(run.scene.field, run.maps.grid); });
  return run;
}

struct Check {
  std::string name;
  double value;
  double limit;
  bool upper;  // value must be <= limit (else >=)
  bool pass() const { return std::isfinite(value) && (upper ? value <= limit : value >= limit); }
};

inline Outcome cmd_roundtrip(const RunConfig& cfg) {
  cfg.validate();
  const bool noisy = cfg.roundtrip.noisy;
  const RoundtripRun run = roundtrip_run(cfg, cfg.current_A, noisy);
  const ParameterMaps masked = apply_mask(run.maps, run.mask);
  const Comparison c = run_stage("compare", [&] { return compare(masked.shift, run.reference, run.mask); });

  std::vector<Check> checks;
  const double peak = max_abs(run.reference);
  if (!noisy) {
    checks.push_back({"max_abs_err_T", c.max_abs_err, cfg.roundtrip.tol_max_abs_T, true});
    // scene truths per superpixel: the feature of any camera pixel in the block
    double werr = 0.0, cerr = 0.0;
    const std::size_t f = cfg.bin_factor;
    for (std::size_t iy = 0; iy < masked.grid.ny; ++iy)
      for (std::size_t ix = 0; ix < masked.grid.nx; ++ix) {
        const std::size_t i = iy * masked.grid.nx + ix;
        if (run.mask.data[i]) continue;
        const ZeroFieldFeature t = pixel_feature(run.scene, ix * f, iy * f);
        werr = std::max(werr, std::abs(masked.fwhm.data[i] / fwhm(t) - 1.0));
        cerr = std::max(cerr, std::abs(masked.contrast_pct.data[i] / (100.0 * peak_contrast(t)) - 1.0));
      }
    checks.push_back({"fwhm_max_rel_err", werr, cfg.roundtrip.tol_rel, true});
    checks.push_back({"contrast_max_rel_err", cerr, cfg.roundtrip.tol_rel, true});
  } else {
    checks.push_back({"pearson_r", c.pearson_r, cfg.roundtrip.min_pearson_r, false});
    checks.push_back({"rmse_over_peak_bz", peak > 0 ? c.rmse / peak : kMasked, cfg.roundtrip.max_rmse_frac, true});
  }

  Outcome o;
  o.summary = {{"command", "roundtrip"},
               {"mode", noisy ? "noisy" : "noiseless"},
               {"route", to_string(cfg.route)},
               {"current_A", cfg.current_A},
               {"superpixels", {{"nx", masked.grid.nx}, {"ny", masked.grid.ny}}},
               {"fit_status", status_counts_json(run.maps.quality)},
               {"peak_abs_bz_T", peak},
               {"comparison", comparison_json(c)}};
  o.text = std::string("roundtrip (") + (noisy ? "noisy" : "noiseless") + "): route " +
           std::string(to_string(cfg.route)) + " at " + si(cfg.current_A, "A") + ", " + std::to_string(c.pixels) +
           " superpixels compared\n";
  nlohmann::json cj = nlohmann::json::array();
  for (const auto& ch : checks) {
    o.passed = o.passed && ch.pass();
    cj.push_back({{"name", ch.name}, {"value", ch.value}, {"limit", ch.limit}, {"pass", ch.pass()}});
    o.text += std::string("  ") + (ch.pass() ? "PASS " : "FAIL ") + ch.name + " = " + format_number(ch.value) +
              (ch.upper ? " (limit <= " : " (limit >= ") + format_number(ch.limit) + ")\n";
  }
  o.summary["checks"] = cj;

  if (!cfg.roundtrip.currents_A.empty()) {
    std::vector<std::pair<double, ParameterMaps>> series;
    std::vector<Raster<double>> refs;
    for (double current : cfg.roundtrip.currents_A) {
      RoundtripRun r = roundtrip_run(cfg, current, noisy);
      series.emplace_back(current, apply_mask(r.maps, r.mask));
      refs.push_back(std::move(r.reference));
    }
    const LinearityReport rep = run_stage("linearity", [&] { return linearity(series, auto_roi(series)); });
    auto lj = linearity_json(rep);
    // expected slope: the reference field per ampere at the ROI, from the largest current
    std::size_t kmax = 0;
    for (std::size_t k = 1; k < series.size(); ++k)
      if (std::abs(series[k].first) > std::abs(series[kmax].first)) kmax = k;
    const double expected = refs[kmax](rep.roi.ix, rep.roi.iy) / series[kmax].first;
    lj["expected_shift_slope_T_per_A"] = expected;
    lj["shift_slope_rel_err"] = std::abs(rep.shift_fit.slope / expected - 1.0);
    o.summary["linearity"] = lj;
    o.text += linearity_text(rep) + "    expected shift slope " + si(expected, "T/A") + "\n";
  }
  o.summary["passed"] = o.passed;
  o.text += o.passed ? "roundtrip: PASS\n" : "roundtrip: FAIL (see checks above)\n";
  return o;
}

}  // namespace zfmag
