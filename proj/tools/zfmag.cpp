// zfmag command-line driver.
//
// Exit codes: 0 success, 1 validation error (bad config or arguments, or a
// round trip outside its tolerances), 2 runtime failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "zfmag/zfmag.hpp"

namespace {

using namespace zfmag;

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

/// The output root env var only relocates relative output directories.
fs::path resolve_out(const std::optional<std::string>& flag, const RunConfig& cfg, const char* subdir) {
  fs::path out = flag ? fs::path(*flag) : fs::path(cfg.out_dir) / subdir;
  if (const char* root = std::getenv("ZFMAG_OUTPUT_ROOT"); root && *root && out.is_relative()) out = fs::path(root) / out;
  return out;
}

std::pair<double, std::string> parse_series_item(const std::string& item) {
  const auto eq = item.find('=');
  if (eq == std::string::npos || eq == 0 || eq + 1 == item.size())
    throw std::invalid_argument("--series expects CURRENT=DIR, got '" + item + "'");
  std::size_t used = 0;
  double current = 0;
  try {
    current = std::stod(item.substr(0, eq), &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != eq) throw std::invalid_argument("--series: bad current in '" + item + "'");
  return {current, item.substr(eq + 1)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-field NV magnetometry pipeline: field simulation, synthetic stacks, per-pixel fitting"};
  app.require_subcommand(1);
  app.fallthrough();  // global options may follow the subcommand
  app.set_version_flag("--version", "zfmag 1.0");

  std::optional<std::string> config_path, out_flag, route_flag;
  std::optional<int> threads;
  std::optional<std::uint64_t> seed;
  std::optional<double> current;
  bool noiseless = false, json_out = false;

  app.add_option("--config", config_path, "TOML run configuration")->check(CLI::ExistingFile);
  app.add_option("--threads", threads, "worker threads (default: all cores; results do not depend on it)")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--seed", seed, "root random seed");
  app.add_option("--out", out_flag, "output directory");
  app.add_flag("--noiseless", noiseless, "variance-free frames (synth) / noiseless round trip");
  app.add_flag("--json", json_out, "print the JSON summary instead of the text report");
  for (auto* o : app.get_options()) o->configurable(false);

  auto* sim = app.add_subcommand("simulate", "Biot-Savart field of the cross pattern on the imaging grid");
  auto* syn = app.add_subcommand("synth", "render a synthetic field-scanned image stack");
  auto* fit = app.add_subcommand("fit", "bin a stack and fit every superpixel");
  auto* rep = app.add_subcommand("report", "profiles, sensitivity, images, comparison and linearity");
  auto* rt = app.add_subcommand("roundtrip", "simulate -> synth -> fit -> compare, checked against tolerances");
  for (auto* sc : {sim, syn, rt}) {
    sc->add_option("--route", route_flag, "current route: P34 P14 P12 P13 P23 P24");
    sc->add_option("--current", current, "current in A");
  }

  std::string stack_dir;
  std::optional<std::size_t> bin_factor;
  fit->add_option("stack", stack_dir, "stack directory (manifest.json + frames)")->required();
  fit->add_option("--bin", bin_factor, "bin factor")->check(CLI::PositiveNumber);

  std::string maps_dir;
  std::optional<std::string> sim_dir;
  std::optional<long> row;
  std::vector<std::string> series_items;
  rep->add_option("maps", maps_dir, "maps directory written by fit")->required();
  rep->add_option("--sim", sim_dir, "field directory written by simulate, for comparison");
  rep->add_option("--row", row, "superpixel row for the cross section");
  rep->add_option("--series", series_items, "CURRENT=MAPS_DIR, repeat for a linearity report");

  bool noisy = false;
  std::optional<double> tolerance;
  std::vector<double> currents;
  rt->add_flag("--noisy", noisy, "Poisson frames; checks correlation and RMSE instead of exact agreement");
  rt->add_option("--tolerance", tolerance, "noiseless max |shift - Bz| in T");
  rt->add_option("--currents", currents, "comma-separated currents for a linearity report")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitValidation;
  }

  try {
    RunConfig cfg = config_path ? load_config(*config_path) : RunConfig{};
    if (threads) cfg.threads = *threads;
    if (seed) cfg.seed = *seed;
    if (current) cfg.current_A = *current;
    if (route_flag) cfg.route = parse_route(*route_flag);
    if (noiseless) cfg.noiseless = true;
    if (bin_factor) cfg.bin_factor = *bin_factor;
    if (noisy && noiseless) throw std::invalid_argument("--noisy and --noiseless are exclusive");
    if (noisy) cfg.roundtrip.noisy = true;
    if (noiseless) cfg.roundtrip.noisy = false;
    if (tolerance) cfg.roundtrip.tol_max_abs_T = *tolerance;
    if (!currents.empty()) cfg.roundtrip.currents_A = currents;
    cfg.validate();

    Outcome outcome;
    if (*sim) {
      outcome = cmd_simulate(cfg, resolve_out(out_flag, cfg, "field"));
    } else if (*syn) {
      outcome = cmd_synth(cfg, resolve_out(out_flag, cfg, "stack"));
    } else if (*fit) {
      outcome = cmd_fit(cfg, stack_dir, resolve_out(out_flag, cfg, "maps"));
    } else if (*rep) {
      ReportInputs in;
      in.maps_dir = maps_dir;
      if (sim_dir) in.sim_dir = fs::path(*sim_dir);
      in.row = row;
      for (const auto& item : series_items) in.series.push_back(parse_series_item(item));
      outcome = cmd_report(cfg, in, resolve_out(out_flag, cfg, "report"));
    } else {
      outcome = cmd_roundtrip(cfg);
      const fs::path out = resolve_out(out_flag, cfg, "roundtrip");
      fs::create_directories(out);
      write_json(out / "roundtrip.json", outcome.summary);
    }
    if (json_out)
      std::cout << outcome.summary.dump(2) << "\n";
    else
      std::cout << outcome.text;
    if (!outcome.passed) {
      std::cerr << "zfmag: round trip outside tolerance\n";
      return kExitValidation;
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "zfmag: config error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "zfmag: invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::out_of_range& e) {
    std::cerr << "zfmag: invalid input: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "zfmag: error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
