// Drives the built executable end to end on a small grid.

#include <gtest/gtest.h>

#include <cstdlib>
#include <sys/wait.h>

#include "zfmag/zfmag.hpp"

using namespace zfmag;

namespace {

struct CliResult {
  int rc = -1;
  std::string out, err;
};

fs::path scratch() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const fs::path dir = fs::temp_directory_path() / (std::string("zfmag_cli_") + info->test_suite_name() + "_" + info->name());
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

CliResult zfmag_run(const fs::path& dir, const std::string& args) {
  const std::string cmd = "cd '" + dir.string() + "' && '" ZFMAG_CLI "' " + args + " >stdout.txt 2>stderr.txt";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file_bytes(dir / "stdout.txt");
  r.err = read_file_bytes(dir / "stderr.txt");
  return r;
}

// 128x96 camera pixels, 8x6 superpixels, 21 scan steps
const char* kSmall = R"([grid]
nx = 128
ny = 96
[protocol]
n_steps = 21
[run]
write_csv = false
)";

fs::path small_config(const fs::path& dir) {
  write_file_bytes(dir / "small.toml", kSmall);
  return dir / "small.toml";
}

bool same_tree(const fs::path& a, const fs::path& b, std::string* diff) {
  std::size_t n = 0;
  for (const auto& e : fs::directory_iterator(a)) {
    ++n;
    const auto name = e.path().filename();
    if (!fs::exists(b / name) || read_file_bytes(e.path()) != read_file_bytes(b / name)) {
      *diff = name.string();
      return false;
    }
  }
  std::size_t m = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++m;
  if (n != m) *diff = "file count";
  return n == m;
}

}  // namespace

TEST(Cli, SimulateWritesThreeRastersMatchingTheLibrary) {
  const fs::path dir = scratch();
  const fs::path cfg = small_config(dir);
  const CliResult r = zfmag_run(dir, "simulate --config small.toml --out field --current 0.25");
  ASSERT_EQ(r.rc, 0) << r.err;
  for (const char* f : {"bx.f32", "by.f32", "bz.f32", "bz.json", "summary.json"}) EXPECT_TRUE(fs::exists(dir / "field" / f)) << f;
  EXPECT_NE(r.out.find("peak |Bz|"), std::string::npos);

  RunConfig c = load_config(cfg);
  c.current_A = 0.25;
  write_field_map(simulate_field(c, c.current_A), dir / "lib", false);
  for (const char* f : {"bx.f32", "by.f32", "bz.f32"})
    EXPECT_EQ(read_file_bytes(dir / "field" / f), read_file_bytes(dir / "lib" / f)) << f;
}

TEST(Cli, ZeroCurrentGivesZeroField) {
  const fs::path dir = scratch();
  small_config(dir);
  ASSERT_EQ(zfmag_run(dir, "simulate --config small.toml --out field --current 0").rc, 0);
  const FieldMap m = read_field_map(dir / "field");
  for (const auto* r : {&m.bx, &m.by, &m.bz})
    for (double v : r->data) EXPECT_EQ(v, 0.0);
}

TEST(Cli, SynthManifestAndNoiselessFlag) {
  const fs::path dir = scratch();
  small_config(dir);
  const CliResult r = zfmag_run(dir, "synth --config small.toml --out stack --noiseless");
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto j = read_json(dir / "stack" / "manifest.json");
  EXPECT_EQ(j.at("frames").size(), 21u);
  EXPECT_EQ(j.at("extra").at("noise"), "noiseless");
  EXPECT_TRUE(fs::exists(dir / "stack" / "frame_0020.pgm"));
  EXPECT_FALSE(fs::exists(dir / "stack" / "frame_0021.pgm"));
}

TEST(Cli, SynthAndFitAreIndependentOfThreadCount) {
  const fs::path dir = scratch();
  small_config(dir);
  ASSERT_EQ(zfmag_run(dir, "synth --config small.toml --out s1 --threads 1 --seed 9").rc, 0);
  ASSERT_EQ(zfmag_run(dir, "synth --config small.toml --out s8 --threads 8 --seed 9").rc, 0);
  std::string diff;
  EXPECT_TRUE(same_tree(dir / "s1", dir / "s8", &diff)) << diff;

  ASSERT_EQ(zfmag_run(dir, "fit s1 --config small.toml --out m1 --threads 1").rc, 0);
  ASSERT_EQ(zfmag_run(dir, "fit s1 --config small.toml --out m8 --threads 8").rc, 0);
  EXPECT_TRUE(same_tree(dir / "m1", dir / "m8", &diff)) << diff;

  ASSERT_EQ(zfmag_run(dir, "synth --config small.toml --out s2 --seed 10").rc, 0);
  EXPECT_NE(read_file_bytes(dir / "s1" / "frame_0010.pgm"), read_file_bytes(dir / "s2" / "frame_0010.pgm"));
}

TEST(Cli, FitWritesMapsAndSummary) {
  const fs::path dir = scratch();
  small_config(dir);
  ASSERT_EQ(zfmag_run(dir, "synth --config small.toml --out stack").rc, 0);
  const CliResult r = zfmag_run(dir, "fit stack --config small.toml --out maps --json");
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j.at("superpixels").at("total"), 48);
  EXPECT_EQ(j, read_json(dir / "maps" / "summary.json"));
  const LoadedMaps m = read_parameter_maps(dir / "maps");
  EXPECT_EQ(m.maps.grid.nx, 8u);
  EXPECT_EQ(m.maps.grid.ny, 6u);
}

TEST(Cli, ReportWithAndWithoutSimulation) {
  const fs::path dir = scratch();
  small_config(dir);
  ASSERT_EQ(zfmag_run(dir, "simulate --config small.toml --out field").rc, 0);
  ASSERT_EQ(zfmag_run(dir, "synth --config small.toml --out stack").rc, 0);
  ASSERT_EQ(zfmag_run(dir, "fit stack --config small.toml --out maps").rc, 0);

  CliResult r = zfmag_run(dir, "report maps --config small.toml --out rep");
  ASSERT_EQ(r.rc, 0) << r.err;
  for (const char* f : {"profile.csv", "shift.png", "contrast.png", "fwhm.png", "sensitivity.png", "report.json"})
    EXPECT_TRUE(fs::exists(dir / "rep" / f)) << f;
  EXPECT_FALSE(read_json(dir / "rep" / "report.json").contains("comparison"));

  r = zfmag_run(dir, "report maps --config small.toml --out rep2 --sim field --row 2");
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto j = read_json(dir / "rep2" / "report.json");
  EXPECT_EQ(j.at("profile").at("row"), 2);
  EXPECT_GT(j.at("comparison").at("pixels").get<int>(), 0);
  EXPECT_NE(r.out.find("vs simulation"), std::string::npos);

  r = zfmag_run(dir, "report maps --config small.toml --out rep3 --row 6");
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("row 6 outside 0..5"), std::string::npos) << r.err;
}

TEST(Cli, ReportSeriesGivesLinearity) {
  const fs::path dir = scratch();
  small_config(dir);
  std::string series;
  for (const char* i : {"0.1", "0.2", "0.3"}) {
    ASSERT_EQ(zfmag_run(dir, std::string("synth --config small.toml --noiseless --out s") + i + " --current " + i).rc, 0);
    ASSERT_EQ(zfmag_run(dir, std::string("fit s") + i + " --config small.toml --out m" + i).rc, 0);
    series += std::string(" --series ") + i + "=m" + i;
  }
  const CliResult r = zfmag_run(dir, "report m0.3 --config small.toml --out rep" + series);
  ASSERT_EQ(r.rc, 0) << r.err;
  EXPECT_TRUE(read_json(dir / "rep" / "report.json").contains("linearity"));
  EXPECT_EQ(zfmag_run(dir, "report m0.3 --config small.toml --series 0.1").rc, 1);
}

TEST(Cli, RoundtripPassesAndReportsTolerance) {
  const fs::path dir = scratch();
  small_config(dir);
  CliResult r = zfmag_run(dir, "roundtrip --config small.toml --noiseless --out rt");
  ASSERT_EQ(r.rc, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("roundtrip: PASS"), std::string::npos);
  EXPECT_TRUE(read_json(dir / "rt" / "roundtrip.json").at("passed").get<bool>());

  r = zfmag_run(dir, "roundtrip --config small.toml --noiseless --tolerance 0 --out rt0");
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.out.find("FAIL max_abs_err_T"), std::string::npos) << r.out;
  EXPECT_NE(r.err.find("outside tolerance"), std::string::npos);
}

TEST(Cli, RoundtripCurrentsAppendsLinearity) {
  const fs::path dir = scratch();
  small_config(dir);
  const CliResult r = zfmag_run(dir, "roundtrip --config small.toml --noiseless --currents 0.1,0.2,0.4 --json --out rt");
  ASSERT_EQ(r.rc, 0) << r.err;
  const auto j = nlohmann::json::parse(r.out);
  EXPECT_LT(j.at("linearity").at("shift_slope_rel_err").get<double>(), 1e-6);
}

TEST(Cli, BadInputsExitWithOne) {
  const fs::path dir = scratch();
  write_file_bytes(dir / "bad.toml", "[grid]\nnx = \"many\"\n");
  CliResult r = zfmag_run(dir, "simulate --config bad.toml");
  EXPECT_EQ(r.rc, 1);
  EXPECT_NE(r.err.find("config error"), std::string::npos) << r.err;
  EXPECT_EQ(zfmag_run(dir, "simulate --config missing.toml").rc, 1);
  EXPECT_EQ(zfmag_run(dir, "").rc, 1);
  EXPECT_EQ(zfmag_run(dir, "simulate --route P99").rc, 1);
  EXPECT_EQ(zfmag_run(dir, "roundtrip --noisy --noiseless").rc, 1);
}

TEST(Cli, MissingStackIsARuntimeError) {
  const fs::path dir = scratch();
  const CliResult r = zfmag_run(dir, "fit nowhere");
  EXPECT_EQ(r.rc, 2);
  EXPECT_NE(r.err.find("manifest not found"), std::string::npos) << r.err;
}
