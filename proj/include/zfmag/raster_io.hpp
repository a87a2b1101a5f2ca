#pragma once

// Raster file formats: binary PGM (8/16 bit), little-endian float32 raw with
// a JSON sidecar, CSV matrices with '#' metadata lines, and RGB PNG.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <png.h>

#include <json.hpp>

#include "zfmag/core.hpp"
#include "zfmag/format.hpp"

namespace zfmag {

namespace fs = std::filesystem;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

inline void write_json(const fs::path& path, const nlohmann::json& j) { write_file_bytes(path, j.dump(2) + "\n"); }

inline nlohmann::json read_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_file_bytes(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// PGM (P5). 16-bit samples are big-endian per the netpbm definition.

inline std::string encode_pgm(const Raster<std::uint16_t>& img, unsigned maxval = 65535) {
  std::string out = "P5\n" + std::to_string(img.nx) + " " + std::to_string(img.ny) + "\n" + std::to_string(maxval) + "\n";
  const std::size_t header = out.size();
  out.resize(header + img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[header + 2 * i] = static_cast<char>(img.data[i] >> 8);
    out[header + 2 * i + 1] = static_cast<char>(img.data[i] & 0xFF);
  }
  return out;
}

inline std::string encode_pgm(const Raster<std::uint8_t>& img) {
  std::string out = "P5\n" + std::to_string(img.nx) + " " + std::to_string(img.ny) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.data.data()), img.size());
  return out;
}

struct PgmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  unsigned maxval = 0;
  Raster<std::uint16_t> samples;
};

inline PgmImage decode_pgm(std::string_view bytes, const std::string& name) {
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) -> PgmImage { throw IoError(name + ": " + what); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&]() -> unsigned long {
    skip_space();
    unsigned long v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos])))
      v = v * 10 + static_cast<unsigned long>(bytes[pos++] - '0');
    if (pos == start) throw IoError(name + ": malformed PGM header");
    return v;
  };
  if (bytes.size() < 2 || bytes.substr(0, 2) != "P5") return fail("not a binary PGM (P5)");
  pos = 2;
  PgmImage img;
  img.width = read_uint();
  img.height = read_uint();
  img.maxval = static_cast<unsigned>(read_uint());
  if (img.width == 0 || img.height == 0 || img.maxval == 0 || img.maxval > 65535) return fail("invalid PGM header");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) return fail("truncated PGM header");
  ++pos;
  const std::size_t bps = img.maxval > 255 ? 2 : 1;
  const std::size_t need = img.width * img.height * bps;
  if (bytes.size() - pos < need)
    return fail("truncated pixel data (" + std::to_string(bytes.size() - pos) + " of " + std::to_string(need) + " bytes)");
  img.samples = Raster<std::uint16_t>(img.width, img.height);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
  for (std::size_t i = 0; i < img.width * img.height; ++i)
    img.samples.data[i] = bps == 2 ? static_cast<std::uint16_t>((p[2 * i] << 8) | p[2 * i + 1]) : p[i];
  return img;
}

inline PgmImage read_pgm(const fs::path& path) { return decode_pgm(read_file_bytes(path), path.string()); }

// ---------------------------------------------------------------------------
// float32 little-endian raw + JSON sidecar

inline std::string encode_f32le(const Raster<double>& r) {
  std::string out(r.size() * 4, '\0');
  for (std::size_t i = 0; i < r.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(r.data[i]));
    for (int b = 0; b < 4; ++b) out[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
  }
  return out;
}

inline Raster<double> decode_f32le(std::string_view bytes, std::size_t nx, std::size_t ny, const std::string& name) {
  if (bytes.size() != nx * ny * 4)
    throw IoError(name + ": expected " + std::to_string(nx * ny * 4) + " bytes, found " + std::to_string(bytes.size()));
  Raster<double> r(nx, ny);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  for (std::size_t i = 0; i < r.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= std::uint32_t{p[4 * i + b]} << (8 * b);
    r.data[i] = std::bit_cast<float>(bits);
  }
  return r;
}

/// Writes `<stem>.f32` and `<stem>.json`; `meta` is merged into the sidecar.
inline void write_f32_raster(const fs::path& dir, const std::string& stem, const Raster<double>& r,
                             nlohmann::json meta) {
  write_file_bytes(dir / (stem + ".f32"), encode_f32le(r));
  meta["nx"] = r.nx;
  meta["ny"] = r.ny;
  meta["dtype"] = "float32";
  meta["byte_order"] = "little";
  meta["layout"] = "row-major, row 0 at minimum y";
  meta["file"] = stem + ".f32";
  write_json(dir / (stem + ".json"), meta);
}

inline Raster<double> read_f32_raster(const fs::path& dir, const std::string& stem, nlohmann::json* meta_out = nullptr) {
  const auto meta = read_json(dir / (stem + ".json"));
  if (!meta.contains("nx") || !meta.contains("ny")) throw IoError((dir / (stem + ".json")).string() + ": missing nx/ny");
  if (meta_out) *meta_out = meta;
  return decode_f32le(read_file_bytes(dir / (stem + ".f32")), meta.at("nx").get<std::size_t>(),
                      meta.at("ny").get<std::size_t>(), (dir / (stem + ".f32")).string());
}

// ---------------------------------------------------------------------------
// CSV

/// `# key=value` lines, then one CSV line per raster row.
inline std::string encode_csv_matrix(const Raster<double>& r, const std::vector<std::pair<std::string, std::string>>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) out += "# " + k + "=" + v + "\n";
  for (std::size_t iy = 0; iy < r.ny; ++iy) {
    const auto row = r.row(iy);
    out += join_numbers(std::span<const double>(row.data(), row.size()));
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// PNG

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel, row 0 first
};

inline void write_png(const fs::path& path, const RgbImage& img) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw IoError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw IoError("libpng failed writing " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y)
    png_write_row(png, const_cast<png_bytep>(img.rgb.data() + y * img.width * 3));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace zfmag
