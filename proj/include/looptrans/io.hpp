#pragma once

// On-disk formats.
//
// LTFM tensor file (all integers little-endian u32):
//
//   offset  field
//   0       magic "LTFM"
//   4       version (1)
//   8       H
//   12      W
//   16      C
//   20      dtype code (1 = float32, 2 = float64)
//   24      CRC-32 (IEEE, zlib polynomial) of the payload bytes
//   28      provenance length n
//   32      provenance, n bytes of free-form text
//   32+n    payload, H·W·C values row-major (h, w, c), little-endian IEEE-754
//
// PGM (P5, 8-bit) for masks and heatmaps, PPM (P6) for color images.
// Manifest: one tab-separated line per sample,
//   sample_id  label  ego_path  exo_path[;exo_path...]  [gt_path]
// with paths relative to the manifest's directory.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "looptrans/tensor.hpp"

namespace looptrans::io {

struct FormatError : std::runtime_error {
  FormatError(const std::string& what, std::size_t byte_offset)
      : std::runtime_error(what + " (at byte " + std::to_string(byte_offset) + ")"), offset(byte_offset) {}
  std::size_t offset;
};

struct IoError : std::runtime_error {
  IoError(const std::string& what, const std::filesystem::path& p)
      : std::runtime_error(what + ": " + p.string()), path(p) {}
  std::filesystem::path path;
};

inline constexpr std::uint32_t kLtfmVersion = 1;
inline constexpr std::size_t kLtfmFixedHeader = 32;

struct LtfmHeader {
  std::uint32_t version = kLtfmVersion;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::uint32_t channels = 0;
  DType dtype = DType::Float32;
  std::uint32_t crc = 0;
  std::string provenance;
};

struct LtfmFile {
  LtfmHeader header;
  Tensor grid;  // [H, W, C], dtype tag set from the header
};

std::uint32_t crc32(std::span<const std::uint8_t> bytes);

/// Serializes an H×W×C tensor using its dtype tag.
std::vector<std::uint8_t> encode_ltfm(const Tensor& grid, const std::string& provenance);
LtfmFile decode_ltfm(std::span<const std::uint8_t> bytes);

void write_ltfm(const std::filesystem::path& path, const Tensor& grid, const std::string& provenance);
LtfmFile read_ltfm(const std::filesystem::path& path);

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path);
void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

// -- images ------------------------------------------------------------------

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;
};

void write_pgm(const std::filesystem::path& path, const GrayImage& img);
GrayImage read_pgm(const std::filesystem::path& path);

/// Maps a [0,1] grid to 8-bit gray, clamping.
GrayImage to_gray(const Tensor& hw);
Tensor from_gray(const GrayImage& img);

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB
};

void write_ppm(const std::filesystem::path& path, const RgbImage& img);
RgbImage read_ppm(const std::filesystem::path& path);
/// [S×S×3] tensor in [0,1] to 8-bit RGB.
RgbImage to_rgb(const Tensor& hwc);
Tensor from_rgb(const RgbImage& img);

// -- manifest ------------------------------------------------------------------

struct ManifestEntry {
  std::string sample_id;
  std::size_t label = 0;
  std::filesystem::path ego_path;
  std::vector<std::filesystem::path> exo_paths;
  std::optional<std::filesystem::path> gt_path;
};

struct Manifest {
  std::filesystem::path base_dir;
  std::vector<ManifestEntry> entries;
};

/// Parses a manifest; relative paths resolve against the manifest's directory.
/// With `check_paths`, every referenced file must exist and labels must be < n_classes
/// (n_classes = 0 skips the label check).
Manifest read_manifest(const std::filesystem::path& path, std::size_t n_classes = 0, bool check_paths = true);
void write_manifest(const std::filesystem::path& path, const Manifest& m);

}  // namespace looptrans::io
