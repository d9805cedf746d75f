#include "looptrans/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace looptrans::io {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[off + i]) << (8 * i);
  return v;
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}

// Reads the PNM header tokens (magic, width, height, maxval), skipping comments.
struct PnmHeader {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(const std::vector<std::uint8_t>& bytes) {
  PnmHeader h;
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_ws();
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t.push_back(static_cast<char>(bytes[pos++]));
    if (t.empty()) throw FormatError("truncated PNM header", pos);
    return t;
  };
  h.magic = token();
  h.width = std::stoul(token());
  h.height = std::stoul(token());
  h.maxval = std::stoul(token());
  ++pos;  // single whitespace before raster
  h.data_offset = pos;
  return h;
}

}  // namespace

std::uint32_t crc32(std::span<const std::uint8_t> bytes) {
  uLong c = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto n = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    c = ::crc32(c, bytes.data() + off, n);
    off += n;
  }
  return static_cast<std::uint32_t>(c);
}

std::vector<std::uint8_t> encode_ltfm(const Tensor& grid, const std::string& provenance) {
  if (grid.rank() != 3) throw ShapeError("LTFM needs an H×W×C tensor, got " + shape_str(grid.shape()));
  if (grid.size() == 0) throw ContractError("LTFM: refusing to write a map with an empty dimension");
  if (!grid.all_finite()) throw ContractError("LTFM: refusing to write non-finite values");

  std::vector<std::uint8_t> payload;
  payload.reserve(grid.size() * dtype_size(grid.dtype()));
  for (double v : grid.data()) {
    if (grid.dtype() == DType::Float32)
      put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    else
      put_u64(payload, std::bit_cast<std::uint64_t>(v));
  }

  std::vector<std::uint8_t> out;
  out.reserve(kLtfmFixedHeader + provenance.size() + payload.size());
  for (char ch : {'L', 'T', 'F', 'M'}) out.push_back(static_cast<std::uint8_t>(ch));
  put_u32(out, kLtfmVersion);
  put_u32(out, static_cast<std::uint32_t>(grid.dim(0)));
  put_u32(out, static_cast<std::uint32_t>(grid.dim(1)));
  put_u32(out, static_cast<std::uint32_t>(grid.dim(2)));
  put_u32(out, static_cast<std::uint32_t>(grid.dtype()));
  put_u32(out, crc32(payload));
  put_u32(out, static_cast<std::uint32_t>(provenance.size()));
  out.insert(out.end(), provenance.begin(), provenance.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

LtfmFile decode_ltfm(std::span<const std::uint8_t> b) {
  if (b.size() < kLtfmFixedHeader) throw FormatError("truncated LTFM header", b.size());
  if (std::memcmp(b.data(), "LTFM", 4) != 0) throw FormatError("bad LTFM magic", 0);
  LtfmFile f;
  auto& h = f.header;
  h.version = get_u32(b, 4);
  if (h.version != kLtfmVersion) throw FormatError("unsupported LTFM version " + std::to_string(h.version), 4);
  h.height = get_u32(b, 8);
  h.width = get_u32(b, 12);
  h.channels = get_u32(b, 16);
  const auto code = get_u32(b, 20);
  if (code != 1 && code != 2) throw FormatError("unknown LTFM dtype code " + std::to_string(code), 20);
  h.dtype = static_cast<DType>(code);
  h.crc = get_u32(b, 24);
  const std::size_t plen = get_u32(b, 28);
  if (b.size() < kLtfmFixedHeader + plen) throw FormatError("truncated LTFM provenance", b.size());
  h.provenance.assign(reinterpret_cast<const char*>(b.data() + kLtfmFixedHeader), plen);

  const std::size_t start = kLtfmFixedHeader + plen;
  const std::size_t n = std::size_t{h.height} * h.width * h.channels;
  const std::size_t esize = dtype_size(h.dtype);
  const std::size_t expected = n * esize;
  const std::size_t actual = b.size() - start;
  if (actual != expected)
    throw FormatError("LTFM payload is " + std::to_string(actual) + " bytes, header H·W·C declares " +
                          std::to_string(expected),
                      start + std::min(actual, expected));
  const auto payload = b.subspan(start);
  if (crc32(payload) != h.crc) throw FormatError("LTFM payload CRC mismatch", start);

  std::vector<double> vals(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (h.dtype == DType::Float32)
      vals[i] = static_cast<double>(std::bit_cast<float>(get_u32(payload, i * 4)));
    else
      vals[i] = std::bit_cast<double>(get_u64(payload, i * 8));
  }
  f.grid = Tensor(Shape{h.height, h.width, h.channels}, std::move(vals));
  f.grid.set_dtype(h.dtype);
  return f;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file", path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open file for writing", path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed", path);
}

void write_ltfm(const std::filesystem::path& path, const Tensor& grid, const std::string& provenance) {
  write_bytes(path, encode_ltfm(grid, provenance));
}

LtfmFile read_ltfm(const std::filesystem::path& path) { return decode_ltfm(read_bytes(path)); }

// -- images ------------------------------------------------------------------

void write_pgm(const std::filesystem::path& path, const GrayImage& img) {
  std::ostringstream hdr;
  hdr << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  const auto h = hdr.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
  write_bytes(path, bytes);
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const auto h = parse_pnm_header(bytes);
  GrayImage img{h.height, h.width, {}};
  if (h.magic == "P5") {
    if (h.maxval != 255) throw FormatError("only 8-bit PGM supported", 0);
    if (bytes.size() < h.data_offset + h.width * h.height) throw FormatError("truncated PGM raster", bytes.size());
    img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset),
                      bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset + h.width * h.height));
  } else if (h.magic == "P2") {
    std::istringstream in(std::string(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset), bytes.end()));
    unsigned v;
    while (img.pixels.size() < h.width * h.height && in >> v)
      img.pixels.push_back(static_cast<std::uint8_t>(v * 255 / std::max<std::size_t>(h.maxval, 1)));
    if (img.pixels.size() != h.width * h.height) throw FormatError("truncated PGM raster", bytes.size());
  } else {
    throw FormatError("not a PGM file (magic " + h.magic + ")", 0);
  }
  return img;
}

GrayImage to_gray(const Tensor& hw) {
  if (hw.rank() < 2) throw ShapeError("to_gray needs an H×W grid");
  GrayImage img{hw.dim(0), hw.dim(1), {}};
  img.pixels.resize(img.height * img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(hw[i], 0.0, 1.0) * 255.0));
  return img;
}

Tensor from_gray(const GrayImage& img) {
  Tensor t(Shape{img.height, img.width});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ostringstream hdr;
  hdr << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  const auto h = hdr.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
  write_bytes(path, bytes);
}

RgbImage read_ppm(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  const auto h = parse_pnm_header(bytes);
  if (h.magic != "P6" || h.maxval != 255) throw FormatError("only 8-bit P6 PPM supported", 0);
  const std::size_t n = h.width * h.height * 3;
  if (bytes.size() < h.data_offset + n) throw FormatError("truncated PPM raster", bytes.size());
  RgbImage img{h.height, h.width, {}};
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(h.data_offset + n));
  return img;
}

RgbImage to_rgb(const Tensor& hwc) {
  if (hwc.rank() != 3 || hwc.dim(2) != 3) throw ShapeError("to_rgb needs an H×W×3 tensor");
  RgbImage img{hwc.dim(0), hwc.dim(1), {}};
  img.pixels.resize(hwc.size());
  for (std::size_t i = 0; i < hwc.size(); ++i)
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(hwc[i], 0.0, 1.0) * 255.0));
  return img;
}

Tensor from_rgb(const RgbImage& img) {
  Tensor t(Shape{img.height, img.width, 3});
  for (std::size_t i = 0; i < img.pixels.size(); ++i) t[i] = img.pixels[i] / 255.0;
  return t;
}

// -- manifest ------------------------------------------------------------------

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string manifest_relative(const std::filesystem::path& base, const std::filesystem::path& p) {
  if (!p.is_absolute()) {
    auto rel = p.lexically_relative(base);
    return (rel.empty() || *rel.begin() == "..") ? p.generic_string() : rel.generic_string();
  }
  auto rel = p.lexically_relative(std::filesystem::absolute(base));
  return rel.empty() ? p.generic_string() : rel.generic_string();
}

}  // namespace

Manifest read_manifest(const std::filesystem::path& path, std::size_t n_classes, bool check_paths) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest", path);
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  std::size_t offset = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t line_start = offset;
    offset += line.size() + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto cols = split(line, '\t');
    if (cols.size() < 4 || cols.size() > 5)
      throw FormatError("manifest line " + std::to_string(lineno) + ": expected 4 or 5 tab-separated columns",
                        line_start);
    ManifestEntry e;
    e.sample_id = cols[0];
    try {
      e.label = std::stoul(cols[1]);
    } catch (const std::exception&) {
      throw FormatError("manifest line " + std::to_string(lineno) + ": bad label '" + cols[1] + "'", line_start);
    }
    if (n_classes > 0 && e.label >= n_classes)
      throw FormatError("manifest line " + std::to_string(lineno) + ": label " + cols[1] + " out of range",
                        line_start);
    e.ego_path = resolve(m.base_dir, cols[2]);
    for (const auto& p : split(cols[3], ';'))
      if (!p.empty()) e.exo_paths.push_back(resolve(m.base_dir, p));
    if (cols.size() == 5 && !cols[4].empty()) e.gt_path = resolve(m.base_dir, cols[4]);
    if (check_paths) {
      std::vector<std::filesystem::path> all{e.ego_path};
      all.insert(all.end(), e.exo_paths.begin(), e.exo_paths.end());
      if (e.gt_path) all.push_back(*e.gt_path);
      for (const auto& p : all)
        if (!std::filesystem::exists(p)) throw IoError("manifest references a missing file", p);
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

void write_manifest(const std::filesystem::path& path, const Manifest& m) {
  std::ostringstream out;
  const auto base = path.parent_path();
  for (const auto& e : m.entries) {
    out << e.sample_id << '\t' << e.label << '\t' << manifest_relative(base, e.ego_path) << '\t';
    for (std::size_t i = 0; i < e.exo_paths.size(); ++i) out << (i ? ";" : "") << manifest_relative(base, e.exo_paths[i]);
    out << '\t';
    if (e.gt_path) out << manifest_relative(base, *e.gt_path);
    out << '\n';
  }
  const auto s = out.str();
  write_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace looptrans::io
