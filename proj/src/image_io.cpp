// SPDX-License-Identifier: Apache-2.0
#include "cycleseg/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cycleseg/errors.hpp"

namespace cycleseg {

namespace {

struct Header {
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t offset = 0;  // first pixel byte
};

std::string make_header(const char* magic, std::size_t w, std::size_t h) {
  return std::string(magic) + "\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

Header parse_header(const std::vector<std::uint8_t>& bytes, const char* magic) {
  if (bytes.size() < 2 || bytes[0] != magic[0] || bytes[1] != magic[1])
    throw FormatError(std::string("expected a ") + magic + " file");
  std::size_t pos = 2;
  auto skip_space = [&] {
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
  auto number = [&] {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(bytes[pos])) throw FormatError("malformed image header");
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1u << 24)) throw FormatError("image header value too large");
      ++pos;
    }
    return v;
  };
  Header h;
  h.width = number();
  h.height = number();
  h.maxval = number();
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError("malformed image header");
  h.offset = pos + 1;
  if (h.width == 0 || h.height == 0) throw FormatError("image has zero size");
  if (h.maxval != 255) throw FormatError("only 8-bit images (maxval 255) are supported");
  return h;
}

}  // namespace

std::vector<std::uint8_t> encode_ppm(const Tensor& image) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(1) != 3)
    throw ShapeError("encode_ppm expects 1 x 3 x H x W, got " + shape_str(image.shape()));
  const std::size_t h = image.dim(2), w = image.dim(3), plane = h * w;
  const std::string header = make_header("P6", w, h);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 3 * plane);
  auto v = image.values();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      out.push_back(static_cast<std::uint8_t>(std::lround(std::clamp(v[c * plane + p], 0.0, 1.0) * 255.0)));
  return out;
}

Tensor decode_ppm(const std::vector<std::uint8_t>& bytes) {
  const Header hd = parse_header(bytes, "P6");
  const std::size_t plane = hd.width * hd.height;
  if (bytes.size() != hd.offset + 3 * plane) throw FormatError("PPM pixel data has the wrong length");
  std::vector<double> v(3 * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < 3; ++c) v[c * plane + p] = bytes[hd.offset + 3 * p + c] / 255.0;
  return Tensor(Shape{1, 3, hd.height, hd.width}, std::move(v));
}

std::vector<std::uint8_t> encode_pgm(const Mask& mask) {
  if (mask.size() != mask.height * mask.width || mask.size() == 0) throw ShapeError("encode_pgm: malformed mask");
  const std::string header = make_header("P5", mask.width, mask.height);
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (auto v : mask.values) out.push_back(v ? 255 : 0);
  return out;
}

Mask decode_pgm(const std::vector<std::uint8_t>& bytes) {
  const Header hd = parse_header(bytes, "P5");
  if (bytes.size() != hd.offset + hd.width * hd.height) throw FormatError("PGM pixel data has the wrong length");
  Mask m(hd.height, hd.width);
  for (std::size_t i = 0; i < m.size(); ++i) m.values[i] = bytes[hd.offset + i] ? 1 : 0;
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot create " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Tensor& image) { write_file(path, encode_ppm(image)); }
Tensor read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }
void write_pgm(const std::filesystem::path& path, const Mask& mask) { write_file(path, encode_pgm(mask)); }
Mask read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }

void save_dataset(const std::filesystem::path& dir, const std::vector<ImageGroup>& groups) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ostringstream manifest;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (std::size_t i = 0; i < groups[g].images.size(); ++i) {
      const std::string stem = "g" + std::to_string(g) + "_" + std::to_string(i);
      write_ppm(dir / (stem + ".ppm"), groups[g].images[i]);
      write_pgm(dir / (stem + ".pgm"), groups[g].masks[i]);
      manifest << (i ? "\t" : "") << stem << ".ppm\t" << stem << ".pgm";
    }
    manifest << '\n';
  }
  const std::string text = manifest.str();
  write_file(dir / "manifest.tsv", std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::vector<ImageGroup> load_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open " + manifest.string());
  const auto base = manifest.parent_path();
  std::vector<ImageGroup> groups;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() < 4 || fields.size() % 2 != 0)
      throw FormatError("manifest line needs image/mask pairs for at least two images");
    ImageGroup g;
    for (std::size_t i = 0; i < fields.size(); i += 2) {
      g.images.push_back(read_ppm(base / fields[i]));
      g.masks.push_back(read_pgm(base / fields[i + 1]));
    }
    groups.push_back(std::move(g));
  }
  return groups;
}

}  // namespace cycleseg
