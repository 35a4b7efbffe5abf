#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "scws/data.hpp"

namespace scws {

namespace fs = std::filesystem;

std::size_t BinaryMask::positives() const {
  return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; }));
}

namespace {

struct Pnm {
  std::size_t width = 0, height = 0, channels = 0;
  std::size_t data_offset = 0;
  std::string bytes;  // whole file

  unsigned char pixel(std::size_t i) const { return static_cast<unsigned char>(bytes[data_offset + i]); }
};

std::string read_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(is), {}};
}

Pnm read_pnm(const fs::path& path, const char* magic, std::size_t channels) {
  Pnm p;
  p.bytes = read_file(path);
  p.channels = channels;
  const std::string& b = p.bytes;
  const std::string where = path.string() + ": ";
  if (b.size() < 2 || b.compare(0, 2, magic) != 0) {
    throw DataError(where + "wrong magic, expected " + magic);
  }
  std::size_t pos = 2;
  auto next_number = [&](const char* what) {
    while (pos < b.size()) {
      if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    std::size_t value = 0;
    while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos])) && pos - start < 9) {
      value = value * 10 + static_cast<std::size_t>(b[pos] - '0');
      ++pos;
    }
    if (pos == start || (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos])))) {
      throw DataError(where + "malformed header: bad " + what + " at byte " + std::to_string(start));
    }
    return value;
  };
  p.width = next_number("width");
  p.height = next_number("height");
  const std::size_t maxval = next_number("maxval");
  if (p.width == 0 || p.height == 0) throw DataError(where + "malformed header: zero image size");
  if (maxval != 255) throw DataError(where + "unsupported maxval " + std::to_string(maxval) + ", expected 255");
  p.data_offset = pos + 1;  // single whitespace byte after maxval
  const std::size_t expected = p.width * p.height * channels;
  if (b.size() < p.data_offset || b.size() - p.data_offset != expected) {
    throw DataError(where + "pixel data is " +
                    std::to_string(b.size() < p.data_offset ? 0 : b.size() - p.data_offset) + " bytes, expected " +
                    std::to_string(expected));
  }
  return p;
}

void write_pnm(const fs::path& path, const char* magic, std::size_t width, std::size_t height,
               const std::vector<unsigned char>& data) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << magic << '\n' << width << ' ' << height << '\n' << 255 << '\n';
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!os) throw DataError("write failed for " + path.string());
}

unsigned char quantize(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

Tensor load_image(const fs::path& path) {
  const Pnm p = read_pnm(path, "P6", 3);
  Tensor t({3, p.height, p.width});
  const std::size_t plane = p.height * p.width;
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) t[c * plane + i] = p.pixel(i * 3 + c) / 255.0;
  return t;
}

void save_image(const fs::path& path, const Tensor& image) {
  require_rank(image, 3, "save_image");
  if (image.dim(0) != 3) throw ShapeError("save_image: expected 3 channels (dim 0), got " + std::to_string(image.dim(0)));
  const std::size_t h = image.dim(1), w = image.dim(2), plane = h * w;
  std::vector<unsigned char> data(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (std::size_t c = 0; c < 3; ++c) data[i * 3 + c] = quantize(image[c * plane + i]);
  write_pnm(path, "P6", w, h, data);
}

ScribbleMask load_scribble(const fs::path& path) {
  const Pnm p = read_pnm(path, "P5", 1);
  ScribbleMask m(p.height, p.width);
  for (std::size_t i = 0; i < m.labels.size(); ++i) {
    const unsigned char v = p.pixel(i);
    if (v != 0 && v != 128 && v != 255) {
      throw DataError(path.string() + ": invalid scribble byte " + std::to_string(v) + " at file offset " +
                      std::to_string(p.data_offset + i) + " (pixel " + std::to_string(i / p.width) + "," +
                      std::to_string(i % p.width) + "); allowed values are 0, 128, 255");
    }
    m.labels[i] = static_cast<Label>(v);
  }
  return m;
}

void save_scribble(const fs::path& path, const ScribbleMask& mask) {
  std::vector<unsigned char> data(mask.labels.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<unsigned char>(mask.labels[i]);
  write_pnm(path, "P5", mask.width, mask.height, data);
}

BinaryMask load_mask(const fs::path& path) {
  const Pnm p = read_pnm(path, "P5", 1);
  BinaryMask m(p.height, p.width);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = p.pixel(i) >= 128 ? 1 : 0;
  return m;
}

void save_mask(const fs::path& path, const BinaryMask& mask) {
  std::vector<unsigned char> data(mask.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = mask.values[i] ? 255 : 0;
  write_pnm(path, "P5", mask.width, mask.height, data);
}

void save_map(const fs::path& path, const SaliencyMap& map) {
  std::vector<unsigned char> data(map.values.size());
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = quantize(map.values[i]);
  write_pnm(path, "P5", map.width, map.height, data);
}

SaliencyMap load_map(const fs::path& path) {
  const Pnm p = read_pnm(path, "P5", 1);
  SaliencyMap m(p.height, p.width);
  for (std::size_t i = 0; i < m.values.size(); ++i) m.values[i] = p.pixel(i) / 255.0;
  return m;
}

// ---------------------------------------------------------------------------

bool DatasetManifest::has_masks() const {
  return !entries.empty() && std::all_of(entries.begin(), entries.end(), [](const auto& e) { return e.mask.has_value(); });
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.root = path.parent_path();
  m.split = path.stem().string();
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> missing;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() < 2 || fields.size() > 3) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 2 or 3 tab-separated fields, got " +
                      std::to_string(fields.size()));
    }
    ManifestEntry e;
    e.image = fields[0];
    e.scribble = fields[1];
    if (fields.size() == 3) e.mask = fields[2];
    e.id = e.image.stem().string();
    for (const auto& rel : {std::optional<fs::path>(e.image), std::optional<fs::path>(e.scribble), e.mask}) {
      if (rel && !fs::exists(m.root / *rel)) missing.push_back(rel->string());
    }
    m.entries.push_back(std::move(e));
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
    throw DataError(path.string() + ": missing files: " + list);
  }
  if (m.entries.empty()) throw DataError(path.string() + ": manifest has no samples");
  return m;
}

void save_manifest(const fs::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  for (const auto& e : manifest.entries) {
    os << e.image.generic_string() << '\t' << e.scribble.generic_string();
    if (e.mask) os << '\t' << e.mask->generic_string();
    os << '\n';
  }
}

Sample load_sample(const DatasetManifest& manifest, std::size_t index) {
  const ManifestEntry& e = manifest.entries.at(index);
  Sample s;
  s.id = e.id;
  s.image = load_image(manifest.root / e.image);
  s.scribble = load_scribble(manifest.root / e.scribble);
  if (e.mask) s.mask = load_mask(manifest.root / *e.mask);
  const std::size_t h = s.height(), w = s.width();
  if (s.scribble.height != h || s.scribble.width != w || (s.mask && (s.mask->height != h || s.mask->width != w))) {
    throw DataError("sample " + e.id + ": image, scribble and mask sizes differ");
  }
  return s;
}

}  // namespace scws
