#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "doctest.h"
#include "scws/data.hpp"
#include "test_util.hpp"

using namespace scws;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("scws_data_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::string pgm(std::size_t w, std::size_t h, const std::string& body) {
  return "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n" + body;
}

bool same_sample(const Sample& a, const Sample& b) {
  return a.image.shape() == b.image.shape() && testing::max_abs_diff(a.image, b.image) == 0.0 &&
         a.scribble.labels == b.scribble.labels && a.mask.has_value() == b.mask.has_value() &&
         (!a.mask || a.mask->values == b.mask->values);
}

}  // namespace

TEST_SUITE("image io") {
  TEST_CASE("all-zero PGM is an all-unlabeled scribble") {
    TempDir d;
    write_bytes(d.path / "z.pgm", pgm(4, 3, std::string(12, '\0')));
    const ScribbleMask m = load_scribble(d.path / "z.pgm");
    CHECK(m.height == 3);
    CHECK(m.width == 4);
    CHECK(m.count(Label::Unlabeled) == 12);
  }

  TEST_CASE("scribble bytes decode to labels") {
    TempDir d;
    write_bytes(d.path / "s.pgm", pgm(3, 1, std::string{'\0', char(128), char(255)}));
    const ScribbleMask m = load_scribble(d.path / "s.pgm");
    CHECK(m.labels[0] == Label::Unlabeled);
    CHECK(m.labels[1] == Label::Background);
    CHECK(m.labels[2] == Label::Foreground);
  }

  TEST_CASE("illegal scribble byte is reported with its offset") {
    TempDir d;
    std::string body(6, '\0');
    body[4] = char(77);
    const std::string file = pgm(3, 2, body);
    write_bytes(d.path / "bad.pgm", file);
    const std::string offset = std::to_string(file.size() - 2);
    CHECK_THROWS_WITH_AS(load_scribble(d.path / "bad.pgm"),
                         doctest::Contains(doctest::String(("byte 77 at file offset " + offset).c_str())), DataError);
  }

  TEST_CASE("saliency map round trip is within 8-bit quantization") {
    TempDir d;
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SaliencyMap m(7, 9);
    for (double& v : m.values) v = u(rng);
    save_map(d.path / "m.pgm", m);
    const SaliencyMap back = load_map(d.path / "m.pgm");
    REQUIRE(back.size() == m.size());
    for (std::size_t i = 0; i < m.size(); ++i) CHECK(std::abs(back.values[i] - m.values[i]) <= 1.0 / 510 + 1e-15);
  }

  TEST_CASE("8-bit image round trip is exact") {
    TempDir d;
    std::mt19937_64 rng(2);
    Tensor img({3, 5, 6});
    for (double& v : img.data()) v = double(rng() % 256) / 255.0;
    save_image(d.path / "i.ppm", img);
    const Tensor back = load_image(d.path / "i.ppm");
    CHECK(back.shape() == img.shape());
    CHECK(testing::max_abs_diff(back, img) == 0.0);
  }

  TEST_CASE("masks threshold at 128") {
    TempDir d;
    write_bytes(d.path / "m.pgm", pgm(4, 1, std::string{'\0', char(127), char(128), char(255)}));
    const BinaryMask m = load_mask(d.path / "m.pgm");
    CHECK(m.values == std::vector<std::uint8_t>{0, 0, 1, 1});
    CHECK(m.positives() == 2);
  }

  TEST_CASE("malformed files are rejected") {
    TempDir d;
    write_bytes(d.path / "magic.pgm", "P2\n1 1\n255\n\0");
    CHECK_THROWS_WITH_AS(load_scribble(d.path / "magic.pgm"), doctest::Contains("magic"), DataError);
    write_bytes(d.path / "header.pgm", "P5\nx 1\n255\n\0");
    CHECK_THROWS_WITH_AS(load_scribble(d.path / "header.pgm"), doctest::Contains("header"), DataError);
    write_bytes(d.path / "maxval.pgm", "P5\n1 1\n65535\n\0\0");
    CHECK_THROWS_WITH_AS(load_scribble(d.path / "maxval.pgm"), doctest::Contains("maxval"), DataError);
    write_bytes(d.path / "short.ppm", "P6\n2 2\n255\n" + std::string(5, '\0'));
    CHECK_THROWS_WITH_AS(load_image(d.path / "short.ppm"), doctest::Contains("expected 12"), DataError);
    CHECK_THROWS_AS(load_image(d.path / "missing.ppm"), DataError);
    write_bytes(d.path / "gray.pgm", pgm(1, 1, std::string(1, '\0')));
    CHECK_THROWS_AS(load_image(d.path / "gray.pgm"), DataError);
  }

  TEST_CASE("header comments are skipped") {
    TempDir d;
    write_bytes(d.path / "c.pgm", "P5\n# comment\n2 1\n255\n" + std::string{'\0', char(255)});
    CHECK(load_scribble(d.path / "c.pgm").labels[1] == Label::Foreground);
  }
}

TEST_SUITE("manifest") {
  TEST_CASE("round trip and sample loading") {
    TempDir d;
    synth_generate(d.path, 3, 32, 11);
    const DatasetManifest back = load_manifest(d.path / "manifest.tsv");
    REQUIRE(back.size() == 3);
    CHECK(back.has_masks());
    CHECK(back.split == "manifest");
    CHECK(back.entries[1].id == "0001");
    const std::string text = read_bytes(d.path / "manifest.tsv");
    CHECK(text.substr(0, text.find('\n')) == "images/0000.ppm\tscribbles/0000.pgm\tmasks/0000.pgm");
    for (std::size_t i = 0; i < 3; ++i) {
      const Sample loaded = load_sample(back, i);
      const Sample generated = synth_sample(32, 11, i).sample;
      CHECK(same_sample(loaded, generated));
      CHECK(loaded.id == generated.id);
    }
  }

  TEST_CASE("two-column lines have no mask") {
    TempDir d;
    synth_generate(d.path, 1, 16, 3);
    write_bytes(d.path / "train.tsv", "# comment\nimages/0000.ppm\tscribbles/0000.pgm\n");
    const DatasetManifest m = load_manifest(d.path / "train.tsv");
    CHECK(m.split == "train");
    CHECK_FALSE(m.has_masks());
    CHECK_FALSE(load_sample(m, 0).mask.has_value());
  }

  TEST_CASE("missing files, empty manifests and bad lines are rejected") {
    TempDir d;
    write_bytes(d.path / "a.tsv", "x.ppm\ty.pgm\tz.pgm\n");
    CHECK_THROWS_WITH_AS(load_manifest(d.path / "a.tsv"), doctest::Contains("x.ppm, y.pgm, z.pgm"), DataError);
    write_bytes(d.path / "b.tsv", "\n# nothing\n");
    CHECK_THROWS_WITH_AS(load_manifest(d.path / "b.tsv"), doctest::Contains("no samples"), DataError);
    write_bytes(d.path / "c.tsv", "only-one-field\n");
    CHECK_THROWS_WITH_AS(load_manifest(d.path / "c.tsv"), doctest::Contains(":1:"), DataError);
    CHECK_THROWS_AS(load_manifest(d.path / "none.tsv"), DataError);
  }
}

TEST_SUITE("synth") {
  TEST_CASE("fixed seed gives byte-identical datasets") {
    TempDir a, b;
    synth_generate(a.path, 4, 32, 7);
    synth_generate(b.path, 4, 32, 7);
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(a.path)) {
      if (!e.is_regular_file()) continue;
      const fs::path rel = fs::relative(e.path(), a.path);
      CHECK(read_bytes(e.path()) == read_bytes(b.path / rel));
      ++files;
    }
    CHECK(files == 13);
    TempDir c;
    synth_generate(c.path, 1, 32, 8);
    CHECK(read_bytes(a.path / "images/0000.ppm") != read_bytes(c.path / "images/0000.ppm"));
  }

  TEST_CASE("scribbles respect the object masks and coverage bounds") {
    for (std::size_t i = 0; i < 60; ++i) {
      const std::size_t size = i % 3 == 0 ? 32 : 64;
      const SynthSample s = synth_sample(size, 123, i);
      const BinaryMask& mask = *s.sample.mask;
      const ScribbleMask& scr = s.sample.scribble;
      REQUIRE(s.objects.size() >= 1);
      REQUIRE(s.objects.size() <= 3);
      CHECK(scr.count(Label::Foreground) > 0);
      CHECK(scr.count(Label::Background) > 0);
      for (std::size_t p = 0; p < mask.values.size(); ++p) {
        if (scr.labels[p] == Label::Foreground) CHECK(mask.values[p] == 1);
        if (scr.labels[p] == Label::Background) CHECK(mask.values[p] == 0);
      }
      std::size_t union_size = 0;
      for (const auto& obj : s.objects) {
        std::size_t pixels = 0, scribbled = 0;
        for (std::size_t p = 0; p < obj.region.values.size(); ++p) {
          if (!obj.region.values[p]) continue;
          ++pixels;
          if (scr.labels[p] == Label::Foreground) ++scribbled;
        }
        union_size += pixels;
        const double coverage = double(scribbled) / double(pixels);
        CHECK(coverage >= 0.10);
        CHECK(coverage <= 0.30);
      }
      CHECK(union_size == mask.positives());
    }
  }

  TEST_CASE("foreground scribbles stay strictly inside their object") {
    const SynthSample s = synth_sample(64, 5, 0);
    const auto& m = *s.sample.mask;
    for (std::size_t y = 0; y < 64; ++y)
      for (std::size_t x = 0; x < 64; ++x) {
        if (s.sample.scribble.at(y, x) != Label::Foreground) continue;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) CHECK(m.at(y + dy, x + dx) == 1);
      }
  }

  TEST_CASE("image values are 8-bit levels in [0,1]") {
    const Sample s = synth_sample(32, 9, 2).sample;
    for (double v : s.image.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      CHECK(std::abs(v * 255.0 - std::round(v * 255.0)) < 1e-9);
    }
  }

  TEST_CASE("invalid sizes are rejected") {
    CHECK_THROWS_AS(synth_sample(40, 1, 0), std::invalid_argument);
    TempDir d;
    CHECK_THROWS_AS(synth_generate(d.path, 0, 32, 1), std::invalid_argument);
  }
}

TEST_SUITE("augment") {
  TEST_CASE("resize side adds a tenth and rounds up to even") {
    CHECK(augment_resize_side(64) == 72);
    CHECK(augment_resize_side(16) == 18);
    CHECK(augment_resize_side(320) == 352);
    CHECK(augment_resize_side(48) == 54);
  }

  TEST_CASE("flipping twice restores the sample") {
    const Sample s = synth_sample(32, 1, 0).sample;
    CHECK(same_sample(flip_sample(flip_sample(s)), s));
    AugmentParams p = draw_augment(3, 32, 0);
    p.flip = false;
    const Sample plain = apply_augment(s, p, 32);
    p.flip = true;
    CHECK(same_sample(flip_sample(apply_augment(s, p, 32)), plain));
  }

  TEST_CASE("nearest-neighbour resampling keeps legal labels and registration") {
    std::size_t with_foreground = 0;
    for (std::size_t i = 0; i < 100; ++i) {
      const Sample s = synth_sample(32, 77, i).sample;
      const Sample a = augment(s, 1000 + i, 32);
      REQUIRE(a.height() == 32);
      REQUIRE(a.width() == 32);
      REQUIRE(a.scribble.labels.size() == 32 * 32);
      for (std::size_t p = 0; p < a.scribble.labels.size(); ++p) {
        const auto v = static_cast<int>(a.scribble.labels[p]);
        CHECK((v == 0 || v == 128 || v == 255));
        if (a.scribble.labels[p] == Label::Foreground) CHECK(a.mask->values[p] == 1);
        if (a.scribble.labels[p] == Label::Background) CHECK(a.mask->values[p] == 0);
      }
      with_foreground += a.scribble.count(Label::Foreground) > 0 ? 1 : 0;
    }
    CHECK(with_foreground == 100);
  }

  TEST_CASE("same seed gives the same augmentation") {
    const Sample s = synth_sample(32, 4, 1).sample;
    CHECK(same_sample(augment(s, 9, 32), augment(s, 9, 32)));
    bool any_difference = false;
    for (std::uint64_t k = 10; k < 20 && !any_difference; ++k) any_difference = !same_sample(augment(s, k, 32), augment(s, 9, 32));
    CHECK(any_difference);
  }

  TEST_CASE("crop that loses every foreground pixel is re-rolled") {
    Sample s = synth_sample(32, 4, 1).sample;
    std::fill(s.scribble.labels.begin(), s.scribble.labels.end(), Label::Unlabeled);
    s.scribble.at(0, 0) = Label::Foreground;  // only survives crops anchored at the corner
    std::size_t kept = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) kept += augment(s, seed, 32).scribble.count(Label::Foreground) > 0;
    std::size_t first_draw = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      const AugmentParams p = draw_augment(seed, 32, 0);
      first_draw += apply_augment(s, p, 32).scribble.count(Label::Foreground) > 0;
    }
    CHECK(kept > first_draw);
  }

  TEST_CASE("rejects train sizes not divisible by 16") {
    const Sample s = synth_sample(32, 4, 1).sample;
    CHECK_THROWS_AS(augment(s, 1, 24), std::invalid_argument);
  }
}
