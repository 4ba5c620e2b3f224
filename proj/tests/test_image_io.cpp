// test_image_io.cpp — PPM/PGM round trips and malformed-input rejection.

#include "doctest.h"
#include "vseg/image_io.hpp"
#include "vseg/rng.hpp"

#include <filesystem>
#include <fstream>

using namespace vseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path dir = fs::temp_directory_path() / "vseg_image_io_test";
  fs::create_directories(dir);
  return dir;
}

Field random_grid_image(Rng& rng, int h, int w) {
  Field image(h, w, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) image(x, y, c) = rng.uniform_int(0, 255) / 255.0;
  return image;
}

}  // namespace

TEST_CASE("ppm round trip is bit exact on the k/255 grid") {
  Rng rng(42);
  Field image = random_grid_image(rng, 7, 5);
  const fs::path path = temp_dir() / "rt.ppm";
  write_ppm(path, image);
  Field back = read_ppm(path);
  REQUIRE(back.height == 7);
  REQUIRE(back.width == 5);
  CHECK(back.values == image.values);  // exact, not approx
}

TEST_CASE("ppm rejects off-grid values and bad files") {
  Field image(2, 2, 3);
  image(0, 0, 0) = 0.5;  // 127.5/255 — not representable
  CHECK_THROWS_AS(write_ppm(temp_dir() / "bad.ppm", image), DataError);

  const fs::path missing = temp_dir() / "missing.ppm";
  fs::remove(missing);
  CHECK_THROWS_AS(read_ppm(missing), DataError);

  const fs::path truncated = temp_dir() / "trunc.ppm";
  {
    std::ofstream out(truncated, std::ios::binary);
    out << "P6\n4 4\n255\n";
    out << "only a few bytes";
  }
  CHECK_THROWS_AS(read_ppm(truncated), DataError);

  const fs::path wrong_magic = temp_dir() / "magic.ppm";
  {
    std::ofstream out(wrong_magic, std::ios::binary);
    out << "P5\n2 2\n255\n\0\0\0\0";
  }
  CHECK_THROWS_AS(read_ppm(wrong_magic), DataError);
}

TEST_CASE("ppm header comments are tolerated") {
  const fs::path path = temp_dir() / "comment.ppm";
  {
    std::ofstream out(path, std::ios::binary);
    out << "P6\n# a comment line\n1 1\n255\n";
    out.put(static_cast<char>(10));
    out.put(static_cast<char>(20));
    out.put(static_cast<char>(30));
  }
  Field image = read_ppm(path);
  CHECK(image(0, 0, 0) == doctest::Approx(10.0 / 255.0));
  CHECK(image(0, 0, 2) == doctest::Approx(30.0 / 255.0));
}

TEST_CASE("pgm round trip, narrow and wide") {
  LabelMap labels(3, 4);
  labels << 0, 1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5;

  const fs::path narrow = temp_dir() / "narrow.pgm";
  write_pgm(narrow, labels, 5);
  int maxval = 0;
  LabelMap back = read_pgm(narrow, &maxval);
  CHECK(maxval == 5);
  CHECK((back == labels).all());

  LabelMap big(2, 2);
  big << 0, 300, 65535, 7;
  const fs::path wide = temp_dir() / "wide.pgm";
  write_pgm(wide, big, 65535);
  LabelMap back_wide = read_pgm(wide, &maxval);
  CHECK(maxval == 65535);
  CHECK((back_wide == big).all());
}

TEST_CASE("pgm rejects out-of-range labels") {
  LabelMap labels(1, 2);
  labels << 0, 6;
  CHECK_THROWS_AS(write_pgm(temp_dir() / "oob.pgm", labels, 5), DataError);

  LabelMap neg(1, 1);
  neg << -1;
  CHECK_THROWS_AS(write_pgm(temp_dir() / "neg.pgm", neg, 5), DataError);

  // A file whose declared maxval is smaller than a stored sample.
  const fs::path lying = temp_dir() / "lying.pgm";
  {
    std::ofstream out(lying, std::ios::binary);
    out << "P5\n1 1\n3\n";
    out.put(static_cast<char>(200));
  }
  CHECK_THROWS_AS(read_pgm(lying), DataError);
}
