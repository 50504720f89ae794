#include "doctest.h"
#include "support.hpp"

#include "mmreg/error.hpp"
#include "mmreg/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

using namespace mmreg;
namespace fs = std::filesystem;

namespace {

Image quantized(int w, int h, std::uint64_t seed, int levels) {
  Image img = testing::random_image(w, h, seed);
  for (double &v : img.pixels())
    v = std::min(std::floor(v * levels), levels - 1.0) / (levels - 1);
  return img;
}

std::string slurp(const fs::path &p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

} // namespace

TEST_SUITE("io") {

TEST_CASE("PGM round trips at 8 and 16 bits") {
  const fs::path dir = testing::temp_dir("pgm");
  for (int depth : {8, 16}) {
    const int levels = depth == 8 ? 256 : 65536;
    const Image img = quantized(17, 11, 3, levels);
    const fs::path p = dir / ("a" + std::to_string(depth) + ".pgm");
    io::write_pgm(img, p, depth);
    const Image back = io::read_pgm(p);
    REQUIRE(back.width() == 17);
    REQUIRE(back.height() == 11);
    for (std::size_t i = 0; i < img.size(); ++i)
      CHECK(back.pixels()[i] == doctest::Approx(img.pixels()[i]).epsilon(1e-12));
  }
}

TEST_CASE("PGM writer clamps out-of-range values") {
  const fs::path p = testing::temp_dir("pgm_clamp") / "c.pgm";
  Image img(2, 1);
  img.at(0, 0) = -0.3;
  img.at(1, 0) = 1.7;
  io::write_pgm(img, p);
  const Image back = io::read_pgm(p);
  CHECK(back.at(0, 0) == 0.0);
  CHECK(back.at(1, 0) == 1.0);
}

TEST_CASE("malformed PGM is rejected") {
  const fs::path dir = testing::temp_dir("pgm_bad");
  std::ofstream(dir / "p2.pgm") << "P2\n2 2\n255\n0 0 0 0\n";
  CHECK_THROWS_AS(io::read_pgm(dir / "p2.pgm"), IoError);
  std::ofstream(dir / "short.pgm", std::ios::binary) << "P5\n4 4\n255\nabc";
  CHECK_THROWS_AS(io::read_pgm(dir / "short.pgm"), IoError);
  CHECK_THROWS_AS(io::read_pgm(dir / "missing.pgm"), IoError);
}

TEST_CASE("PNG round trips at 8 and 16 bits") {
  const fs::path dir = testing::temp_dir("png");
  for (int depth : {8, 16}) {
    const int levels = depth == 8 ? 256 : 65536;
    const Image img = quantized(9, 14, 8, levels);
    const fs::path p = dir / ("a" + std::to_string(depth) + ".png");
    io::write_png(img, p, depth);
    const Image back = io::read_png(p);
    REQUIRE(back.width() == 9);
    REQUIRE(back.height() == 14);
    for (std::size_t i = 0; i < img.size(); ++i)
      CHECK(back.pixels()[i] == doctest::Approx(img.pixels()[i]).epsilon(1e-12));
  }
}

TEST_CASE("world files") {
  const fs::path dir = testing::temp_dir("wld");
  CHECK(io::world_file_path(dir / "scene.png") == dir / "scene.wld");
  const GeoTransform g{2.5, 0.1, 300000.0, -0.2, -2.5, 4500000.0};
  io::write_world_file(g, dir / "g.wld");
  const auto back = io::read_world_file(dir / "g.wld");
  REQUIRE(back);
  CHECK(back->a == g.a);
  CHECK(back->b == g.b);
  CHECK(back->c == g.c);
  CHECK(back->d == g.d);
  CHECK(back->e == g.e);
  CHECK(back->f == g.f);
  CHECK_FALSE(io::read_world_file(dir / "none.wld"));
  std::ofstream(dir / "bad.wld") << "1\n2\nthree\n";
  CHECK_THROWS_AS(io::read_world_file(dir / "bad.wld"), IoError);
}

TEST_CASE("load and save attach the world file") {
  const fs::path dir = testing::temp_dir("load");
  Image img = quantized(8, 8, 2, 256);
  img.set_geo(GeoTransform{10.0, 0.0, 5.0, 0.0, -10.0, 95.0});
  io::save_image(img, dir / "x.pgm");
  CHECK(fs::exists(dir / "x.wld"));
  const Image back = io::load_image(dir / "x.pgm");
  REQUIRE(back.geo());
  CHECK(back.geo()->c == 5.0);

  Image plain = quantized(8, 8, 3, 256);
  io::save_image(plain, dir / "y.png");
  CHECK_FALSE(fs::exists(dir / "y.wld"));
  CHECK_FALSE(io::load_image(dir / "y.png").geo());
  CHECK_THROWS_AS(io::load_image(dir / "z.tif"), IoError);
}

TEST_CASE("heatmap and matrix writers") {
  const fs::path dir = testing::temp_dir("heat");
  const std::vector<double> v{-2.0, 0.0, 2.0, 1.0, 1.0, 1.0};
  io::write_heatmap_pgm(v, 3, 2, dir / "h.pgm");
  const Image h = io::read_pgm(dir / "h.pgm");
  CHECK(h.at(0, 0) == 0.0);
  CHECK(h.at(2, 0) == 1.0);
  CHECK(h.at(1, 0) == doctest::Approx(128.0 / 255.0).epsilon(0.01));

  const std::vector<double> flat(6, 3.0);
  io::write_heatmap_pgm(flat, 3, 2, dir / "f.pgm");
  const Image f = io::read_pgm(dir / "f.pgm");
  for (double p : f.pixels())
    CHECK(p == 0.0);

  io::write_matrix_text(v, 3, 2, dir / "m.txt");
  std::istringstream in(slurp(dir / "m.txt"));
  std::string line;
  int rows = 0;
  std::vector<double> parsed;
  while (std::getline(in, line)) {
    ++rows;
    std::istringstream ls(line);
    double x;
    while (ls >> x)
      parsed.push_back(x);
  }
  CHECK(rows == 2);
  CHECK(parsed == v);
}

} // TEST_SUITE
