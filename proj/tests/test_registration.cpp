#include "doctest.h"
#include "support.hpp"

#include "mmreg/error.hpp"
#include "mmreg/registration.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>
#include <sstream>

using namespace mmreg;

namespace {

using Map = Point2 (*)(Point2);

Point2 affine_map(Point2 p) {
  return {1.02 * p.x - 0.03 * p.y + 4.5, 0.01 * p.x + 0.98 * p.y - 2.25};
}

Point2 cubic_map(Point2 p) {
  const double u = p.x / 100.0, v = p.y / 100.0;
  return {p.x + 3.0 * u * u * u - 2.0 * u * v + 0.5 * v * v * v + 1.0,
          p.y - 1.5 * u * u * v + 2.0 * v * v + u - 0.7};
}

std::vector<ControlPoint> sample_cps(Map f, int n, std::uint64_t seed, double extent = 200.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, extent);
  std::vector<ControlPoint> cps;
  for (int i = 0; i < n; ++i) {
    const Point2 r{u(rng), u(rng)};
    cps.push_back({r, f(r), 1.0, std::nullopt});
  }
  return cps;
}

double cross(Point2 o, Point2 a, Point2 b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

double hull_area(std::vector<Point2> p) {
  std::sort(p.begin(), p.end(), [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
  std::vector<Point2> h(2 * p.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0)
      --k;
    h[k++] = p[i];
  }
  for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0)
      --k;
    h[k++] = p[i];
  }
  h.resize(k - 1);
  double a = 0.0;
  for (std::size_t i = 0; i < h.size(); ++i)
    a += cross({0, 0}, h[i], h[(i + 1) % h.size()]);
  return a / 2.0;
}

bool in_circumcircle(Point2 a, Point2 b, Point2 c, Point2 d) {
  const double ax = a.x - d.x, ay = a.y - d.y;
  const double bx = b.x - d.x, by = b.y - d.y;
  const double cx = c.x - d.x, cy = c.y - d.y;
  const double det = (ax * ax + ay * ay) * (bx * cy - cx * by) -
                     (bx * bx + by * by) * (ax * cy - cx * ay) +
                     (cx * cx + cy * cy) * (ax * by - bx * ay);
  return det > 1e-9;
}

// Linear ramp image, reproduced exactly by bilinear sampling.
Image ramp(int w, int h) {
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(x, y) = 0.01 * x + 0.02 * y + 0.1;
  return img;
}

std::vector<ControlPoint> lattice_cps(Map f, int w, int h, int step) {
  std::vector<ControlPoint> cps;
  for (int y = 0; y < h; y += step)
    for (int x = 0; x < w; x += step) {
      const Point2 r{static_cast<double>(x), static_cast<double>(y)};
      cps.push_back({r, f(r), 1.0, std::nullopt});
    }
  return cps;
}

} // namespace

TEST_SUITE("registration") {

TEST_CASE("monomial order and term counts") {
  CHECK(PolynomialModel::term_count(1) == 3);
  CHECK(PolynomialModel::term_count(2) == 6);
  CHECK(PolynomialModel::term_count(3) == 10);
  const auto m = monomials(2.0, 3.0, 3);
  const std::vector<double> expected{1, 2, 3, 4, 6, 9, 8, 12, 18, 27};
  CHECK(m == expected);
}

TEST_CASE("affine fit is exact") {
  const auto cps = sample_cps(affine_map, 12, 1);
  for (int order : {1, 2, 3}) {
    const PolynomialFit f = fit_polynomial(cps, order);
    CHECK(f.rmse < 1e-9);
    for (double r : f.residuals)
      CHECK(r < 1e-9);
    const Point2 p = f.model.apply({57.0, 133.0});
    const Point2 q = affine_map({57.0, 133.0});
    CHECK(std::abs(p.x - q.x) < 1e-8);
    CHECK(std::abs(p.y - q.y) < 1e-8);
  }
}

TEST_CASE("cubic fit reproduces a cubic field") {
  const auto cps = sample_cps(cubic_map, 40, 2);
  CHECK(fit_polynomial(cps, 3).rmse < 1e-6);
  CHECK(fit_polynomial(cps, 1).rmse > 1e-3);
}

TEST_CASE("fits reject underdetermined systems") {
  CHECK_THROWS_AS(fit_polynomial(sample_cps(cubic_map, 9, 3), 3), FitError);
  CHECK_NOTHROW(fit_polynomial(sample_cps(cubic_map, 10, 3), 3));
  std::vector<ControlPoint> line;
  for (int i = 0; i < 8; ++i)
    line.push_back({{1.0 * i, 2.0 * i}, {1.0 * i, 2.0 * i}, 1.0, std::nullopt});
  CHECK_THROWS_AS(fit_polynomial(line, 1), FitError);
  CHECK_THROWS_AS(fit_polynomial(line, 4), ParameterError);
}

TEST_CASE("residuals are invariant to translating both frames") {
  auto cps = sample_cps(cubic_map, 30, 4);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto &cp : cps) {
    cp.sen.x += n(rng);
    cp.sen.y += n(rng);
  }
  auto moved = cps;
  for (auto &cp : moved) {
    cp.ref.x += 1000.0;
    cp.ref.y -= 250.0;
    cp.sen.x += 1000.0;
    cp.sen.y -= 250.0;
  }
  for (int order : {1, 2, 3}) {
    const PolynomialFit a = fit_polynomial(cps, order);
    const PolynomialFit b = fit_polynomial(moved, order);
    CHECK(a.rmse == doctest::Approx(b.rmse).epsilon(1e-9));
    for (std::size_t i = 0; i < cps.size(); ++i)
      CHECK(std::abs(a.residuals[i] - b.residuals[i]) < 1e-9);
  }
}

TEST_CASE("outlier rejection removes planted outliers") {
  auto cps = sample_cps(affine_map, 40, 5);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto &cp : cps) {
    cp.sen.x += n(rng);
    cp.sen.y += n(rng);
  }
  const std::set<std::size_t> planted{3, 17, 31};
  for (std::size_t i : planted)
    cps[i].sen.x += 15.0;
  const RejectionReport r = reject_outliers(cps, 1, 1.0, 10);
  CHECK(r.converged);
  CHECK(r.iterations == 3);
  std::set<std::size_t> removed;
  for (const auto &rc : r.removed)
    removed.insert(rc.original_index);
  CHECK(removed == planted);
  CHECK(r.survivors.size() == 37);
  CHECK(r.final_rmse < 1.0);
  REQUIRE(r.rmse_history.size() == 4);
  for (std::size_t i = 1; i < r.rmse_history.size(); ++i)
    CHECK(r.rmse_history[i] < r.rmse_history[i - 1]);
  for (const auto &rc : r.removed)
    CHECK(rc.residual > rc.rmse_before);
  for (const auto &s : r.survivors)
    CHECK(s.residual.has_value());
}

TEST_CASE("exact control points need no removals") {
  const RejectionReport r = reject_outliers(sample_cps(cubic_map, 25, 6), 3, 0.5, 10);
  CHECK(r.converged);
  CHECK(r.removed.empty());
  CHECK(r.iterations == 0);
  CHECK(r.survivors.size() == 25);
  REQUIRE(r.model);
}

TEST_CASE("rejection stops unconverged at the minimum CP count") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 100.0);
  std::vector<ControlPoint> cps;
  for (int i = 0; i < 20; ++i)
    cps.push_back({{u(rng), u(rng)}, {u(rng), u(rng)}, 1.0, std::nullopt});
  const RejectionReport r = reject_outliers(cps, 1, 0.01, 15);
  CHECK_FALSE(r.converged);
  CHECK(r.survivors.size() == 15);
  CHECK(r.removed.size() == 5);
}

TEST_CASE("delaunay of a unit square") {
  const std::vector<Point2> sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const auto tris = delaunay_triangulate(sq);
  REQUIRE(tris.size() == 2);
  double area = 0.0;
  for (const auto &t : tris) {
    const double a = cross(sq[t[0]], sq[t[1]], sq[t[2]]);
    CHECK(a > 0.0);
    area += a / 2.0;
  }
  CHECK(area == doctest::Approx(1.0));
}

TEST_CASE("delaunay triangulations are empty-circle and cover the hull") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 500.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Point2> pts(60);
    for (auto &p : pts)
      p = {u(rng), u(rng)};
    const auto tris = delaunay_triangulate(pts);
    double area = 0.0;
    for (const auto &t : tris) {
      const double a = cross(pts[t[0]], pts[t[1]], pts[t[2]]);
      CHECK(a > 0.0);
      area += a / 2.0;
      for (std::size_t k = 0; k < pts.size(); ++k) {
        if (static_cast<int>(k) == t[0] || static_cast<int>(k) == t[1] || static_cast<int>(k) == t[2])
          continue;
        CHECK_FALSE(in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pts[k]));
      }
    }
    CHECK(area == doctest::Approx(hull_area(pts)).epsilon(1e-9));
  }
}

TEST_CASE("delaunay edge cases") {
  const std::vector<Point2> tri{{0, 0}, {4, 0}, {0, 3}};
  CHECK(delaunay_triangulate(tri).size() == 1);
  const std::vector<Point2> line{{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  CHECK_THROWS_AS(delaunay_triangulate(line), TinError);
  const std::vector<Point2> two{{0, 0}, {1, 0}};
  CHECK_THROWS_AS(delaunay_triangulate(two), TinError);
}

TEST_CASE("TIN is exact at vertices and continuous across edges") {
  const auto cps = sample_cps(cubic_map, 40, 12);
  const Tin tin = build_tin(cps);
  REQUIRE(!tin.triangles.empty());
  for (std::size_t t = 0; t < tin.triangles.size(); ++t)
    for (int k : tin.triangles[t].v) {
      const Point2 m = tin.map(t, tin.vertices[k].ref);
      CHECK(std::abs(m.x - tin.vertices[k].sen.x) < 1e-9);
      CHECK(std::abs(m.y - tin.vertices[k].sen.y) < 1e-9);
    }
  for (std::size_t s = 0; s < tin.triangles.size(); ++s)
    for (std::size_t t = s + 1; t < tin.triangles.size(); ++t) {
      std::vector<int> shared;
      for (int a : tin.triangles[s].v)
        for (int b : tin.triangles[t].v)
          if (a == b)
            shared.push_back(a);
      if (shared.size() != 2)
        continue;
      const Point2 p = tin.vertices[shared[0]].ref, q = tin.vertices[shared[1]].ref;
      const Point2 mid{0.3 * p.x + 0.7 * q.x, 0.3 * p.y + 0.7 * q.y};
      const Point2 a = tin.map(s, mid), b = tin.map(t, mid);
      CHECK(std::abs(a.x - b.x) < 1e-9);
      CHECK(std::abs(a.y - b.y) < 1e-9);
    }
}

TEST_CASE("TIN drops duplicate control points") {
  auto cps = sample_cps(affine_map, 10, 13);
  cps.push_back(cps[4]);
  const Tin tin = build_tin(cps);
  CHECK(tin.vertices.size() == 10);
  CHECK(tin.dropped == std::vector<std::size_t>{10});
}

TEST_CASE("TIN and affine model agree on affine control points") {
  const auto cps = sample_cps(affine_map, 30, 14);
  const Tin tin = build_tin(cps);
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(0.0, 200.0);
  int tested = 0;
  for (int i = 0; i < 200; ++i) {
    const Point2 p{u(rng), u(rng)};
    const auto t = tin.locate(p);
    if (!t)
      continue;
    ++tested;
    const Point2 a = tin.map(*t, p), b = affine_map(p);
    CHECK(std::abs(a.x - b.x) < 1e-6);
    CHECK(std::abs(a.y - b.y) < 1e-6);
  }
  CHECK(tested > 100);
}

TEST_CASE("rectify with identity and affine TINs") {
  const int w = 60, h = 50;
  const Image sen = testing::random_image(w, h, 15);
  const Tin id = build_tin(lattice_cps([](Point2 p) { return p; }, w, h, 59 / 3));
  const RectifyResult r = rectify(sen, id, nullptr, w, h);
  int covered = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (r.coverage[static_cast<std::size_t>(y) * w + x] == Coverage::Tin) {
        ++covered;
        CHECK(std::abs(r.image.at(x, y) - sen.at(x, y)) <= 1e-9);
      }
  CHECK(covered > w * h / 2);

  const Image lin = ramp(200, 200);
  const Tin aff = build_tin(lattice_cps(affine_map, 120, 120, 20));
  const RectifyResult ra = rectify(lin, aff, nullptr, 120, 120);
  for (int y = 0; y < 120; ++y)
    for (int x = 0; x < 120; ++x) {
      if (ra.coverage[static_cast<std::size_t>(y) * 120 + x] != Coverage::Tin)
        continue;
      const Point2 s = affine_map({1.0 * x, 1.0 * y});
      CHECK(std::abs(ra.image.at(x, y) - (0.01 * s.x + 0.02 * s.y + 0.1)) <= 1e-6);
    }
}

TEST_CASE("rectify falls back to the polynomial outside the hull") {
  const int w = 80, h = 80;
  const Image lin = ramp(120, 120);
  std::vector<ControlPoint> cps;
  for (int y = 20; y <= 60; y += 10)
    for (int x = 20; x <= 60; x += 10) {
      const Point2 r{1.0 * x, 1.0 * y};
      cps.push_back({r, affine_map(r), 1.0, std::nullopt});
    }
  const Tin tin = build_tin(cps);
  const PolynomialFit fit = fit_polynomial(cps, 1);
  const RectifyResult no_fb = rectify(lin, tin, nullptr, w, h);
  const RectifyResult fb = rectify(lin, tin, &fit.model, w, h);
  CHECK(no_fb.unmapped_fraction > 0.5);
  CHECK(no_fb.fallback_fraction == 0.0);
  CHECK(fb.fallback_fraction > 0.5);
  CHECK(fb.unmapped_fraction < no_fb.unmapped_fraction);
  CHECK(fb.coverage[79 * w + 79] == Coverage::Fallback);
  const Point2 s = affine_map({79.0, 79.0});
  CHECK(fb.image.at(79, 79) == doctest::Approx(0.01 * s.x + 0.02 * s.y + 0.1).epsilon(1e-9));
  const RectifyResult par = rectify(lin, tin, &fit.model, w, h, 3);
  CHECK(std::ranges::equal(par.image.pixels(), fb.image.pixels()));
}

TEST_CASE("model files round trip") {
  const auto cps = sample_cps(cubic_map, 20, 16);
  ModelFile m;
  m.polynomial = fit_polynomial(cps, 3).model;
  m.tin = build_tin(cps);
  std::stringstream s;
  write_model(m, s);
  const ModelFile back = read_model(s);
  REQUIRE(back.polynomial);
  REQUIRE(back.tin);
  CHECK(back.tin->triangles.size() == m.tin->triangles.size());
  std::mt19937_64 rng(16);
  std::uniform_real_distribution<double> u(0.0, 200.0);
  for (int i = 0; i < 50; ++i) {
    const Point2 p{u(rng), u(rng)};
    const Point2 a = m.polynomial->apply(p), b = back.polynomial->apply(p);
    CHECK(std::abs(a.x - b.x) < 1e-9);
    CHECK(std::abs(a.y - b.y) < 1e-9);
    const auto t = m.tin->locate(p);
    if (t) {
      const Point2 c = m.tin->map(*t, p), d = back.tin->map(*t, p);
      CHECK(std::abs(c.x - d.x) < 1e-9);
    }
  }
  std::istringstream bad("not a model\n");
  CHECK_THROWS(read_model(bad));
}

} // TEST_SUITE
