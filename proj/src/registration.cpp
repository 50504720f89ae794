#include "mmreg/registration.hpp"

#include "mmreg/error.hpp"
#include "mmreg/parallel.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>
#include <string>

namespace mmreg {

int PolynomialModel::term_count(int order) {
  if (order < 1 || order > 3)
    throw ParameterError("polynomial order must be 1, 2 or 3, got " +
                         std::to_string(order));
  return (order + 1) * (order + 2) / 2;
}

std::vector<double> monomials(double u, double v, int order) {
  std::vector<double> m;
  m.reserve(PolynomialModel::term_count(order));
  for (int deg = 0; deg <= order; ++deg)
    for (int j = 0; j <= deg; ++j)
      m.push_back(std::pow(u, deg - j) * std::pow(v, j));
  return m;
}

Point2 PolynomialModel::apply(Point2 ref) const {
  const auto m = monomials((ref.x - center.x) / scale.x,
                           (ref.y - center.y) / scale.y, order);
  Point2 out{0.0, 0.0};
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.x += coeffs_x[i] * m[i];
    out.y += coeffs_y[i] * m[i];
  }
  return out;
}

PolynomialFit fit_polynomial(const std::vector<ControlPoint> &cps, int order) {
  const int terms = PolynomialModel::term_count(order);
  const int n = static_cast<int>(cps.size());
  if (n < terms)
    throw FitError("order-" + std::to_string(order) + " polynomial needs at least " +
                   std::to_string(terms) + " control points, got " +
                   std::to_string(n));

  PolynomialModel model;
  model.order = order;
  double minx = std::numeric_limits<double>::infinity(), maxx = -minx;
  double miny = minx, maxy = -minx;
  for (const ControlPoint &cp : cps) {
    minx = std::min(minx, cp.ref.x);
    maxx = std::max(maxx, cp.ref.x);
    miny = std::min(miny, cp.ref.y);
    maxy = std::max(maxy, cp.ref.y);
  }
  model.center = {(minx + maxx) / 2.0, (miny + maxy) / 2.0};
  model.scale = {maxx > minx ? (maxx - minx) / 2.0 : 1.0,
                 maxy > miny ? (maxy - miny) / 2.0 : 1.0};

  Eigen::MatrixXd a(n, terms);
  Eigen::MatrixXd b(n, 2);
  for (int i = 0; i < n; ++i) {
    const auto m = monomials((cps[i].ref.x - model.center.x) / model.scale.x,
                             (cps[i].ref.y - model.center.y) / model.scale.y, order);
    for (int j = 0; j < terms; ++j)
      a(i, j) = m[j];
    b(i, 0) = cps[i].sen.x;
    b(i, 1) = cps[i].sen.y;
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  qr.setThreshold(1e-10);
  if (qr.rank() < terms)
    throw FitError("rank-deficient design matrix for order-" +
                   std::to_string(order) + " polynomial: rank " +
                   std::to_string(qr.rank()) + " of " + std::to_string(terms) +
                   " (reference points collinear or too clustered)");
  const Eigen::MatrixXd sol = qr.solve(b);
  model.coeffs_x.resize(terms);
  model.coeffs_y.resize(terms);
  for (int j = 0; j < terms; ++j) {
    model.coeffs_x[j] = sol(j, 0);
    model.coeffs_y[j] = sol(j, 1);
  }

  PolynomialFit fit;
  fit.model = model;
  fit.residuals.resize(n);
  double ss = 0.0;
  for (int i = 0; i < n; ++i) {
    const Point2 p = model.apply(cps[i].ref);
    fit.residuals[i] = std::hypot(p.x - cps[i].sen.x, p.y - cps[i].sen.y);
    ss += fit.residuals[i] * fit.residuals[i];
  }
  fit.rmse = std::sqrt(ss / n);
  return fit;
}

RejectionReport reject_outliers(const std::vector<ControlPoint> &cps, int order,
                                double rmse_threshold, std::size_t min_cps) {
  const auto terms = static_cast<std::size_t>(PolynomialModel::term_count(order));
  if (min_cps < terms)
    throw ParameterError("min_cps (" + std::to_string(min_cps) +
                         ") must be at least the polynomial term count (" +
                         std::to_string(terms) + ")");
  if (!(rmse_threshold > 0.0))
    throw ParameterError("rejection threshold must be > 0");

  RejectionReport report;
  std::vector<ControlPoint> current = cps;
  std::vector<std::size_t> index(cps.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    index[i] = i;

  const std::size_t cap = cps.size();
  for (;;) {
    const PolynomialFit fit = fit_polynomial(current, order);
    report.rmse_history.push_back(fit.rmse);
    report.final_rmse = fit.rmse;
    report.model = fit.model;
    for (std::size_t i = 0; i < current.size(); ++i)
      current[i].residual = fit.residuals[i];
    if (fit.rmse < rmse_threshold) {
      report.converged = true;
      break;
    }
    if (current.size() <= min_cps ||
        static_cast<std::size_t>(report.iterations) >= cap)
      break;
    const auto worst = static_cast<std::size_t>(
        std::max_element(fit.residuals.begin(), fit.residuals.end()) -
        fit.residuals.begin());
    report.removed.push_back(
        {current[worst], index[worst], fit.residuals[worst], fit.rmse});
    current.erase(current.begin() + static_cast<std::ptrdiff_t>(worst));
    index.erase(index.begin() + static_cast<std::ptrdiff_t>(worst));
    ++report.iterations;
  }
  report.survivors = std::move(current);
  report.survivor_index = std::move(index);
  return report;
}

namespace {

using Real = long double;

Real orient(const Point2 &a, const Point2 &b, const Point2 &c) {
  return (static_cast<Real>(b.x) - a.x) * (static_cast<Real>(c.y) - a.y) -
         (static_cast<Real>(b.y) - a.y) * (static_cast<Real>(c.x) - a.x);
}

// Positive when d lies strictly inside the circumcircle of CCW (a, b, c).
Real incircle(const Point2 &a, const Point2 &b, const Point2 &c, const Point2 &d) {
  const Real adx = static_cast<Real>(a.x) - d.x, ady = static_cast<Real>(a.y) - d.y;
  const Real bdx = static_cast<Real>(b.x) - d.x, bdy = static_cast<Real>(b.y) - d.y;
  const Real cdx = static_cast<Real>(c.x) - d.x, cdy = static_cast<Real>(c.y) - d.y;
  const Real ad = adx * adx + ady * ady;
  const Real bd = bdx * bdx + bdy * bdy;
  const Real cd = cdx * cdx + cdy * cdy;
  return adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx) +
         ad * (bdx * cdy - bdy * cdx);
}

constexpr int kGhost = -1;

struct WorkTriangle {
  std::array<int, 3> v;
  bool alive = true;
};

} // namespace

std::vector<std::array<int, 3>> delaunay_triangulate(std::span<const Point2> pts) {
  const int n = static_cast<int>(pts.size());
  if (n < 3)
    throw TinError("triangulation needs at least 3 points, got " +
                   std::to_string(n));

  double minx = pts[0].x, maxx = pts[0].x, miny = pts[0].y, maxy = pts[0].y;
  for (const Point2 &p : pts) {
    minx = std::min(minx, p.x);
    maxx = std::max(maxx, p.x);
    miny = std::min(miny, p.y);
    maxy = std::max(maxy, p.y);
  }
  const Real extent = std::max({maxx - minx, maxy - miny, 1e-300});
  const Real collinear_eps = 1e-12L * extent * extent;

  int third = -1;
  for (int i = 2; i < n; ++i)
    if (std::abs(orient(pts[0], pts[1], pts[i])) > collinear_eps) {
      third = i;
      break;
    }
  if (third < 0)
    throw TinError("all control points are collinear; no triangle can be formed");

  std::vector<WorkTriangle> tris;
  int a = 0, b = 1, c = third;
  if (orient(pts[a], pts[b], pts[c]) < 0)
    std::swap(b, c);
  tris.push_back({{a, b, c}});
  tris.push_back({{b, a, kGhost}});
  tris.push_back({{c, b, kGhost}});
  tris.push_back({{a, c, kGhost}});

  auto is_bad = [&](const WorkTriangle &t, const Point2 &p) {
    const auto &v = t.v;
    int g = -1;
    for (int k = 0; k < 3; ++k)
      if (v[k] == kGhost)
        g = k;
    if (g < 0)
      return incircle(pts[v[0]], pts[v[1]], pts[v[2]], p) > 0;
    const Point2 &u = pts[v[(g + 1) % 3]];
    const Point2 &w = pts[v[(g + 2) % 3]];
    const Real o = orient(u, w, p);
    if (o > collinear_eps)
      return true;
    if (o < -collinear_eps)
      return false;
    // On the hull line: only the open segment belongs to this ghost.
    const Real t_along = ((static_cast<Real>(p.x) - u.x) * (static_cast<Real>(w.x) - u.x) +
                          (static_cast<Real>(p.y) - u.y) * (static_cast<Real>(w.y) - u.y));
    const Real len2 = (static_cast<Real>(w.x) - u.x) * (static_cast<Real>(w.x) - u.x) +
                      (static_cast<Real>(w.y) - u.y) * (static_cast<Real>(w.y) - u.y);
    return t_along > 0 && t_along < len2;
  };

  for (int pi = 2; pi < n; ++pi) {
    if (pi == third)
      continue;
    const Point2 &p = pts[pi];
    std::vector<std::size_t> bad;
    for (std::size_t t = 0; t < tris.size(); ++t)
      if (tris[t].alive && is_bad(tris[t], p))
        bad.push_back(t);
    if (bad.empty())
      continue; // coincides with an existing vertex

    std::map<std::pair<int, int>, int> edges;
    for (std::size_t t : bad)
      for (int k = 0; k < 3; ++k)
        ++edges[{tris[t].v[k], tris[t].v[(k + 1) % 3]}];
    for (std::size_t t : bad)
      tris[t].alive = false;
    for (std::size_t t : bad) {
      for (int k = 0; k < 3; ++k) {
        const int x = tris[t].v[k];
        const int y = tris[t].v[(k + 1) % 3];
        if (edges.count({y, x}))
          continue;
        std::array<int, 3> nt{x, y, pi};
        // Keep the ghost vertex last so its real edge reads v[0] -> v[1].
        while (nt[0] == kGhost || nt[1] == kGhost)
          nt = {nt[1], nt[2], nt[0]};
        tris.push_back({nt});
      }
    }
  }

  std::vector<std::array<int, 3>> out;
  for (const WorkTriangle &t : tris) {
    if (!t.alive || t.v[0] == kGhost || t.v[1] == kGhost || t.v[2] == kGhost)
      continue;
    if (orient(pts[t.v[0]], pts[t.v[1]], pts[t.v[2]]) / 2 <= 1e-9L)
      continue;
    out.push_back(t.v);
  }
  return out;
}

Point2 Tin::map(std::size_t tri, Point2 ref) const {
  const auto &a = triangles[tri].affine;
  return {a[0] * ref.x + a[1] * ref.y + a[2], a[3] * ref.x + a[4] * ref.y + a[5]};
}

namespace {

// Barycentric containment with a small tolerance so shared edges are covered.
bool triangle_contains(const Point2 &a, const Point2 &b, const Point2 &c,
                       const Point2 &p) {
  const Real area = orient(a, b, c);
  const Real tol = -1e-9L * area;
  return orient(a, b, p) >= tol && orient(b, c, p) >= tol && orient(c, a, p) >= tol;
}

std::array<double, 6> solve_affine(const ControlPoint &p0, const ControlPoint &p1,
                                   const ControlPoint &p2) {
  Eigen::Matrix3d m;
  m << p0.ref.x, p0.ref.y, 1.0, p1.ref.x, p1.ref.y, 1.0, p2.ref.x, p2.ref.y, 1.0;
  const Eigen::Vector3d bx(p0.sen.x, p1.sen.x, p2.sen.x);
  const Eigen::Vector3d by(p0.sen.y, p1.sen.y, p2.sen.y);
  const auto lu = m.fullPivLu();
  const Eigen::Vector3d sx = lu.solve(bx);
  const Eigen::Vector3d sy = lu.solve(by);
  return {sx[0], sx[1], sx[2], sy[0], sy[1], sy[2]};
}

} // namespace

std::optional<std::size_t> Tin::locate(Point2 ref) const {
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    const auto &v = triangles[t].v;
    if (triangle_contains(vertices[v[0]].ref, vertices[v[1]].ref,
                          vertices[v[2]].ref, ref))
      return t;
  }
  return std::nullopt;
}

Tin build_tin(const std::vector<ControlPoint> &cps) {
  Tin tin;
  for (std::size_t i = 0; i < cps.size(); ++i) {
    const bool duplicate =
        std::any_of(tin.vertices.begin(), tin.vertices.end(), [&](const ControlPoint &q) {
          return std::hypot(q.ref.x - cps[i].ref.x, q.ref.y - cps[i].ref.y) < 1e-6;
        });
    if (duplicate)
      tin.dropped.push_back(i);
    else
      tin.vertices.push_back(cps[i]);
  }
  if (tin.vertices.size() < 3)
    throw TinError("TIN needs at least 3 distinct control points, got " +
                   std::to_string(tin.vertices.size()));
  std::vector<Point2> refs;
  refs.reserve(tin.vertices.size());
  for (const ControlPoint &cp : tin.vertices)
    refs.push_back(cp.ref);
  for (const auto &tri : delaunay_triangulate(refs)) {
    TinTriangle t;
    t.v = tri;
    t.affine = solve_affine(tin.vertices[tri[0]], tin.vertices[tri[1]],
                            tin.vertices[tri[2]]);
    tin.triangles.push_back(t);
  }
  if (tin.triangles.empty())
    throw TinError("control points produced no non-degenerate triangle");
  return tin;
}

std::optional<Point2> map_point(const Tin &tin, const PolynomialModel *fallback, Point2 ref) {
  if (const auto t = tin.locate(ref))
    return tin.map(*t, ref);
  if (fallback)
    return fallback->apply(ref);
  return std::nullopt;
}

RectifyResult rectify(const Image &sen, const Tin &tin,
                      const PolynomialModel *fallback, int out_width,
                      int out_height, int jobs) {
  if (out_width < 1 || out_height < 1)
    throw ParameterError("rectification frame must have positive size");
  const std::size_t npx = static_cast<std::size_t>(out_width) * out_height;

  // Owning triangle per output pixel; the lowest index wins on shared edges.
  std::vector<int> owner(npx, -1);
  for (std::size_t t = 0; t < tin.triangles.size(); ++t) {
    const auto &v = tin.triangles[t].v;
    const Point2 &a = tin.vertices[v[0]].ref;
    const Point2 &b = tin.vertices[v[1]].ref;
    const Point2 &c = tin.vertices[v[2]].ref;
    const int x0 = std::max(0, static_cast<int>(std::ceil(std::min({a.x, b.x, c.x}) - 1e-6)));
    const int x1 = std::min(out_width - 1,
                            static_cast<int>(std::floor(std::max({a.x, b.x, c.x}) + 1e-6)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(std::min({a.y, b.y, c.y}) - 1e-6)));
    const int y1 = std::min(out_height - 1,
                            static_cast<int>(std::floor(std::max({a.y, b.y, c.y}) + 1e-6)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        int &o = owner[static_cast<std::size_t>(y) * out_width + x];
        if (o < 0 && triangle_contains(a, b, c, {static_cast<double>(x),
                                                 static_cast<double>(y)}))
          o = static_cast<int>(t);
      }
  }

  RectifyResult result{Image(out_width, out_height), std::vector<Coverage>(npx)};
  parallel_for(static_cast<std::size_t>(out_height), jobs, [&](std::size_t row) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < out_width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * out_width + x;
      const Point2 p{static_cast<double>(x), static_cast<double>(y)};
      Point2 s;
      Coverage kind;
      if (owner[i] >= 0) {
        s = tin.map(static_cast<std::size_t>(owner[i]), p);
        kind = Coverage::Tin;
      } else if (fallback) {
        s = fallback->apply(p);
        kind = Coverage::Fallback;
      } else {
        result.coverage[i] = Coverage::Unmapped;
        continue;
      }
      const auto v = sample_bilinear(sen, s.x, s.y);
      if (v) {
        result.image.at(x, y) = *v;
        result.coverage[i] = kind;
      } else {
        result.coverage[i] = Coverage::Unmapped;
      }
    }
  });

  std::size_t unmapped = 0, fell_back = 0;
  for (Coverage c : result.coverage) {
    unmapped += c == Coverage::Unmapped;
    fell_back += c == Coverage::Fallback;
  }
  result.unmapped_fraction = static_cast<double>(unmapped) / npx;
  result.fallback_fraction = static_cast<double>(fell_back) / npx;
  return result;
}

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void expect_word(std::istream &in, const std::string &word) {
  std::string got;
  if (!(in >> got) || got != word)
    throw IoError("model file: expected '" + word + "', found '" + got + "'");
}

template <typename T> T read_value(std::istream &in, const char *what) {
  T v;
  if (!(in >> v))
    throw IoError(std::string("model file: malformed ") + what);
  return v;
}

} // namespace

void write_model(const ModelFile &model, std::ostream &out) {
  out << "# mmreg transform model\n";
  if (model.polynomial) {
    const PolynomialModel &p = *model.polynomial;
    out << "polynomial\n";
    out << "order " << p.order << "\n";
    out << "center " << fmt17(p.center.x) << " " << fmt17(p.center.y) << "\n";
    out << "scale " << fmt17(p.scale.x) << " " << fmt17(p.scale.y) << "\n";
    out << "coeffs_x";
    for (double c : p.coeffs_x)
      out << " " << fmt17(c);
    out << "\ncoeffs_y";
    for (double c : p.coeffs_y)
      out << " " << fmt17(c);
    out << "\n";
  }
  if (model.tin) {
    const Tin &t = *model.tin;
    out << "tin\n";
    out << "vertices " << t.vertices.size() << "\n";
    for (const ControlPoint &v : t.vertices)
      out << fmt17(v.ref.x) << " " << fmt17(v.ref.y) << " " << fmt17(v.sen.x)
          << " " << fmt17(v.sen.y) << "\n";
    out << "triangles " << t.triangles.size() << "\n";
    for (const TinTriangle &tri : t.triangles) {
      out << tri.v[0] << " " << tri.v[1] << " " << tri.v[2];
      for (double a : tri.affine)
        out << " " << fmt17(a);
      out << "\n";
    }
  }
  out << "end\n";
}

ModelFile read_model(std::istream &in) {
  ModelFile model;
  std::string word;
  while (in >> word) {
    if (word[0] == '#') {
      std::getline(in, word);
      continue;
    }
    if (word == "end")
      return model;
    if (word == "polynomial") {
      PolynomialModel p;
      expect_word(in, "order");
      p.order = read_value<int>(in, "order");
      const int terms = PolynomialModel::term_count(p.order);
      expect_word(in, "center");
      p.center.x = read_value<double>(in, "center");
      p.center.y = read_value<double>(in, "center");
      expect_word(in, "scale");
      p.scale.x = read_value<double>(in, "scale");
      p.scale.y = read_value<double>(in, "scale");
      expect_word(in, "coeffs_x");
      for (int i = 0; i < terms; ++i)
        p.coeffs_x.push_back(read_value<double>(in, "coeffs_x"));
      expect_word(in, "coeffs_y");
      for (int i = 0; i < terms; ++i)
        p.coeffs_y.push_back(read_value<double>(in, "coeffs_y"));
      model.polynomial = p;
    } else if (word == "tin") {
      Tin t;
      expect_word(in, "vertices");
      const auto nv = read_value<std::size_t>(in, "vertex count");
      for (std::size_t i = 0; i < nv; ++i) {
        ControlPoint cp;
        cp.ref.x = read_value<double>(in, "vertex");
        cp.ref.y = read_value<double>(in, "vertex");
        cp.sen.x = read_value<double>(in, "vertex");
        cp.sen.y = read_value<double>(in, "vertex");
        t.vertices.push_back(cp);
      }
      expect_word(in, "triangles");
      const auto nt = read_value<std::size_t>(in, "triangle count");
      for (std::size_t i = 0; i < nt; ++i) {
        TinTriangle tri;
        for (int &v : tri.v) {
          v = read_value<int>(in, "triangle index");
          if (v < 0 || static_cast<std::size_t>(v) >= nv)
            throw IoError("model file: triangle index out of range");
        }
        for (double &a : tri.affine)
          a = read_value<double>(in, "triangle affine");
        t.triangles.push_back(tri);
      }
      model.tin = std::move(t);
    } else {
      throw IoError("model file: unknown block '" + word + "'");
    }
  }
  throw IoError("model file: missing 'end'");
}

} // namespace mmreg
