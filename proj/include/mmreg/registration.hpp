#pragma once

#include "mmreg/image.hpp"
#include "mmreg/matching.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

namespace mmreg {

// Polynomial map reference -> sensed over monomials of the normalised
// reference coordinates u = (x - center.x) / scale.x, v = (y - center.y) / scale.y
// in the order 1, u, v, u^2, uv, v^2, u^3, u^2 v, u v^2, v^3.
struct PolynomialModel {
  int order = 1;
  Point2 center{0.0, 0.0};
  Point2 scale{1.0, 1.0};
  std::vector<double> coeffs_x;
  std::vector<double> coeffs_y;

  static int term_count(int order);
  Point2 apply(Point2 ref) const;
};

std::vector<double> monomials(double u, double v, int order);

struct PolynomialFit {
  PolynomialModel model;
  std::vector<double> residuals; // Euclidean, pixels
  double rmse = 0.0;
};

// Throws FitError when there are too few points or the design matrix is
// rank deficient.
PolynomialFit fit_polynomial(const std::vector<ControlPoint> &cps, int order);

struct RemovedControlPoint {
  ControlPoint cp;
  std::size_t original_index = 0;
  double residual = 0.0;
  double rmse_before = 0.0;
};

struct RejectionReport {
  std::vector<ControlPoint> survivors; // residual filled from the final fit
  std::vector<std::size_t> survivor_index;
  std::vector<RemovedControlPoint> removed; // in removal order
  std::vector<double> rmse_history;         // one entry per fit
  double final_rmse = 0.0;
  int iterations = 0; // number of removals
  bool converged = false;
  std::optional<PolynomialModel> model;
};

// Repeatedly fits, stops once RMSE < threshold, otherwise removes the single
// largest-residual CP (lowest index on ties).  Stops unconverged when a
// removal would leave fewer than min_cps points.
RejectionReport reject_outliers(const std::vector<ControlPoint> &cps, int order,
                                double rmse_threshold, std::size_t min_cps);

struct TinTriangle {
  std::array<int, 3> v{}; // counter-clockwise in reference coordinates
  // sensed = (a x + b y + c, d x + e y + f) for reference (x, y)
  std::array<double, 6> affine{};
};

struct Tin {
  std::vector<ControlPoint> vertices;
  std::vector<TinTriangle> triangles;
  std::vector<std::size_t> dropped; // input indices dropped as duplicates

  Point2 map(std::size_t tri, Point2 ref) const;
  // First triangle (lowest index) containing the point, if any.
  std::optional<std::size_t> locate(Point2 ref) const;
};

// Bowyer-Watson Delaunay triangulation with ghost triangles for the hull.
// Returns counter-clockwise vertex triples; throws TinError when fewer than
// three non-collinear points are given.
std::vector<std::array<int, 3>> delaunay_triangulate(std::span<const Point2> pts);

Tin build_tin(const std::vector<ControlPoint> &cps);

// Sensed position of a reference point: the containing triangle's affine map,
// else the fallback polynomial, else nothing.
std::optional<Point2> map_point(const Tin &tin, const PolynomialModel *fallback, Point2 ref);

enum class Coverage : std::uint8_t { Unmapped = 0, Tin = 1, Fallback = 2 };

struct RectifyResult {
  Image image;
  std::vector<Coverage> coverage;
  double unmapped_fraction = 0.0;
  double fallback_fraction = 0.0;
};

// Inverse-maps every output pixel of a width x height reference frame into
// the sensed image and samples bilinearly.  Pixels outside the TIN use the
// fallback polynomial when given.
RectifyResult rectify(const Image &sen, const Tin &tin,
                      const PolynomialModel *fallback, int out_width,
                      int out_height, int jobs = 1);

struct ModelFile {
  std::optional<PolynomialModel> polynomial;
  std::optional<Tin> tin;
};

void write_model(const ModelFile &model, std::ostream &out);
ModelFile read_model(std::istream &in);

} // namespace mmreg
