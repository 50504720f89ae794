#pragma once

#include "mmreg/image.hpp"
#include "mmreg/matching.hpp"
#include "mmreg/registration.hpp"
#include "mmreg/similarity.hpp"

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mmreg::eval {

enum class SceneKind { Checkerboard, Blobs, FilteredNoise, Loaded };

enum class RadiometryKind { Identity, Inversion, Gamma, Quantize, RegionRemap };

struct Radiometry {
  RadiometryKind kind = RadiometryKind::Identity;
  double gamma = 1.0; // Gamma
  int levels = 8;     // Quantize

  static Radiometry identity() { return {}; }
  static Radiometry inversion() { return {RadiometryKind::Inversion}; }
  static Radiometry gamma_map(double g) { return {RadiometryKind::Gamma, g}; }
  static Radiometry quantize(int l) { return {RadiometryKind::Quantize, 1.0, l}; }
  static Radiometry region_remap() { return {RadiometryKind::RegionRemap}; }
};

std::string radiometry_name(const Radiometry &r);

enum class TransformKind { Translation, Affine, Piecewise };

// Exact reference -> sensed mapping of a synthetic pair.
struct GroundTruth {
  TransformKind kind = TransformKind::Translation;
  double tx = 0.0, ty = 0.0;
  // Affine: sensed = (a x + b y + c, d x + e y + f)
  std::array<double, 6> affine{1.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  // Piecewise: translation everywhere plus (x - split_x) * (kx, ky) right of
  // split_x; continuous across the split line.
  double split_x = 0.0, kx = 0.0, ky = 0.0;

  static GroundTruth translation(double tx, double ty);
  static GroundTruth affine_map(std::array<double, 6> coeffs);
  static GroundTruth piecewise(double tx, double ty, double split_x, double kx,
                               double ky);

  Point2 forward(Point2 ref) const;
  Point2 inverse(Point2 sen) const;
};

struct SyntheticPairSpec {
  SceneKind scene = SceneKind::Blobs;
  int width = 256;
  int height = 256;
  std::optional<Image> loaded; // for SceneKind::Loaded
  Radiometry radiometry;
  double noise_variance = 0.0; // in [0, 0.01]
  GroundTruth transform;

  void validate() const;
};

struct SyntheticPair {
  Image ref;
  Image sen;
  GroundTruth truth;
};

Image generate_scene(SceneKind kind, int width, int height, std::uint64_t seed);
Image apply_radiometry(const Image &img, const Radiometry &r, std::uint64_t seed);

// sensed = transform(radiometry(base)) + N(0, v); deterministic in the seed.
SyntheticPair generate_pair(const SyntheticPairSpec &spec, std::uint64_t seed);

// Location-error threshold for a correct match, pixels.
inline constexpr double kCorrectThreshold = 1.5;

bool is_correct(const ControlPoint &cp, const GroundTruth &truth);

struct SuiteConfig {
  int pairs = 6;
  int image_size = 256;
  int max_shift = 5;
  std::uint64_t seed = 1;
  std::vector<Radiometry> radiometries{Radiometry::inversion(),
                                       Radiometry::gamma_map(0.4),
                                       Radiometry::quantize(8),
                                       Radiometry::region_remap()};
  std::vector<SceneKind> scenes{SceneKind::Blobs, SceneKind::FilteredNoise};
};

// Pair specs of the synthetic suite at one noise level.  Scene, radiometry
// and shift of pair i depend only on (seed, i), so changing the noise leaves
// the rest of the suite unchanged.
std::vector<SyntheticPairSpec> make_suite(const SuiteConfig &cfg,
                                          double noise_variance);
std::vector<SyntheticPair> generate_suite(const SuiteConfig &cfg,
                                          double noise_variance);

struct SweepOptions {
  HarrisParams harris{4, 2, 60};
  int search_radius = 10;
  int mi_bins = 32;
  DescriptorParams descriptors;
  int jobs = 1;
};

struct PrecisionReport {
  Measure measure = Measure::CFOG;
  int template_size = 0;
  double noise_variance = 0.0;
  int correct = 0;
  int total = 0;
  double precision = 0.0;
  double seconds_per_match = 0.0;         // logged only, never in CSV
  std::vector<std::vector<ControlPoint>> cps; // per pair
};

// For every (measure, template size): detect points on each reference (once
// per pair, with the margin of the largest template), match, and count
// matches whose location error is below 1.5 px.  Every attempted feature
// point counts toward the total; skipped points count as incorrect.
std::vector<PrecisionReport> run_precision_sweep(
    const std::vector<SyntheticPair> &pairs, const std::vector<Measure> &measures,
    const std::vector<int> &template_sizes, const SweepOptions &opts);

inline constexpr int kNoiseSweepTemplate = 81;

std::vector<PrecisionReport> run_noise_sweep(const SuiteConfig &suite,
                                             const std::vector<Measure> &measures,
                                             const std::vector<double> &variances,
                                             const SweepOptions &opts);

struct ParamCell {
  double sigma = 0.8;
  int m = 9;
  int correct = 0;
  int total = 0;
  double precision = 0.0;
  bool reference = false; // sigma 0.8, m 9
};

struct ParamStudy {
  std::vector<ParamCell> cells;
  std::size_t best = 0;
};

// One-dimensional sweeps around the reference configuration: sigma over
// `sigmas` at m = 9 and m over `ms` at sigma = 0.8, CFOG, template 101.
// Duplicate cells are evaluated once; ties for the best cell go to the first.
ParamStudy run_param_study(const SuiteConfig &suite, const std::vector<double> &sigmas,
                           const std::vector<int> &ms, const SweepOptions &opts,
                           int template_size = 101, double noise_variance = 0.0025);

struct ExtractionTime {
  Measure measure;
  double seconds;
};

// Best-of-`repeats` wall-clock build time per descriptor.
std::vector<ExtractionTime> measure_extraction_times(const Image &img,
                                                     const DescriptorParams &p,
                                                     int repeats = 3);

// Check points for pairs without ground truth: CFOG matches with a large
// template, cleaned by outlier rejection under a strict threshold, keeping the
// `count` with the smallest residuals.
struct CheckPointOptions {
  int template_size = 201;
  int search_radius = 10;
  HarrisParams harris; // 10 x 10 grid, 2 per chip: 200 candidates
  int order = 3;
  double rmse_threshold = 1.0;
  std::size_t count = 50;
  DescriptorParams descriptors;
  int jobs = 1;
};

struct CheckPointSet {
  std::vector<ControlPoint> points; // residual under the cleaned fit
  std::size_t candidates = 0;        // feature points detected
  std::size_t matched = 0;
  bool converged = false;
};

CheckPointSet select_check_points(const Image &ref, const Image &sen,
                                  const CheckPointOptions &opts);

// RMSE of |model(ref) - sen| over the check points the model covers.
struct CheckResult {
  double rmse = 0.0;
  std::size_t used = 0;
};
CheckResult check_rmse(const Tin &tin, const PolynomialModel *fallback,
                       const std::vector<ControlPoint> &checks);

void write_precision_csv(const std::vector<PrecisionReport> &reports,
                         std::ostream &out);
void write_param_csv(const ParamStudy &study, std::ostream &out);
void write_summary(const std::vector<PrecisionReport> &precision,
                   const std::vector<PrecisionReport> &noise,
                   const ParamStudy &params, std::ostream &out);

} // namespace mmreg::eval
