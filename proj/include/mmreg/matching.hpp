#pragma once

#include "mmreg/descriptors.hpp"
#include "mmreg/image.hpp"
#include "mmreg/similarity.hpp"

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mmreg {

struct HarrisParams {
  int grid_n = 10;
  int k_per_chip = 2;
  int chip_size = 60;
  double harris_k = 0.04;
  double min_response = 1e-6;
  double min_separation = 8.0;
  double window_sigma = 1.5;

  void validate() const;
};

struct FeaturePoint {
  double x = 0.0;
  double y = 0.0;
  double response = 0.0;
};

struct ControlPoint {
  Point2 ref;
  Point2 sen;
  double score = 0.0;
  std::optional<double> residual;
};

// Harris corner strength det(M) - k trace(M)^2 from a Gaussian-windowed
// structure tensor of central-difference gradients.
Image harris_response(const Image &img, double k, double window_sigma);

// Grid-guided Harris detection.  Chips of chip_size^2 are centred on the
// grid_n x grid_n lattice points ((i + 0.5) W / n, (j + 0.5) H / n); each chip
// contributes its k_per_chip strongest 3x3 maxima.  Points closer than
// border_margin to an image border are discarded.
std::vector<FeaturePoint> detect_harris(const Image &img, const HarrisParams &p,
                                        int border_margin = 0);

struct DescriptorParams {
  CfogParams cfog;
  HogParams hog;
  LssParams lss;
  SurfParams surf;
};

FeatureVolume build_volume(Measure m, const Image &img,
                           const DescriptorParams &p);

// Radius of input pixels that influence one descriptor value; chips carry
// this much context so their volumes equal the whole-image volume inside the
// matching footprint.
int descriptor_margin(Measure m, const DescriptorParams &p);

struct MatchOptions {
  MatchConfig match;
  DescriptorParams descriptors;
  // Whole-image volumes up to this many pixels, per-point chips beyond.
  std::size_t chip_threshold_pixels = 4'000'000;
  int jobs = 1;
  bool use_fft = true;
};

struct SkippedPoint {
  std::size_t index = 0;
  FeaturePoint point;
  std::string reason;
};

struct MatchResult {
  std::vector<ControlPoint> cps;
  std::vector<std::size_t> source_index; // feature point index per CP
  std::vector<SkippedPoint> skipped;
  bool chip_mode = false;
};

// Predicted sensed position of a reference pixel: through the geotransforms
// when both images carry one, identity otherwise.
Point2 predict_sensed(const Image &ref, const Image &sen, Point2 ref_pt);

// Similarity map for one reference point using chip-local volumes.
SimilarityMap match_single(const Image &ref, const Image &sen, Point2 ref_pt,
                           const MatchOptions &opts);

MatchResult match_points(const Image &ref, const Image &sen,
                         const std::vector<FeaturePoint> &points,
                         const MatchOptions &opts);

// As above, reusing whole-image volumes already built for opts.match.measure.
MatchResult match_points(const Image &ref, const Image &sen,
                         const std::vector<FeaturePoint> &points,
                         const MatchOptions &opts, const FeatureVolume &ref_volume,
                         const FeatureVolume &sen_volume);

void write_cp_csv(const std::vector<ControlPoint> &cps, std::ostream &out);
void write_cp_csv(const std::vector<ControlPoint> &cps,
                  const std::filesystem::path &path);
std::vector<ControlPoint> read_cp_csv(std::istream &in);
std::vector<ControlPoint> read_cp_csv(const std::filesystem::path &path);

} // namespace mmreg
