#pragma once

#include "mmreg/descriptors.hpp"
#include "mmreg/image.hpp"

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mmreg {

enum class Measure { CFOG, FHOG, FLSS, FSURF, NCC, MI };

inline constexpr Measure kAllMeasures[] = {Measure::CFOG, Measure::FHOG,
                                           Measure::FLSS, Measure::FSURF,
                                           Measure::NCC,  Measure::MI};

std::string_view measure_name(Measure m);
std::optional<Measure> parse_measure(std::string_view name);
bool is_feature_measure(Measure m);

// Integer displacement of the sensed window relative to its predicted centre:
// a match at offset v pairs reference pixel x with sensed pixel x + v.
struct Offset {
  int dx = 0;
  int dy = 0;
  bool operator==(const Offset &) const = default;
};

struct MatchConfig {
  int template_size = 101; // odd
  int search_radius = 10;
  Measure measure = Measure::CFOG;
  int mi_bins = 32;

  int half() const { return template_size / 2; }
  void validate() const;
};

// Integer template centre in the reference and predicted centre in the sensed
// image (or volume).
struct MatchWindow {
  int ref_x = 0;
  int ref_y = 0;
  int sen_x = 0;
  int sen_y = 0;

  static MatchWindow same(int x, int y) { return {x, y, x, y}; }
};

// Scores over offsets [-radius, radius]^2, row-major by dy then dx.
// Higher is better for every measure (SSD is stored negated).
struct SimilarityMap {
  int radius = 0;
  std::vector<double> scores;
  Offset peak;
  Point2 subpixel; // refined offset
  bool refined = false;
  bool degenerate = false;
  // Peak reaches the best score the measure allows (zero SSD, unit NCC), so
  // no fractional offset can improve on it.
  bool exact = false;
  Measure measure = Measure::CFOG;

  int side() const { return 2 * radius + 1; }
  double score(int dx, int dy) const {
    return scores[static_cast<std::size_t>(dy + radius) * side() + dx + radius];
  }
};

// Argmax with ties broken by smallest offset magnitude, then row-major order.
Offset pick_peak(std::span<const double> scores, int radius);

// Vertex of the parabola through (-1, s_minus), (0, s0), (1, s_plus),
// clamped to [-0.5, 0.5]; zero when the curvature is degenerate.
double parabola_vertex(double s_minus, double s0, double s_plus);

struct SubpixelResult {
  Point2 offset;
  bool refined = false;
};

// Separable quadratic refinement around the map's peak.  A peak on the map
// border is returned unrefined.
SubpixelResult subpixel_refine(const SimilarityMap &map);

// Negated SSD over feature volumes by direct summation.
SimilarityMap ssd_match_spatial(const FeatureVolume &d1, const FeatureVolume &d2,
                                const MatchWindow &win, const MatchConfig &cfg);

// Same objective evaluated with FFT correlations (cross term and windowed
// energy term).
SimilarityMap ssd_match_fft(const FeatureVolume &d1, const FeatureVolume &d2,
                            const MatchWindow &win, const MatchConfig &cfg);

SimilarityMap ncc_match(const Image &ref, const Image &sen,
                        const MatchWindow &win, const MatchConfig &cfg);

SimilarityMap mi_match(const Image &ref, const Image &sen,
                       const MatchWindow &win, const MatchConfig &cfg);

// Mutual information (natural log) of two equally sized samples, each binned
// uniformly over [lo, hi] into `bins` bins.
double mutual_information(std::span<const double> a, double a_lo, double a_hi,
                          std::span<const double> b, double b_lo, double b_hi,
                          int bins);

// Smallest 2^a 3^b 5^c 7^d that is >= n.
int next_fft_size(int n);

} // namespace mmreg
