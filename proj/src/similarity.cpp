#include "mmreg/similarity.hpp"

#include "mmreg/error.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <string>

namespace mmreg {

std::string_view measure_name(Measure m) {
  switch (m) {
  case Measure::CFOG:
    return "CFOG";
  case Measure::FHOG:
    return "FHOG";
  case Measure::FLSS:
    return "FLSS";
  case Measure::FSURF:
    return "FSURF";
  case Measure::NCC:
    return "NCC";
  case Measure::MI:
    return "MI";
  }
  return "?";
}

std::optional<Measure> parse_measure(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return std::toupper(c); });
  for (Measure m : kAllMeasures)
    if (measure_name(m) == upper)
      return m;
  return std::nullopt;
}

bool is_feature_measure(Measure m) {
  return m != Measure::NCC && m != Measure::MI;
}

void MatchConfig::validate() const {
  if (template_size < 9 || template_size % 2 == 0)
    throw ParameterError("match.template_size must be odd and >= 9, got " +
                         std::to_string(template_size));
  if (search_radius < 1)
    throw ParameterError("match.search_radius must be >= 1, got " +
                         std::to_string(search_radius));
  if (mi_bins < 4)
    throw ParameterError("match.mi_bins must be >= 4, got " +
                         std::to_string(mi_bins));
}

Offset pick_peak(std::span<const double> scores, int radius) {
  const int side = 2 * radius + 1;
  Offset best{};
  double best_score = -std::numeric_limits<double>::infinity();
  long best_mag = std::numeric_limits<long>::max();
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      const double s = scores[static_cast<std::size_t>(dy + radius) * side + dx + radius];
      const long mag = static_cast<long>(dx) * dx + static_cast<long>(dy) * dy;
      if (s > best_score || (s == best_score && mag < best_mag)) {
        best_score = s;
        best_mag = mag;
        best = {dx, dy};
      }
    }
  }
  return best;
}

double parabola_vertex(double s_minus, double s0, double s_plus) {
  const double denom = 2.0 * (s_minus - 2.0 * s0 + s_plus);
  if (std::abs(denom) < 1e-12)
    return 0.0;
  return std::clamp((s_minus - s_plus) / denom, -0.5, 0.5);
}

SubpixelResult subpixel_refine(const SimilarityMap &map) {
  const Offset p = map.peak;
  SubpixelResult r{{static_cast<double>(p.dx), static_cast<double>(p.dy)}, false};
  if (map.exact || std::abs(p.dx) >= map.radius || std::abs(p.dy) >= map.radius)
    return r;
  r.offset.x += parabola_vertex(map.score(p.dx - 1, p.dy), map.score(p.dx, p.dy),
                                map.score(p.dx + 1, p.dy));
  r.offset.y += parabola_vertex(map.score(p.dx, p.dy - 1), map.score(p.dx, p.dy),
                                map.score(p.dx, p.dy + 1));
  r.refined = true;
  return r;
}

namespace {

void check_footprint(int w1, int h1, int w2, int h2, const MatchWindow &win,
                     const MatchConfig &cfg) {
  const int half = cfg.half();
  const int reach = half + cfg.search_radius;
  if (win.ref_x - half < 0 || win.ref_y - half < 0 || win.ref_x + half >= w1 ||
      win.ref_y + half >= h1)
    throw MatchSkipped("template at (" + std::to_string(win.ref_x) + "," +
                       std::to_string(win.ref_y) + ") needs a margin of " +
                       std::to_string(half) + " px inside the reference");
  if (win.sen_x - reach < 0 || win.sen_y - reach < 0 || win.sen_x + reach >= w2 ||
      win.sen_y + reach >= h2)
    throw MatchSkipped("search window at (" + std::to_string(win.sen_x) + "," +
                       std::to_string(win.sen_y) + ") needs a margin of " +
                       std::to_string(reach) + " px inside the sensed image");
}

void check_volumes(const FeatureVolume &d1, const FeatureVolume &d2,
                   const MatchWindow &win, const MatchConfig &cfg) {
  cfg.validate();
  if (d1.dims() != d2.dims())
    throw ParameterError("feature volumes have different dims (" +
                         std::to_string(d1.dims()) + " vs " +
                         std::to_string(d2.dims()) + ")");
  check_footprint(d1.width(), d1.height(), d2.width(), d2.height(), win, cfg);
}

constexpr double kExactSsd = 1e-9;

// best: optimal score of the measure, reached within tol means an exact match.
void finish_map(SimilarityMap &map, double best = HUGE_VAL, double tol = 0.0) {
  map.peak = pick_peak(map.scores, map.radius);
  map.exact = map.score(map.peak.dx, map.peak.dy) >= best - tol;
  const SubpixelResult r = subpixel_refine(map);
  map.subpixel = r.offset;
  map.refined = r.refined;
}

// FFTW plans keyed by transform size.  Planning is serialised; execution
// uses the new-array interface on fftw_malloc buffers, which keeps it
// thread-safe and alignment-consistent.
struct FftPlans {
  fftw_plan forward = nullptr;
  fftw_plan inverse = nullptr;
};

struct FftwBuffer {
  void operator()(void *p) const { fftw_free(p); }
};
using RealBuffer = std::unique_ptr<double[], FftwBuffer>;
using ComplexBuffer = std::unique_ptr<fftw_complex[], FftwBuffer>;

RealBuffer alloc_real(std::size_t n) {
  return RealBuffer(static_cast<double *>(fftw_malloc(sizeof(double) * n)));
}
ComplexBuffer alloc_complex(std::size_t n) {
  return ComplexBuffer(
      static_cast<fftw_complex *>(fftw_malloc(sizeof(fftw_complex) * n)));
}

FftPlans plans_for(int n) {
  static std::mutex mutex;
  static std::map<int, FftPlans> cache;
  std::lock_guard lock(mutex);
  auto it = cache.find(n);
  if (it != cache.end())
    return it->second;
  const std::size_t nr = static_cast<std::size_t>(n) * n;
  const std::size_t nc = static_cast<std::size_t>(n) * (n / 2 + 1);
  RealBuffer r = alloc_real(nr);
  ComplexBuffer c = alloc_complex(nc);
  FftPlans p;
  p.forward = fftw_plan_dft_r2c_2d(n, n, r.get(), c.get(), FFTW_ESTIMATE);
  p.inverse = fftw_plan_dft_c2r_2d(n, n, c.get(), r.get(), FFTW_ESTIMATE);
  cache.emplace(n, p);
  return p;
}

} // namespace

int next_fft_size(int n) {
  for (int m = std::max(n, 1);; ++m) {
    int r = m;
    for (int f : {2, 3, 5, 7})
      while (r % f == 0)
        r /= f;
    if (r == 1)
      return m;
  }
}

SimilarityMap ssd_match_spatial(const FeatureVolume &d1, const FeatureVolume &d2,
                                const MatchWindow &win, const MatchConfig &cfg) {
  check_volumes(d1, d2, win, cfg);
  const int half = cfg.half();
  const int r = cfg.search_radius;
  const int dims = d1.dims();
  SimilarityMap map;
  map.radius = r;
  map.measure = cfg.measure;
  map.scores.assign(static_cast<std::size_t>(map.side()) * map.side(), 0.0);
  double template_energy = 0.0;
  for (int ty = -half; ty <= half; ++ty)
    for (int tx = -half; tx <= half; ++tx)
      for (double v : d1.pixel(win.ref_x + tx, win.ref_y + ty))
        template_energy += v * v;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      double ssd = 0.0;
      for (int ty = -half; ty <= half; ++ty) {
        for (int tx = -half; tx <= half; ++tx) {
          const auto a = d1.pixel(win.ref_x + tx, win.ref_y + ty);
          const auto b = d2.pixel(win.sen_x + tx + dx, win.sen_y + ty + dy);
          for (int c = 0; c < dims; ++c) {
            const double e = a[c] - b[c];
            ssd += e * e;
          }
        }
      }
      map.scores[static_cast<std::size_t>(dy + r) * map.side() + dx + r] = -ssd;
    }
  }
  finish_map(map, 0.0, kExactSsd * template_energy);
  return map;
}

SimilarityMap ssd_match_fft(const FeatureVolume &d1, const FeatureVolume &d2,
                            const MatchWindow &win, const MatchConfig &cfg) {
  check_volumes(d1, d2, win, cfg);
  const int n = cfg.template_size;
  const int half = cfg.half();
  const int r = cfg.search_radius;
  const int span = n + 2 * r; // search window side
  const int fft_n = next_fft_size(span);
  const int fft_half = fft_n / 2 + 1;
  const std::size_t nr = static_cast<std::size_t>(fft_n) * fft_n;
  const std::size_t nc = static_cast<std::size_t>(fft_n) * fft_half;
  const FftPlans plans = plans_for(fft_n);
  const int dims = d1.dims();

  RealBuffer tpl = alloc_real(nr);
  RealBuffer wnd = alloc_real(nr);
  RealBuffer energy = alloc_real(nr);
  ComplexBuffer ft = alloc_complex(nc);
  ComplexBuffer fw = alloc_complex(nc);
  ComplexBuffer cross = alloc_complex(nc);
  std::fill_n(energy.get(), nr, 0.0);
  std::fill_n(&cross[0][0], 2 * nc, 0.0);

  const int t0x = win.ref_x - half;
  const int t0y = win.ref_y - half;
  const int w0x = win.sen_x - half - r;
  const int w0y = win.sen_y - half - r;
  double template_energy = 0.0;

  for (int c = 0; c < dims; ++c) {
    std::fill_n(tpl.get(), nr, 0.0);
    std::fill_n(wnd.get(), nr, 0.0);
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double v = d1.at(t0x + x, t0y + y, c);
        tpl[static_cast<std::size_t>(y) * fft_n + x] = v;
        template_energy += v * v;
      }
    for (int y = 0; y < span; ++y)
      for (int x = 0; x < span; ++x) {
        const double v = d2.at(w0x + x, w0y + y, c);
        wnd[static_cast<std::size_t>(y) * fft_n + x] = v;
        energy[static_cast<std::size_t>(y) * fft_n + x] += v * v;
      }
    fftw_execute_dft_r2c(plans.forward, tpl.get(), ft.get());
    fftw_execute_dft_r2c(plans.forward, wnd.get(), fw.get());
    // conj(F(T)) * F(W) accumulated over channels
    for (std::size_t i = 0; i < nc; ++i) {
      const double ar = ft[i][0], ai = -ft[i][1];
      const double br = fw[i][0], bi = fw[i][1];
      cross[i][0] += ar * br - ai * bi;
      cross[i][1] += ar * bi + ai * br;
    }
  }

  // Windowed energy: correlate summed squared channels with the template mask.
  std::fill_n(tpl.get(), nr, 0.0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      tpl[static_cast<std::size_t>(y) * fft_n + x] = 1.0;
  fftw_execute_dft_r2c(plans.forward, tpl.get(), ft.get());
  fftw_execute_dft_r2c(plans.forward, energy.get(), fw.get());
  for (std::size_t i = 0; i < nc; ++i) {
    const double ar = ft[i][0], ai = -ft[i][1];
    const double br = fw[i][0], bi = fw[i][1];
    fw[i][0] = ar * br - ai * bi;
    fw[i][1] = ar * bi + ai * br;
  }
  fftw_execute_dft_c2r(plans.inverse, fw.get(), energy.get());
  fftw_execute_dft_c2r(plans.inverse, cross.get(), wnd.get());

  const double scale = 1.0 / static_cast<double>(nr);
  SimilarityMap map;
  map.radius = r;
  map.measure = cfg.measure;
  map.scores.assign(static_cast<std::size_t>(map.side()) * map.side(), 0.0);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      const std::size_t k = static_cast<std::size_t>(dy + r) * fft_n + dx + r;
      const double window_energy = energy[k] * scale;
      const double corr = wnd[k] * scale;
      map.scores[static_cast<std::size_t>(dy + r) * map.side() + dx + r] =
          -(template_energy + window_energy - 2.0 * corr);
    }
  }
  finish_map(map, 0.0, kExactSsd * template_energy);
  return map;
}

SimilarityMap ncc_match(const Image &ref, const Image &sen,
                        const MatchWindow &win, const MatchConfig &cfg) {
  cfg.validate();
  check_footprint(ref.width(), ref.height(), sen.width(), sen.height(), win, cfg);
  const int n = cfg.template_size;
  const int half = cfg.half();
  const int r = cfg.search_radius;
  const double count = static_cast<double>(n) * n;

  std::vector<double> tpl(static_cast<std::size_t>(n) * n);
  double mean = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      tpl[static_cast<std::size_t>(y) * n + x] =
          ref.at(win.ref_x - half + x, win.ref_y - half + y);
      mean += tpl[static_cast<std::size_t>(y) * n + x];
    }
  mean /= count;
  double tnorm2 = 0.0;
  for (double &v : tpl) {
    v -= mean;
    tnorm2 += v * v;
  }

  SimilarityMap map;
  map.radius = r;
  map.measure = Measure::NCC;
  map.scores.assign(static_cast<std::size_t>(map.side()) * map.side(), 0.0);
  if (tnorm2 < 1e-18 * count) {
    map.degenerate = true;
    finish_map(map);
    return map;
  }
  const double tnorm = std::sqrt(tnorm2);
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      double sum = 0.0, sum2 = 0.0, dot = 0.0;
      for (int y = 0; y < n; ++y) {
        const int sy = win.sen_y - half + y + dy;
        for (int x = 0; x < n; ++x) {
          const double b = sen.at(win.sen_x - half + x + dx, sy);
          sum += b;
          sum2 += b * b;
          dot += tpl[static_cast<std::size_t>(y) * n + x] * b;
        }
      }
      const double var = sum2 - sum * sum / count;
      double score = 0.0;
      if (var > 1e-18 * count)
        score = std::clamp(dot / (tnorm * std::sqrt(var)), -1.0, 1.0);
      map.scores[static_cast<std::size_t>(dy + r) * map.side() + dx + r] = score;
    }
  }
  finish_map(map, 1.0, 1e-12);
  return map;
}

double mutual_information(std::span<const double> a, double a_lo, double a_hi,
                          std::span<const double> b, double b_lo, double b_hi,
                          int bins) {
  if (a.size() != b.size() || a.empty())
    throw ParameterError("mutual information needs equally sized, non-empty samples");
  if (bins < 2)
    throw ParameterError("mutual information needs at least 2 bins");
  auto bin_of = [bins](double v, double lo, double hi) {
    if (!(hi > lo))
      return 0;
    const int k = static_cast<int>(std::floor((v - lo) / (hi - lo) * bins));
    return std::clamp(k, 0, bins - 1);
  };
  std::vector<double> joint(static_cast<std::size_t>(bins) * bins, 0.0);
  std::vector<double> pa(bins, 0.0), pb(bins, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const int ia = bin_of(a[i], a_lo, a_hi);
    const int ib = bin_of(b[i], b_lo, b_hi);
    joint[static_cast<std::size_t>(ia) * bins + ib] += 1.0;
    pa[ia] += 1.0;
    pb[ib] += 1.0;
  }
  const double total = static_cast<double>(a.size());
  auto entropy = [total](const std::vector<double> &counts) {
    double h = 0.0;
    for (double c : counts)
      if (c > 0.0) {
        const double p = c / total;
        h -= p * std::log(p);
      }
    return h;
  };
  return entropy(pa) + entropy(pb) - entropy(joint);
}

SimilarityMap mi_match(const Image &ref, const Image &sen,
                       const MatchWindow &win, const MatchConfig &cfg) {
  cfg.validate();
  check_footprint(ref.width(), ref.height(), sen.width(), sen.height(), win, cfg);
  const int n = cfg.template_size;
  const int half = cfg.half();
  const int r = cfg.search_radius;

  std::vector<double> tpl(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      tpl[static_cast<std::size_t>(y) * n + x] =
          ref.at(win.ref_x - half + x, win.ref_y - half + y);
  const auto [tlo, thi] = std::minmax_element(tpl.begin(), tpl.end());

  // Sensed bin range is fixed over the whole search area so that every
  // offset is scored against the same quantisation.
  double slo = std::numeric_limits<double>::infinity();
  double shi = -slo;
  for (int y = -half - r; y <= half + r; ++y)
    for (int x = -half - r; x <= half + r; ++x) {
      const double v = sen.at(win.sen_x + x, win.sen_y + y);
      slo = std::min(slo, v);
      shi = std::max(shi, v);
    }

  SimilarityMap map;
  map.radius = r;
  map.measure = Measure::MI;
  map.scores.assign(static_cast<std::size_t>(map.side()) * map.side(), 0.0);
  map.degenerate = !(*thi > *tlo);
  std::vector<double> wnd(tpl.size());
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x)
          wnd[static_cast<std::size_t>(y) * n + x] =
              sen.at(win.sen_x - half + x + dx, win.sen_y - half + y + dy);
      map.scores[static_cast<std::size_t>(dy + r) * map.side() + dx + r] =
          mutual_information(tpl, *tlo, *thi, wnd, slo, shi, cfg.mi_bins);
    }
  }
  finish_map(map);
  return map;
}

} // namespace mmreg
