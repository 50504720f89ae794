#include "mmreg/evaluation.hpp"

#include "mmreg/descriptors.hpp"
#include "mmreg/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

namespace mmreg::eval {

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finaliser over a combined key
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double uniform(std::mt19937_64 &rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

void rescale01(Image &img) {
  auto px = img.pixels();
  const auto [mn, mx] = std::minmax_element(px.begin(), px.end());
  const double lo = *mn, range = *mx - *mn;
  for (double &v : px)
    v = range > 1e-12 ? (v - lo) / range : 0.5;
}

Image filtered_noise(int w, int h, double sigma, std::mt19937_64 &rng) {
  Image img(w, h);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (double &v : img.pixels())
    v = n01(rng);
  img = gaussian_convolve(img, sigma);
  rescale01(img);
  return img;
}

Image checkerboard(int w, int h) {
  constexpr int kSquare = 16;
  Image img(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      img.at(x, y) = ((x / kSquare + y / kSquare) % 2) ? 0.8 : 0.2;
  return img;
}

Image blobs(int w, int h, std::mt19937_64 &rng) {
  Image img = filtered_noise(w, h, 8.0, rng);
  for (double &v : img.pixels())
    v = 0.35 + 0.3 * v;

  const int rects = std::max(4, w * h / 2000);
  for (int k = 0; k < rects; ++k) {
    const double cx = uniform(rng, 0, w), cy = uniform(rng, 0, h);
    const double hw = uniform(rng, 3, 20), hh = uniform(rng, 3, 20);
    const double level = uniform(rng, 0, 1);
    for (int y = std::max(0, int(cy - hh)); y < std::min(h, int(cy + hh) + 1); ++y)
      for (int x = std::max(0, int(cx - hw)); x < std::min(w, int(cx + hw) + 1); ++x)
        img.at(x, y) = level;
  }
  const int disks = std::max(2, w * h / 4000);
  for (int k = 0; k < disks; ++k) {
    const double cx = uniform(rng, 0, w), cy = uniform(rng, 0, h);
    const double r = uniform(rng, 3, 15);
    const double level = uniform(rng, 0, 1);
    for (int y = std::max(0, int(cy - r)); y < std::min(h, int(cy + r) + 1); ++y)
      for (int x = std::max(0, int(cx - r)); x < std::min(w, int(cx + r) + 1); ++x) {
        const double dx = x - cx, dy = y - cy;
        if (dx * dx + dy * dy <= r * r)
          img.at(x, y) = level;
      }
  }
  img = gaussian_convolve(img, 0.6);
  for (double &v : img.pixels())
    v = std::clamp(v, 0.0, 1.0);
  return img;
}

double quantize(double v, int levels) {
  const double q = std::floor(std::clamp(v, 0.0, 1.0) * levels);
  return std::min(q, levels - 1.0) / (levels - 1.0);
}

} // namespace

std::string radiometry_name(const Radiometry &r) {
  char buf[64];
  switch (r.kind) {
  case RadiometryKind::Identity:
    return "identity";
  case RadiometryKind::Inversion:
    return "inversion";
  case RadiometryKind::Gamma:
    std::snprintf(buf, sizeof buf, "gamma%g", r.gamma);
    return buf;
  case RadiometryKind::Quantize:
    std::snprintf(buf, sizeof buf, "quantize%d", r.levels);
    return buf;
  case RadiometryKind::RegionRemap:
    return "region-remap";
  }
  return "?";
}

GroundTruth GroundTruth::translation(double tx, double ty) {
  GroundTruth g;
  g.kind = TransformKind::Translation;
  g.tx = tx;
  g.ty = ty;
  return g;
}

GroundTruth GroundTruth::affine_map(std::array<double, 6> coeffs) {
  GroundTruth g;
  g.kind = TransformKind::Affine;
  g.affine = coeffs;
  if (std::abs(coeffs[0] * coeffs[4] - coeffs[1] * coeffs[3]) < 1e-12)
    throw ParameterError("affine ground truth is singular");
  return g;
}

GroundTruth GroundTruth::piecewise(double tx, double ty, double split_x, double kx,
                                   double ky) {
  GroundTruth g;
  g.kind = TransformKind::Piecewise;
  g.tx = tx;
  g.ty = ty;
  g.split_x = split_x;
  g.kx = kx;
  g.ky = ky;
  if (kx <= -1.0)
    throw ParameterError("piecewise ground truth must keep x monotone (kx > -1)");
  return g;
}

Point2 GroundTruth::forward(Point2 p) const {
  switch (kind) {
  case TransformKind::Translation:
    return {p.x + tx, p.y + ty};
  case TransformKind::Affine: {
    const auto &a = affine;
    return {a[0] * p.x + a[1] * p.y + a[2], a[3] * p.x + a[4] * p.y + a[5]};
  }
  case TransformKind::Piecewise: {
    const double s = std::max(0.0, p.x - split_x);
    return {p.x + tx + s * kx, p.y + ty + s * ky};
  }
  }
  return p;
}

Point2 GroundTruth::inverse(Point2 q) const {
  switch (kind) {
  case TransformKind::Translation:
    return {q.x - tx, q.y - ty};
  case TransformKind::Affine: {
    const auto &a = affine;
    const double det = a[0] * a[4] - a[1] * a[3];
    const double x = q.x - a[2], y = q.y - a[5];
    return {(a[4] * x - a[1] * y) / det, (-a[3] * x + a[0] * y) / det};
  }
  case TransformKind::Piecewise: {
    // x' = x + tx for x <= split_x, else split_x + tx + (x - split_x)(1 + kx)
    double x = q.x - tx;
    if (x > split_x)
      x = split_x + (x - split_x) / (1.0 + kx);
    const double s = std::max(0.0, x - split_x);
    return {x, q.y - ty - s * ky};
  }
  }
  return q;
}

void SyntheticPairSpec::validate() const {
  if (scene == SceneKind::Loaded) {
    if (!loaded || loaded->empty())
      throw ParameterError("loaded scene requires an image");
  } else if (width < 16 || height < 16) {
    throw ParameterError("synthetic scenes must be at least 16x16");
  }
  if (!(noise_variance >= 0.0 && noise_variance <= 0.01))
    throw ParameterError("noise variance must lie in [0, 0.01]");
  if (radiometry.kind == RadiometryKind::Gamma && !(radiometry.gamma > 0.0))
    throw ParameterError("gamma must be > 0");
  if (radiometry.kind == RadiometryKind::Quantize && radiometry.levels < 2)
    throw ParameterError("quantization needs at least 2 levels");
}

Image generate_scene(SceneKind kind, int width, int height, std::uint64_t seed) {
  std::mt19937_64 rng(mix(seed, 0x5CE7E));
  switch (kind) {
  case SceneKind::Checkerboard:
    return checkerboard(width, height);
  case SceneKind::Blobs:
    return blobs(width, height, rng);
  case SceneKind::FilteredNoise:
    return filtered_noise(width, height, 2.0, rng);
  case SceneKind::Loaded:
    break;
  }
  throw ParameterError("loaded scenes are not generated");
}

Image apply_radiometry(const Image &img, const Radiometry &r, std::uint64_t seed) {
  Image out = img;
  auto px = out.pixels();
  switch (r.kind) {
  case RadiometryKind::Identity:
    break;
  case RadiometryKind::Inversion:
    for (double &v : px)
      v = 1.0 - v;
    break;
  case RadiometryKind::Gamma:
    for (double &v : px)
      v = std::pow(std::clamp(v, 0.0, 1.0), r.gamma);
    break;
  case RadiometryKind::Quantize:
    for (double &v : px)
      v = quantize(v, r.levels);
    break;
  case RadiometryKind::RegionRemap: {
    // Quadrants split at a seeded point, each with its own monotone or
    // inverting tone curve.
    std::mt19937_64 rng(mix(seed, 0x4E6));
    const double sx = uniform(rng, 0.3, 0.7) * img.width();
    const double sy = uniform(rng, 0.3, 0.7) * img.height();
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        double &v = out.at(x, y);
        const double c = std::clamp(v, 0.0, 1.0);
        const int q = (x >= sx ? 1 : 0) + (y >= sy ? 2 : 0);
        switch (q) {
        case 0:
          v = c;
          break;
        case 1:
          v = 1.0 - c;
          break;
        case 2:
          v = std::sqrt(c);
          break;
        default:
          v = 1.0 - c * c;
          break;
        }
      }
    break;
  }
  }
  return out;
}

SyntheticPair generate_pair(const SyntheticPairSpec &spec, std::uint64_t seed) {
  spec.validate();
  SyntheticPair pair;
  pair.truth = spec.transform;
  pair.ref = spec.scene == SceneKind::Loaded
                 ? *spec.loaded
                 : generate_scene(spec.scene, spec.width, spec.height, seed);
  pair.ref.set_geo(std::nullopt);
  const Image mapped = apply_radiometry(pair.ref, spec.radiometry, seed);

  const int w = pair.ref.width();
  const int h = pair.ref.height();
  pair.sen = Image(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const Point2 src = pair.truth.inverse({double(x), double(y)});
      pair.sen.at(x, y) = sample_bilinear_clamped(mapped, src.x, src.y);
    }

  // The noise field depends only on the seed; its amplitude on the variance.
  std::mt19937_64 rng(mix(seed, 0x0015E));
  std::normal_distribution<double> n01(0.0, 1.0);
  const double sd = std::sqrt(spec.noise_variance);
  for (double &v : pair.sen.pixels()) {
    const double n = n01(rng);
    if (sd > 0.0)
      v += sd * n;
  }
  return pair;
}

bool is_correct(const ControlPoint &cp, const GroundTruth &truth) {
  const Point2 t = truth.forward(cp.ref);
  return std::hypot(cp.sen.x - t.x, cp.sen.y - t.y) < kCorrectThreshold;
}

std::vector<SyntheticPairSpec> make_suite(const SuiteConfig &cfg, double noise_variance) {
  if (cfg.pairs < 1)
    throw ParameterError("suite needs at least one pair");
  if (cfg.radiometries.empty() || cfg.scenes.empty())
    throw ParameterError("suite needs at least one radiometry and one scene");
  if (cfg.max_shift < 0)
    throw ParameterError("suite max_shift must be >= 0");
  std::vector<SyntheticPairSpec> specs;
  for (int i = 0; i < cfg.pairs; ++i) {
    std::mt19937_64 rng(mix(cfg.seed, 1000 + i));
    std::uniform_int_distribution<int> shift(-cfg.max_shift, cfg.max_shift);
    SyntheticPairSpec s;
    const std::size_t nr = cfg.radiometries.size();
    s.radiometry = cfg.radiometries[i % nr];
    s.scene = cfg.scenes[(i / nr) % cfg.scenes.size()];
    s.width = s.height = cfg.image_size;
    s.noise_variance = noise_variance;
    const int tx = shift(rng);
    const int ty = shift(rng);
    s.transform = GroundTruth::translation(tx, ty);
    specs.push_back(std::move(s));
  }
  return specs;
}

std::vector<SyntheticPair> generate_suite(const SuiteConfig &cfg, double noise_variance) {
  std::vector<SyntheticPair> pairs;
  const auto specs = make_suite(cfg, noise_variance);
  for (std::size_t i = 0; i < specs.size(); ++i)
    pairs.push_back(generate_pair(specs[i], mix(cfg.seed, i)));
  return pairs;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

MatchOptions match_options(const SweepOptions &opts, Measure m, int size) {
  MatchOptions mo;
  mo.match.template_size = size;
  mo.match.search_radius = opts.search_radius;
  mo.match.measure = m;
  mo.match.mi_bins = opts.mi_bins;
  mo.descriptors = opts.descriptors;
  mo.jobs = opts.jobs;
  return mo;
}

std::vector<std::vector<FeaturePoint>> detect_all(const std::vector<SyntheticPair> &pairs,
                                                  const SweepOptions &opts,
                                                  int max_template) {
  const int margin = max_template / 2 + opts.search_radius;
  std::vector<std::vector<FeaturePoint>> points;
  for (const SyntheticPair &p : pairs)
    points.push_back(detect_harris(p.ref, opts.harris, margin));
  return points;
}

} // namespace

std::vector<PrecisionReport> run_precision_sweep(const std::vector<SyntheticPair> &pairs,
                                                 const std::vector<Measure> &measures,
                                                 const std::vector<int> &template_sizes,
                                                 const SweepOptions &opts) {
  if (template_sizes.empty())
    throw ParameterError("precision sweep needs at least one template size");
  const int max_template = *std::max_element(template_sizes.begin(), template_sizes.end());
  const auto points = detect_all(pairs, opts, max_template);

  std::vector<PrecisionReport> reports;
  for (Measure m : measures) {
    std::vector<PrecisionReport> per_size(template_sizes.size());
    std::vector<double> seconds(template_sizes.size(), 0.0);
    for (std::size_t s = 0; s < template_sizes.size(); ++s) {
      per_size[s].measure = m;
      per_size[s].template_size = template_sizes[s];
    }
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
      const SyntheticPair &pair = pairs[pi];
      std::optional<FeatureVolume> vr, vs;
      if (is_feature_measure(m)) {
        vr = build_volume(m, pair.ref, opts.descriptors);
        vs = build_volume(m, pair.sen, opts.descriptors);
      }
      for (std::size_t s = 0; s < template_sizes.size(); ++s) {
        const MatchOptions mo = match_options(opts, m, template_sizes[s]);
        const auto t0 = Clock::now();
        const MatchResult res = vr ? match_points(pair.ref, pair.sen, points[pi], mo, *vr, *vs)
                                   : match_points(pair.ref, pair.sen, points[pi], mo);
        seconds[s] += seconds_since(t0);
        PrecisionReport &r = per_size[s];
        r.total += static_cast<int>(points[pi].size());
        for (const ControlPoint &cp : res.cps)
          r.correct += is_correct(cp, pair.truth) ? 1 : 0;
        r.cps.push_back(res.cps);
      }
    }
    for (std::size_t s = 0; s < template_sizes.size(); ++s) {
      PrecisionReport &r = per_size[s];
      r.precision = r.total > 0 ? static_cast<double>(r.correct) / r.total : 0.0;
      r.seconds_per_match = r.total > 0 ? seconds[s] / r.total : 0.0;
      reports.push_back(std::move(r));
    }
  }
  return reports;
}

std::vector<PrecisionReport> run_noise_sweep(const SuiteConfig &suite,
                                             const std::vector<Measure> &measures,
                                             const std::vector<double> &variances,
                                             const SweepOptions &opts) {
  std::vector<PrecisionReport> out;
  for (double v : variances) {
    const auto pairs = generate_suite(suite, v);
    auto reports = run_precision_sweep(pairs, measures, {kNoiseSweepTemplate}, opts);
    for (auto &r : reports) {
      r.noise_variance = v;
      out.push_back(std::move(r));
    }
  }
  return out;
}

ParamStudy run_param_study(const SuiteConfig &suite, const std::vector<double> &sigmas,
                           const std::vector<int> &ms, const SweepOptions &opts,
                           int template_size, double noise_variance) {
  std::vector<ParamCell> cells;
  auto add = [&](double sigma, int m) {
    for (const ParamCell &c : cells)
      if (c.sigma == sigma && c.m == m)
        return;
    ParamCell c;
    c.sigma = sigma;
    c.m = m;
    c.reference = std::abs(sigma - 0.8) < 1e-12 && m == 9;
    cells.push_back(c);
  };
  for (double s : sigmas)
    add(s, 9);
  for (int m : ms)
    add(0.8, m);
  for (ParamCell &c : cells) {
    CfogParams p = opts.descriptors.cfog;
    p.sigma = c.sigma;
    p.m = c.m;
    p.validate();
  }

  const auto pairs = generate_suite(suite, noise_variance);
  const auto points = detect_all(pairs, opts, template_size);
  for (ParamCell &c : cells) {
    SweepOptions o = opts;
    o.descriptors.cfog.sigma = c.sigma;
    o.descriptors.cfog.m = c.m;
    const MatchOptions mo = match_options(o, Measure::CFOG, template_size);
    for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
      const FeatureVolume vr = build_cfog(pairs[pi].ref, o.descriptors.cfog);
      const FeatureVolume vs = build_cfog(pairs[pi].sen, o.descriptors.cfog);
      const MatchResult res =
          match_points(pairs[pi].ref, pairs[pi].sen, points[pi], mo, vr, vs);
      c.total += static_cast<int>(points[pi].size());
      for (const ControlPoint &cp : res.cps)
        c.correct += is_correct(cp, pairs[pi].truth) ? 1 : 0;
    }
    c.precision = c.total > 0 ? static_cast<double>(c.correct) / c.total : 0.0;
  }

  ParamStudy study;
  study.cells = std::move(cells);
  for (std::size_t i = 1; i < study.cells.size(); ++i)
    if (study.cells[i].precision > study.cells[study.best].precision)
      study.best = i;
  return study;
}

std::vector<ExtractionTime> measure_extraction_times(const Image &img,
                                                     const DescriptorParams &p,
                                                     int repeats) {
  std::vector<ExtractionTime> out;
  for (Measure m : {Measure::CFOG, Measure::FHOG, Measure::FLSS, Measure::FSURF}) {
    double best = 0.0;
    for (int r = 0; r < std::max(1, repeats); ++r) {
      const auto t0 = Clock::now();
      const FeatureVolume v = build_volume(m, img, p);
      const double t = seconds_since(t0);
      if (r == 0 || t < best)
        best = t;
    }
    out.push_back({m, best});
  }
  return out;
}

CheckPointSet select_check_points(const Image &ref, const Image &sen,
                                  const CheckPointOptions &opts) {
  if (opts.count < static_cast<std::size_t>(PolynomialModel::term_count(opts.order)))
    throw ParameterError("check point count below the polynomial term count");
  MatchOptions mo;
  mo.match.template_size = opts.template_size;
  mo.match.search_radius = opts.search_radius;
  mo.match.measure = Measure::CFOG;
  mo.descriptors = opts.descriptors;
  mo.jobs = opts.jobs;
  mo.match.validate();

  CheckPointSet set;
  const int margin = mo.match.half() + mo.match.search_radius;
  const std::vector<FeaturePoint> points = detect_harris(ref, opts.harris, margin);
  set.candidates = points.size();
  const MatchResult mr = match_points(ref, sen, points, mo);
  set.matched = mr.cps.size();
  if (mr.cps.size() < opts.count)
    return set;

  RejectionReport rep = reject_outliers(mr.cps, opts.order, opts.rmse_threshold, opts.count);
  set.converged = rep.converged;
  std::vector<ControlPoint> kept = std::move(rep.survivors);
  std::stable_sort(kept.begin(), kept.end(), [](const ControlPoint &a, const ControlPoint &b) {
    return a.residual.value_or(0.0) < b.residual.value_or(0.0);
  });
  kept.resize(std::min(kept.size(), opts.count));
  set.points = std::move(kept);
  return set;
}

CheckResult check_rmse(const Tin &tin, const PolynomialModel *fallback,
                       const std::vector<ControlPoint> &checks) {
  CheckResult r;
  double sum = 0.0;
  for (const ControlPoint &c : checks) {
    const auto p = map_point(tin, fallback, c.ref);
    if (!p)
      continue;
    const double dx = p->x - c.sen.x, dy = p->y - c.sen.y;
    sum += dx * dx + dy * dy;
    ++r.used;
  }
  if (r.used > 0)
    r.rmse = std::sqrt(sum / static_cast<double>(r.used));
  return r;
}

void write_precision_csv(const std::vector<PrecisionReport> &reports, std::ostream &out) {
  out << "measure,template_size,noise_variance,correct,total,precision\n";
  char buf[160];
  for (const PrecisionReport &r : reports) {
    std::snprintf(buf, sizeof buf, "%s,%d,%.6g,%d,%d,%.6f\n",
                  std::string(measure_name(r.measure)).c_str(), r.template_size,
                  r.noise_variance, r.correct, r.total, r.precision);
    out << buf;
  }
}

void write_param_csv(const ParamStudy &study, std::ostream &out) {
  out << "sigma,m,correct,total,precision,reference,best\n";
  char buf[160];
  for (std::size_t i = 0; i < study.cells.size(); ++i) {
    const ParamCell &c = study.cells[i];
    std::snprintf(buf, sizeof buf, "%.6g,%d,%d,%d,%.6f,%d,%d\n", c.sigma, c.m, c.correct,
                  c.total, c.precision, c.reference ? 1 : 0, i == study.best ? 1 : 0);
    out << buf;
  }
}

void write_summary(const std::vector<PrecisionReport> &precision,
                   const std::vector<PrecisionReport> &noise, const ParamStudy &params,
                   std::ostream &out) {
  char buf[200];
  out << "precision versus template size\n";
  for (const PrecisionReport &r : precision) {
    std::snprintf(buf, sizeof buf, "  %-6s size %3d  %4d / %4d  %.4f\n",
                  std::string(measure_name(r.measure)).c_str(), r.template_size,
                  r.correct, r.total, r.precision);
    out << buf;
  }
  out << "precision versus noise variance (template " << kNoiseSweepTemplate << ")\n";
  for (const PrecisionReport &r : noise) {
    std::snprintf(buf, sizeof buf, "  %-6s v %.4f  %4d / %4d  %.4f\n",
                  std::string(measure_name(r.measure)).c_str(), r.noise_variance,
                  r.correct, r.total, r.precision);
    out << buf;
  }
  out << "CFOG parameter study\n";
  for (std::size_t i = 0; i < params.cells.size(); ++i) {
    const ParamCell &c = params.cells[i];
    std::snprintf(buf, sizeof buf, "  sigma %.2f  m %2d  %4d / %4d  %.4f%s%s\n", c.sigma,
                  c.m, c.correct, c.total, c.precision, c.reference ? "  [reference]" : "",
                  i == params.best ? "  [best]" : "");
    out << buf;
  }
}

} // namespace mmreg::eval
