#include "mmreg/matching.hpp"

#include "mmreg/error.hpp"
#include "mmreg/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace mmreg {

void HarrisParams::validate() const {
  if (grid_n < 1)
    throw ParameterError("harris.grid_n must be >= 1");
  if (k_per_chip < 1)
    throw ParameterError("harris.k_per_chip must be >= 1");
  if (chip_size < 16)
    throw ParameterError("harris.chip_size must be >= 16, got " +
                         std::to_string(chip_size));
  if (harris_k <= 0.0)
    throw ParameterError("harris.harris_k must be > 0");
  if (min_response < 0.0)
    throw ParameterError("harris.min_response must be >= 0");
  if (min_separation < 0.0)
    throw ParameterError("harris.min_separation must be >= 0");
  if (!(window_sigma > 0.0))
    throw ParameterError("harris.window_sigma must be > 0");
}

Image harris_response(const Image &img, double k, double window_sigma) {
  const GradientPair g = compute_gradients(img);
  const int w = img.width();
  const int h = img.height();
  Image xx(w, h), yy(w, h), xy(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double gx = g.gx.pixels()[i];
    const double gy = g.gy.pixels()[i];
    xx.pixels()[i] = gx * gx;
    yy.pixels()[i] = gy * gy;
    xy.pixels()[i] = gx * gy;
  }
  xx = gaussian_convolve(xx, window_sigma);
  yy = gaussian_convolve(yy, window_sigma);
  xy = gaussian_convolve(xy, window_sigma);
  Image r(w, h);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double a = xx.pixels()[i];
    const double b = yy.pixels()[i];
    const double c = xy.pixels()[i];
    const double tr = a + b;
    r.pixels()[i] = a * b - c * c - k * tr * tr;
  }
  return r;
}

std::vector<FeaturePoint> detect_harris(const Image &img, const HarrisParams &p,
                                        int border_margin) {
  p.validate();
  const int w = img.width();
  const int h = img.height();
  if (w < p.chip_size || h < p.chip_size)
    throw ParameterError("image " + std::to_string(w) + "x" + std::to_string(h) +
                         " is smaller than one Harris chip (" +
                         std::to_string(p.chip_size) + " px)");
  // Context so that responses inside the chip use interior gradients.
  const int context = static_cast<int>(std::ceil(3.0 * p.window_sigma)) + 2;
  const double min_sep2 = p.min_separation * p.min_separation;

  std::vector<FeaturePoint> points;
  for (int j = 0; j < p.grid_n; ++j) {
    for (int i = 0; i < p.grid_n; ++i) {
      const int cx = static_cast<int>(std::floor((i + 0.5) * w / p.grid_n));
      const int cy = static_cast<int>(std::floor((j + 0.5) * h / p.grid_n));
      const int chip_x0 = std::clamp(cx - p.chip_size / 2, 0, w - p.chip_size);
      const int chip_y0 = std::clamp(cy - p.chip_size / 2, 0, h - p.chip_size);

      const int ex0 = std::max(0, chip_x0 - context);
      const int ey0 = std::max(0, chip_y0 - context);
      const int ex1 = std::min(w, chip_x0 + p.chip_size + context);
      const int ey1 = std::min(h, chip_y0 + p.chip_size + context);
      const Image region = img.crop(ex0, ey0, ex1 - ex0, ey1 - ey0);
      const Image resp = harris_response(region, p.harris_k, p.window_sigma);

      std::vector<FeaturePoint> candidates;
      for (int y = chip_y0; y < chip_y0 + p.chip_size; ++y) {
        for (int x = chip_x0; x < chip_x0 + p.chip_size; ++x) {
          if (x < border_margin || y < border_margin || x >= w - border_margin ||
              y >= h - border_margin)
            continue;
          const int lx = x - ex0;
          const int ly = y - ey0;
          const double v = resp.at(lx, ly);
          if (!(v >= p.min_response))
            continue;
          bool is_max = true;
          for (int dy = -1; dy <= 1 && is_max; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
              if ((dx || dy) && resp.clamped(lx + dx, ly + dy) > v) {
                is_max = false;
                break;
              }
            }
          if (is_max)
            candidates.push_back({static_cast<double>(x), static_cast<double>(y), v});
        }
      }
      std::stable_sort(candidates.begin(), candidates.end(),
                       [](const FeaturePoint &a, const FeaturePoint &b) {
                         return a.response > b.response;
                       });
      int kept = 0;
      for (const FeaturePoint &c : candidates) {
        if (kept >= p.k_per_chip)
          break;
        const bool crowded =
            std::any_of(points.begin(), points.end(), [&](const FeaturePoint &q) {
              const double dx = q.x - c.x, dy = q.y - c.y;
              return dx * dx + dy * dy < min_sep2;
            });
        if (crowded)
          continue;
        points.push_back(c);
        ++kept;
      }
    }
  }
  return points;
}

FeatureVolume build_volume(Measure m, const Image &img, const DescriptorParams &p) {
  switch (m) {
  case Measure::CFOG:
    return build_cfog(img, p.cfog);
  case Measure::FHOG:
    return build_pixelwise_hog(img, p.hog);
  case Measure::FLSS:
    return build_lss(img, p.lss);
  case Measure::FSURF:
    return build_usurf(img, p.surf);
  default:
    throw ParameterError(std::string(measure_name(m)) +
                         " is an intensity measure and has no feature volume");
  }
}

int descriptor_margin(Measure m, const DescriptorParams &p) {
  auto presmooth = [](double s) {
    return s > 0.0 ? static_cast<int>(std::ceil(3.0 * s)) : 0;
  };
  switch (m) {
  case Measure::CFOG:
    return static_cast<int>(std::ceil(3.0 * p.cfog.sigma)) + 2 +
           presmooth(p.cfog.presmooth_sigma);
  case Measure::FHOG:
    return p.hog.cell_size + 2 + presmooth(p.hog.presmooth_sigma);
  case Measure::FLSS:
    return p.lss.region_radius + p.lss.patch_radius + 1;
  case Measure::FSURF:
    return SurfParams::footprint() / 2 + p.surf.haar_scale + 1;
  default:
    return 0;
  }
}

Point2 predict_sensed(const Image &ref, const Image &sen, Point2 ref_pt) {
  if (ref.geo() && sen.geo())
    return geo_predict(*ref.geo(), *sen.geo(), ref_pt);
  return ref_pt;
}

namespace {

struct Rect {
  int x0, y0, x1, y1; // half-open
};

Rect clip(Rect r, const Image &img) {
  return {std::max(r.x0, 0), std::max(r.y0, 0), std::min(r.x1, img.width()),
          std::min(r.y1, img.height())};
}

MatchWindow window_for(const Image &ref, const Image &sen, Point2 ref_pt,
                       const MatchConfig &cfg) {
  MatchWindow win;
  win.ref_x = static_cast<int>(std::lround(ref_pt.x));
  win.ref_y = static_cast<int>(std::lround(ref_pt.y));
  const Point2 pred = predict_sensed(ref, sen, ref_pt);
  if (!std::isfinite(pred.x) || !std::isfinite(pred.y))
    throw MatchSkipped("geo prediction is not finite");
  win.sen_x = static_cast<int>(std::lround(pred.x));
  win.sen_y = static_cast<int>(std::lround(pred.y));
  const int half = cfg.half();
  const int reach = half + cfg.search_radius;
  if (win.ref_x - half < 0 || win.ref_y - half < 0 ||
      win.ref_x + half >= ref.width() || win.ref_y + half >= ref.height())
    throw MatchSkipped("template footprint leaves the reference image");
  if (win.sen_x - reach < 0 || win.sen_y - reach < 0 ||
      win.sen_x + reach >= sen.width() || win.sen_y + reach >= sen.height())
    throw MatchSkipped("search footprint leaves the sensed image");
  return win;
}

SimilarityMap feature_map(const FeatureVolume &d1, const FeatureVolume &d2,
                          const MatchWindow &win, const MatchOptions &opts) {
  return opts.use_fft ? ssd_match_fft(d1, d2, win, opts.match)
                      : ssd_match_spatial(d1, d2, win, opts.match);
}

// Builds volumes on image chips clipped to the image bounds, so descriptor
// border handling coincides with the whole-image build.
SimilarityMap chip_feature_map(const Image &ref, const Image &sen,
                               const MatchWindow &win, const MatchOptions &opts) {
  const Measure m = opts.match.measure;
  const int margin = descriptor_margin(m, opts.descriptors);
  const int half = opts.match.half();
  const int reach = half + opts.match.search_radius;
  const Rect rr = clip({win.ref_x - half - margin, win.ref_y - half - margin,
                        win.ref_x + half + margin + 1, win.ref_y + half + margin + 1},
                       ref);
  const Rect sr = clip({win.sen_x - reach - margin, win.sen_y - reach - margin,
                        win.sen_x + reach + margin + 1, win.sen_y + reach + margin + 1},
                       sen);
  const FeatureVolume d1 = build_volume(
      m, ref.crop(rr.x0, rr.y0, rr.x1 - rr.x0, rr.y1 - rr.y0), opts.descriptors);
  const FeatureVolume d2 = build_volume(
      m, sen.crop(sr.x0, sr.y0, sr.x1 - sr.x0, sr.y1 - sr.y0), opts.descriptors);
  const MatchWindow local{win.ref_x - rr.x0, win.ref_y - rr.y0, win.sen_x - sr.x0,
                          win.sen_y - sr.y0};
  return feature_map(d1, d2, local, opts);
}

SimilarityMap intensity_map(const Image &ref, const Image &sen,
                            const MatchWindow &win, const MatchOptions &opts) {
  if (opts.match.measure == Measure::NCC)
    return ncc_match(ref, sen, win, opts.match);
  return mi_match(ref, sen, win, opts.match);
}

} // namespace

SimilarityMap match_single(const Image &ref, const Image &sen, Point2 ref_pt,
                           const MatchOptions &opts) {
  opts.match.validate();
  const MatchWindow win = window_for(ref, sen, ref_pt, opts.match);
  if (is_feature_measure(opts.match.measure))
    return chip_feature_map(ref, sen, win, opts);
  return intensity_map(ref, sen, win, opts);
}

namespace {

MatchResult match_points_impl(const Image &ref, const Image &sen,
                              const std::vector<FeaturePoint> &points,
                              const MatchOptions &opts, bool chip_mode,
                              const FeatureVolume *whole_ref,
                              const FeatureVolume *whole_sen) {
  MatchResult result;
  result.chip_mode = chip_mode;
  const bool feature = is_feature_measure(opts.match.measure);

  struct Slot {
    std::optional<ControlPoint> cp;
    std::string skip_reason;
  };
  std::vector<Slot> slots(points.size());
  parallel_for(points.size(), opts.jobs, [&](std::size_t i) {
    const FeaturePoint &fp = points[i];
    try {
      const MatchWindow win = window_for(ref, sen, {fp.x, fp.y}, opts.match);
      SimilarityMap map;
      if (!feature)
        map = intensity_map(ref, sen, win, opts);
      else if (result.chip_mode)
        map = chip_feature_map(ref, sen, win, opts);
      else
        map = feature_map(*whole_ref, *whole_sen, win, opts);
      if (map.degenerate) {
        slots[i].skip_reason = "degenerate template (zero variance)";
        return;
      }
      ControlPoint cp;
      cp.ref = {static_cast<double>(win.ref_x), static_cast<double>(win.ref_y)};
      cp.sen = {win.sen_x + map.subpixel.x, win.sen_y + map.subpixel.y};
      cp.score = map.score(map.peak.dx, map.peak.dy);
      slots[i].cp = cp;
    } catch (const MatchSkipped &e) {
      slots[i].skip_reason = e.what();
    }
  });

  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].cp) {
      result.cps.push_back(*slots[i].cp);
      result.source_index.push_back(i);
    } else {
      result.skipped.push_back({i, points[i], slots[i].skip_reason});
    }
  }
  return result;
}

} // namespace

MatchResult match_points(const Image &ref, const Image &sen,
                         const std::vector<FeaturePoint> &points,
                         const MatchOptions &opts) {
  opts.match.validate();
  const Measure m = opts.match.measure;
  const bool feature = is_feature_measure(m);
  const bool chip_mode =
      feature && std::max(ref.size(), sen.size()) > opts.chip_threshold_pixels;
  if (!feature || chip_mode)
    return match_points_impl(ref, sen, points, opts, chip_mode, nullptr, nullptr);
  const FeatureVolume whole_ref = build_volume(m, ref, opts.descriptors);
  const FeatureVolume whole_sen = build_volume(m, sen, opts.descriptors);
  return match_points_impl(ref, sen, points, opts, false, &whole_ref, &whole_sen);
}

MatchResult match_points(const Image &ref, const Image &sen,
                         const std::vector<FeaturePoint> &points,
                         const MatchOptions &opts, const FeatureVolume &ref_volume,
                         const FeatureVolume &sen_volume) {
  opts.match.validate();
  if (!is_feature_measure(opts.match.measure))
    throw ParameterError("precomputed volumes given for an intensity measure");
  if (ref_volume.width() != ref.width() || ref_volume.height() != ref.height() ||
      sen_volume.width() != sen.width() || sen_volume.height() != sen.height())
    throw ParameterError("precomputed volumes do not match the image sizes");
  return match_points_impl(ref, sen, points, opts, false, &ref_volume, &sen_volume);
}

void write_cp_csv(const std::vector<ControlPoint> &cps, std::ostream &out) {
  out << "ref_x,ref_y,sen_x,sen_y,score,residual\n";
  char buf[256];
  for (const ControlPoint &cp : cps) {
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f,%.6f,%.9g,", cp.ref.x, cp.ref.y,
                  cp.sen.x, cp.sen.y, cp.score);
    out << buf;
    if (cp.residual) {
      std::snprintf(buf, sizeof buf, "%.6f", *cp.residual);
      out << buf;
    }
    out << "\n";
  }
}

void write_cp_csv(const std::vector<ControlPoint> &cps,
                  const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw IoError("cannot write " + path.string());
  write_cp_csv(cps, out);
}

std::vector<ControlPoint> read_cp_csv(std::istream &in) {
  std::vector<ControlPoint> cps;
  std::string line;
  if (!std::getline(in, line))
    return cps;
  if (line.rfind("ref_x", 0) != 0)
    throw IoError("control-point CSV is missing its header line");
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty())
      continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ','))
      fields.push_back(f);
    if (!line.empty() && line.back() == ',')
      fields.emplace_back();
    if (fields.size() != 6)
      throw IoError("control-point CSV line " + std::to_string(line_no) +
                    ": expected 6 fields");
    try {
      ControlPoint cp;
      cp.ref = {std::stod(fields[0]), std::stod(fields[1])};
      cp.sen = {std::stod(fields[2]), std::stod(fields[3])};
      cp.score = std::stod(fields[4]);
      if (!fields[5].empty())
        cp.residual = std::stod(fields[5]);
      cps.push_back(cp);
    } catch (const std::exception &) {
      throw IoError("control-point CSV line " + std::to_string(line_no) +
                    ": malformed number");
    }
  }
  return cps;
}

std::vector<ControlPoint> read_cp_csv(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open " + path.string());
  return read_cp_csv(in);
}

} // namespace mmreg
