#include "mmreg/cli.hpp"

#include "mmreg/descriptors.hpp"
#include "mmreg/error.hpp"
#include "mmreg/io.hpp"
#include "mmreg/registration.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace mmreg::cli {

namespace {

std::string trim(const std::string &s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos)
    return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string &s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ','))
    if (!trim(item).empty())
      out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad_value(const std::string &key, const std::string &value,
                            const std::string &what) {
  throw ParameterError("config key '" + key + "': cannot parse '" + value + "' as " + what);
}

int to_int(const std::string &key, const std::string &v) {
  try {
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    if (pos != v.size() || x < INT32_MIN || x > INT32_MAX)
      bad_value(key, v, "an integer");
    return static_cast<int>(x);
  } catch (const std::logic_error &) {
    bad_value(key, v, "an integer");
  }
}

std::uint64_t to_u64(const std::string &key, const std::string &v) {
  try {
    std::size_t pos = 0;
    if (!v.empty() && v[0] == '-')
      bad_value(key, v, "an unsigned integer");
    const unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size())
      bad_value(key, v, "an unsigned integer");
    return x;
  } catch (const std::logic_error &) {
    bad_value(key, v, "an unsigned integer");
  }
}

double to_double(const std::string &key, const std::string &v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(x))
      bad_value(key, v, "a finite number");
    return x;
  } catch (const std::logic_error &) {
    bad_value(key, v, "a number");
  }
}

bool to_bool(const std::string &key, const std::string &v) {
  std::string l = v;
  std::transform(l.begin(), l.end(), l.begin(), [](unsigned char c) { return std::tolower(c); });
  if (l == "true" || l == "yes" || l == "on" || l == "1")
    return true;
  if (l == "false" || l == "no" || l == "off" || l == "0")
    return false;
  bad_value(key, v, "a boolean");
}

Measure to_measure(const std::string &key, const std::string &v) {
  const auto m = parse_measure(v);
  if (!m)
    bad_value(key, v, "a measure (CFOG, FHOG, FLSS, FSURF, NCC, MI)");
  return *m;
}

std::vector<Measure> to_measures(const std::string &key, const std::string &v) {
  std::vector<Measure> out;
  for (const auto &s : split_list(v))
    out.push_back(to_measure(key, s));
  if (out.empty())
    bad_value(key, v, "a non-empty measure list");
  return out;
}

std::vector<int> to_ints(const std::string &key, const std::string &v) {
  std::vector<int> out;
  for (const auto &s : split_list(v))
    out.push_back(to_int(key, s));
  if (out.empty())
    bad_value(key, v, "a non-empty integer list");
  return out;
}

std::vector<double> to_doubles(const std::string &key, const std::string &v) {
  std::vector<double> out;
  for (const auto &s : split_list(v))
    out.push_back(to_double(key, s));
  if (out.empty())
    bad_value(key, v, "a non-empty number list");
  return out;
}

const char *scene_name(eval::SceneKind k) {
  switch (k) {
  case eval::SceneKind::Checkerboard:
    return "checkerboard";
  case eval::SceneKind::Blobs:
    return "blobs";
  case eval::SceneKind::FilteredNoise:
    return "filtered-noise";
  case eval::SceneKind::Loaded:
    return "loaded";
  }
  return "?";
}

std::vector<eval::SceneKind> to_scenes(const std::string &key, const std::string &v) {
  std::vector<eval::SceneKind> out;
  for (const auto &s : split_list(v)) {
    if (s == "checkerboard")
      out.push_back(eval::SceneKind::Checkerboard);
    else if (s == "blobs")
      out.push_back(eval::SceneKind::Blobs);
    else if (s == "filtered-noise")
      out.push_back(eval::SceneKind::FilteredNoise);
    else
      bad_value(key, s, "a scene (checkerboard, blobs, filtered-noise)");
  }
  if (out.empty())
    bad_value(key, v, "a non-empty scene list");
  return out;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

template <class T, class F> std::string join(const std::vector<T> &xs, F f) {
  std::string s;
  for (std::size_t i = 0; i < xs.size(); ++i)
    s += (i ? ", " : "") + f(xs[i]);
  return s;
}

std::string measures_str(const std::vector<Measure> &ms) {
  return join(ms, [](Measure m) { return std::string(measure_name(m)); });
}

struct Key {
  std::string name;
  std::function<void(RunConfig &, const std::string &, const std::string &)> set;
  std::function<std::string(const RunConfig &)> get;
};

#define INT_KEY(NAME, FIELD)                                                           \
  Key {                                                                                \
    NAME, [](RunConfig &c, const std::string &k, const std::string &v) {              \
      c.FIELD = to_int(k, v);                                                          \
    },                                                                                 \
        [](const RunConfig &c) { return std::to_string(c.FIELD); }                     \
  }
#define DOUBLE_KEY(NAME, FIELD)                                                        \
  Key {                                                                                \
    NAME, [](RunConfig &c, const std::string &k, const std::string &v) {              \
      c.FIELD = to_double(k, v);                                                       \
    },                                                                                 \
        [](const RunConfig &c) { return fmt(c.FIELD); }                                \
  }
#define BOOL_KEY(NAME, FIELD)                                                          \
  Key {                                                                                \
    NAME, [](RunConfig &c, const std::string &k, const std::string &v) {              \
      c.FIELD = to_bool(k, v);                                                         \
    },                                                                                 \
        [](const RunConfig &c) { return std::string(c.FIELD ? "true" : "false"); }     \
  }

const std::vector<Key> &key_table() {
  static const std::vector<Key> keys = {
      INT_KEY("match.template_size", match.match.template_size),
      INT_KEY("match.search_radius", match.match.search_radius),
      {"match.measure",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.match.match.measure = to_measure(k, v);
       },
       [](const RunConfig &c) { return std::string(measure_name(c.match.match.measure)); }},
      INT_KEY("match.mi_bins", match.match.mi_bins),
      BOOL_KEY("match.use_fft", match.use_fft),
      {"match.chip_threshold_pixels",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.match.chip_threshold_pixels = to_u64(k, v);
       },
       [](const RunConfig &c) { return std::to_string(c.match.chip_threshold_pixels); }},
      INT_KEY("match.jobs", match.jobs),

      INT_KEY("cfog.m", match.descriptors.cfog.m),
      DOUBLE_KEY("cfog.sigma", match.descriptors.cfog.sigma),
      BOOL_KEY("cfog.normalize", match.descriptors.cfog.normalize),
      DOUBLE_KEY("cfog.presmooth_sigma", match.descriptors.cfog.presmooth_sigma),
      {"cfog.gradient",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         if (v == "central")
           c.match.descriptors.cfog.gradient = GradientOperator::Central;
         else if (v == "sobel")
           c.match.descriptors.cfog.gradient = GradientOperator::Sobel;
         else
           bad_value(k, v, "a gradient operator (central, sobel)");
       },
       [](const RunConfig &c) {
         return std::string(c.match.descriptors.cfog.gradient == GradientOperator::Sobel
                                ? "sobel"
                                : "central");
       }},
      INT_KEY("hog.cell_size", match.descriptors.hog.cell_size),
      DOUBLE_KEY("hog.presmooth_sigma", match.descriptors.hog.presmooth_sigma),
      INT_KEY("lss.patch_radius", match.descriptors.lss.patch_radius),
      INT_KEY("lss.region_radius", match.descriptors.lss.region_radius),
      INT_KEY("lss.radial_bins", match.descriptors.lss.radial_bins),
      INT_KEY("lss.angular_bins", match.descriptors.lss.angular_bins),
      DOUBLE_KEY("lss.var_noise", match.descriptors.lss.var_noise),
      INT_KEY("surf.haar_scale", match.descriptors.surf.haar_scale),

      INT_KEY("harris.grid_n", harris.grid_n),
      INT_KEY("harris.k_per_chip", harris.k_per_chip),
      INT_KEY("harris.chip_size", harris.chip_size),
      DOUBLE_KEY("harris.harris_k", harris.harris_k),
      DOUBLE_KEY("harris.min_response", harris.min_response),
      DOUBLE_KEY("harris.min_separation", harris.min_separation),
      DOUBLE_KEY("harris.window_sigma", harris.window_sigma),

      DOUBLE_KEY("rejection.threshold", rejection_threshold),
      INT_KEY("rejection.order", model_order),
      INT_KEY("rejection.min_cps", min_cps),
      BOOL_KEY("rectify.fallback", tin_fallback),

      BOOL_KEY("check.enabled", check_enabled),
      INT_KEY("check.template_size", check.template_size),
      INT_KEY("check.search_radius", check.search_radius),
      {"check.count",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.check.count = static_cast<std::size_t>(to_u64(k, v));
       },
       [](const RunConfig &c) { return std::to_string(c.check.count); }},
      DOUBLE_KEY("check.threshold", check.rmse_threshold),
      INT_KEY("check.order", check.order),

      {"output.dir",
       [](RunConfig &c, const std::string &, const std::string &v) { c.output_dir = v; },
       [](const RunConfig &c) { return c.output_dir; }},
      {"simmap.measures",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.simmap_measures = to_measures(k, v);
       },
       [](const RunConfig &c) { return measures_str(c.simmap_measures); }},

      {"bench.suite",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         if (v != "quick" && v != "paper")
           bad_value(k, v, "a suite name (quick, paper)");
         apply_bench_preset(c.bench, v);
       },
       [](const RunConfig &c) { return c.bench.suite; }},
      INT_KEY("bench.pairs", bench.pairs),
      INT_KEY("bench.image_size", bench.image_size),
      INT_KEY("bench.max_shift", bench.max_shift),
      {"bench.seed",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.bench.seed = to_u64(k, v);
       },
       [](const RunConfig &c) { return std::to_string(c.bench.seed); }},
      {"bench.scenes",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.bench.scenes = to_scenes(k, v);
       },
       [](const RunConfig &c) {
         return join(c.bench.scenes, [](eval::SceneKind s) { return std::string(scene_name(s)); });
       }},
      {"bench.measures",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.bench.measures = to_measures(k, v);
       },
       [](const RunConfig &c) { return measures_str(c.bench.measures); }},
      {"bench.template_sizes",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.bench.template_sizes = to_ints(k, v);
       },
       [](const RunConfig &c) {
         return join(c.bench.template_sizes, [](int x) { return std::to_string(x); });
       }},
      {"bench.variances",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.bench.variances = to_doubles(k, v);
       },
       [](const RunConfig &c) { return join(c.bench.variances, fmt); }},
      {"bench.sigmas",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.bench.sigmas = to_doubles(k, v);
       },
       [](const RunConfig &c) { return join(c.bench.sigmas, fmt); }},
      {"bench.ms",
       [](RunConfig &c, const std::string &k, const std::string &v) {
         c.bench.ms = to_ints(k, v);
       },
       [](const RunConfig &c) {
         return join(c.bench.ms, [](int x) { return std::to_string(x); });
       }},
      DOUBLE_KEY("bench.param_noise", bench.param_noise),
      INT_KEY("bench.search_radius", bench.search_radius),
      INT_KEY("bench.harris_grid", bench.harris_grid),
  };
  return keys;
}

#undef INT_KEY
#undef DOUBLE_KEY
#undef BOOL_KEY

const Key *find_key(const std::string &name) {
  for (const Key &k : key_table())
    if (k.name == name)
      return &k;
  return nullptr;
}

} // namespace

void apply_bench_preset(BenchConfig &b, const std::string &suite) {
  b = BenchConfig{};
  b.suite = suite;
  if (suite == "paper") {
    b.pairs = 12;
    b.max_shift = 10;
    b.measures.assign(std::begin(kAllMeasures), std::end(kAllMeasures));
    b.template_sizes = {25, 41, 57, 73, 89, 101};
    b.variances = {0.0, 0.0025, 0.005, 0.0075, 0.01};
    b.sigmas = {0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6};
    b.ms = {4, 6, 8, 9, 10, 12, 14, 16, 18};
  } else if (suite != "quick") {
    throw ParameterError("unknown bench suite '" + suite + "' (quick, paper)");
  }
}

RunConfig::RunConfig() {
  // System defaults: 81 px template, peak offsets up to 40 px.
  match.match.template_size = 81;
  match.match.search_radius = 40;
  check.search_radius = 40;
  simmap_measures.assign(std::begin(kAllMeasures), std::end(kAllMeasures));
}

void RunConfig::validate() const {
  match.match.validate();
  match.descriptors.cfog.validate();
  match.descriptors.hog.validate();
  match.descriptors.lss.validate();
  match.descriptors.surf.validate();
  harris.validate();
  if (match.jobs < 1)
    throw ParameterError("match.jobs must be >= 1");
  if (!(rejection_threshold > 0.0))
    throw ParameterError("rejection.threshold must be > 0");
  const int terms = PolynomialModel::term_count(model_order);
  if (min_cps < terms)
    throw ParameterError("rejection.min_cps must be >= " + std::to_string(terms) +
                         " for order " + std::to_string(model_order));
  if (output_dir.empty())
    throw ParameterError("output.dir must not be empty");
  {
    MatchConfig mc;
    mc.template_size = check.template_size;
    mc.search_radius = check.search_radius;
    mc.validate();
  }
  if (!(check.rmse_threshold > 0.0))
    throw ParameterError("check.threshold must be > 0");
  if (check.order < 1 || check.order > 3)
    throw ParameterError("check.order must lie in [1, 3]");
  if (check.count < static_cast<std::size_t>(PolynomialModel::term_count(check.order)))
    throw ParameterError("check.count must be >= " +
                         std::to_string(PolynomialModel::term_count(check.order)) +
                         " for order " + std::to_string(check.order));
  if (simmap_measures.empty())
    throw ParameterError("simmap.measures must not be empty");

  if (bench.pairs < 1)
    throw ParameterError("bench.pairs must be >= 1");
  if (bench.image_size < 64)
    throw ParameterError("bench.image_size must be >= 64");
  if (bench.max_shift < 0 || bench.max_shift > bench.search_radius)
    throw ParameterError("bench.max_shift must lie in [0, bench.search_radius]");
  if (bench.search_radius < 1)
    throw ParameterError("bench.search_radius must be >= 1");
  if (bench.harris_grid < 1)
    throw ParameterError("bench.harris_grid must be >= 1");
  for (int s : bench.template_sizes) {
    MatchConfig mc;
    mc.template_size = s;
    mc.search_radius = bench.search_radius;
    mc.validate();
    if (s / 2 + bench.search_radius >= bench.image_size / 2)
      throw ParameterError("bench.template_sizes: " + std::to_string(s) +
                           " leaves no room inside a " + std::to_string(bench.image_size) +
                           " px image");
  }
  for (double v : bench.variances)
    if (!(v >= 0.0 && v <= 0.01))
      throw ParameterError("bench.variances must lie in [0, 0.01]");
  if (!(bench.param_noise >= 0.0 && bench.param_noise <= 0.01))
    throw ParameterError("bench.param_noise must lie in [0, 0.01]");
  for (double s : bench.sigmas) {
    CfogParams p;
    p.sigma = s;
    p.validate();
  }
  for (int m : bench.ms) {
    CfogParams p;
    p.m = m;
    p.validate();
  }
}

void set_value(RunConfig &cfg, const std::string &key, const std::string &value) {
  const Key *k = find_key(key);
  if (!k)
    throw ParameterError("unknown config key '" + key + "'");
  k->set(cfg, key, value);
  cfg.explicit_values[key] = value;
  if (key == "bench.suite") {
    // The preset resets the bench section; explicit bench values win.
    for (const auto &[name, v] : cfg.explicit_values)
      if (name.rfind("bench.", 0) == 0 && name != "bench.suite")
        find_key(name)->set(cfg, name, v);
  }
}

void parse_config(RunConfig &cfg, std::istream &in, const std::string &origin) {
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos)
      line.erase(hash);
    line = trim(line);
    if (line.empty())
      continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ParameterError(where + "malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParameterError(where + "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!section.empty() && key.find('.') == std::string::npos)
      key = section + "." + key;
    try {
      set_value(cfg, key, value);
    } catch (const ParameterError &e) {
      throw ParameterError(where + e.what());
    }
  }
}

void load_config(RunConfig &cfg, const std::string &path) {
  std::ifstream in(path);
  if (!in)
    throw IoError("cannot open config file " + path);
  parse_config(cfg, in, path);
}

void dump_config(const RunConfig &cfg, std::ostream &out) {
  std::string section;
  for (const Key &k : key_table()) {
    const auto dot = k.name.find('.');
    const std::string s = k.name.substr(0, dot);
    if (s != section) {
      out << (section.empty() ? "" : "\n") << "[" << s << "]\n";
      section = s;
    }
    out << k.name.substr(dot + 1) << " = " << k.get(cfg) << "\n";
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key &k : key_table())
    out.push_back(k.name);
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

class Timer {
public:
  void stage(const std::string &name) {
    const auto now = Clock::now();
    if (!current_.empty())
      laps_.emplace_back(current_, std::chrono::duration<double>(now - start_).count());
    current_ = name;
    start_ = now;
  }
  void write(const fs::path &path) {
    stage("");
    std::ofstream out(path);
    char buf[128];
    for (const auto &[name, s] : laps_) {
      std::snprintf(buf, sizeof buf, "%-12s %.3f s\n", name.c_str(), s);
      out << buf;
    }
  }

private:
  std::string current_;
  Clock::time_point start_;
  std::vector<std::pair<std::string, double>> laps_;
};

struct StageError : std::runtime_error {
  StageError(const std::string &stage, const std::string &msg)
      : std::runtime_error(stage + ": " + msg) {}
};

template <class F> auto in_stage(const std::string &stage, F &&f) {
  try {
    return f();
  } catch (const StageError &) {
    throw;
  } catch (const std::exception &e) {
    throw StageError(stage, e.what());
  }
}

Image load(const std::string &stage, const std::string &path) {
  return in_stage(stage, [&] { return io::load_image(path); });
}

void ensure_dir(const fs::path &dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec)
    throw StageError("output", "cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const fs::path &path) {
  std::ofstream out(path);
  if (!out)
    throw StageError("output", "cannot write " + path.string());
  return out;
}

std::string raster_ext(const std::string &path) {
  std::string ext = fs::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" ? ".png" : ".pgm";
}

void write_rejection_report(const RejectionReport &r, int order, double threshold,
                            std::ostream &out) {
  char buf[256];
  out << "# mmreg rejection report\n";
  out << "order " << order << "\n";
  std::snprintf(buf, sizeof buf, "threshold %.6f\n", threshold);
  out << buf;
  out << "converged " << (r.converged ? "yes" : "no") << "\n";
  out << "iterations " << r.iterations << "\n";
  std::snprintf(buf, sizeof buf, "final_rmse %.6f\n", r.final_rmse);
  out << buf << "rmse_history";
  for (double v : r.rmse_history) {
    std::snprintf(buf, sizeof buf, " %.6f", v);
    out << buf;
  }
  out << "\nremoved " << r.removed.size() << "\n";
  out << "index,ref_x,ref_y,sen_x,sen_y,residual,rmse_before\n";
  for (const RemovedControlPoint &rc : r.removed) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", rc.original_index,
                  rc.cp.ref.x, rc.cp.ref.y, rc.cp.sen.x, rc.cp.sen.y, rc.residual,
                  rc.rmse_before);
    out << buf;
  }
  out << "survivors " << r.survivors.size() << "\n";
}

struct CommonArgs {
  std::string config;
  std::vector<std::string> sets;
  int jobs = 0;
  bool dry_run = false;
  std::string output;
};

void add_common(CLI::App *sub, CommonArgs &a) {
  sub->add_option("-c,--config", a.config, "Config file");
  sub->add_option("--set", a.sets, "Override a config key (section.key=value)");
  sub->add_option("-j,--jobs", a.jobs, "Worker threads for matching and rectification");
  sub->add_option("-o,--output", a.output, "Output directory (output.dir)");
  sub->add_flag("--dry-run", a.dry_run, "Validate and print the resolved configuration");
}

RunConfig resolve(const CommonArgs &a) {
  RunConfig cfg;
  if (!a.config.empty())
    load_config(cfg, a.config);
  for (const std::string &s : a.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos)
      throw ParameterError("--set expects key=value, got '" + s + "'");
    set_value(cfg, trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
  }
  if (a.jobs != 0)
    set_value(cfg, "match.jobs", std::to_string(a.jobs));
  if (!a.output.empty())
    set_value(cfg, "output.dir", a.output);
  cfg.validate();
  return cfg;
}

std::vector<FeaturePoint> detect(const RunConfig &cfg, const Image &ref) {
  const int margin = cfg.match.match.half() + cfg.match.match.search_radius;
  return in_stage("detection", [&] { return detect_harris(ref, cfg.harris, margin); });
}

MatchResult do_match(const RunConfig &cfg, const Image &ref, const Image &sen,
                     const std::vector<FeaturePoint> &pts) {
  return in_stage("matching", [&] { return match_points(ref, sen, pts, cfg.match); });
}

int cmd_match(const RunConfig &cfg, const std::string &ref_path, const std::string &sen_path,
              std::ostream &err) {
  Timer timer;
  timer.stage("load");
  const Image ref = load("load reference", ref_path);
  const Image sen = load("load sensed", sen_path);
  timer.stage("detect");
  const auto pts = detect(cfg, ref);
  err << "detected " << pts.size() << " feature points\n";
  timer.stage("match");
  const MatchResult res = do_match(cfg, ref, sen, pts);
  err << "matched " << res.cps.size() << " control points, skipped " << res.skipped.size()
      << "\n";
  timer.stage("write");
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  in_stage("output", [&] { write_cp_csv(res.cps, dir / "cps.csv"); });
  timer.write(dir / "timing.txt");
  return kExitOk;
}

int cmd_register(const RunConfig &cfg, const std::string &ref_path,
                 const std::string &sen_path, std::ostream &err) {
  Timer timer;
  timer.stage("load");
  const Image ref = load("load reference", ref_path);
  const Image sen = load("load sensed", sen_path);
  timer.stage("detect");
  const auto pts = detect(cfg, ref);
  err << "detected " << pts.size() << " feature points\n";
  timer.stage("match");
  const MatchResult res = do_match(cfg, ref, sen, pts);
  err << "matched " << res.cps.size() << " control points, skipped " << res.skipped.size()
      << "\n";

  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  in_stage("output", [&] { write_cp_csv(res.cps, dir / "cps.csv"); });

  timer.stage("reject");
  RejectionReport rej;
  try {
    rej = reject_outliers(res.cps, cfg.model_order, cfg.rejection_threshold,
                          static_cast<std::size_t>(cfg.min_cps));
  } catch (const FitError &e) {
    err << "error: rejection: " << e.what() << " (rejection.order = " << cfg.model_order
        << ", " << res.cps.size() << " control points)\n";
    timer.write(dir / "timing.txt");
    return kExitNotConverged;
  }
  err << "rejection removed " << rej.removed.size() << ", final RMSE " << fmt(rej.final_rmse)
      << (rej.converged ? "" : " (not converged)") << "\n";

  // Residuals of every matched CP under the final model; removed CPs stay empty.
  std::vector<ControlPoint> annotated = res.cps;
  for (auto &cp : annotated)
    cp.residual.reset();
  for (std::size_t i = 0; i < rej.survivors.size(); ++i)
    annotated[rej.survivor_index[i]].residual = rej.survivors[i].residual;

  timer.stage("write");
  in_stage("output", [&] {
    write_cp_csv(annotated, dir / "cps.csv");
    auto out = open_out(dir / "rejection.txt");
    write_rejection_report(rej, cfg.model_order, cfg.rejection_threshold, out);
  });

  std::optional<Tin> tin;
  std::optional<RectifyResult> rect;
  if (rej.converged) {
    timer.stage("tin");
    tin = in_stage("tin", [&] { return build_tin(rej.survivors); });
    timer.stage("rectify");
    const PolynomialModel *fallback = cfg.tin_fallback && rej.model ? &*rej.model : nullptr;
    rect = in_stage("rectify", [&] {
      return rectify(sen, *tin, fallback, ref.width(), ref.height(), cfg.match.jobs);
    });
    rect->image.set_geo(ref.geo());
    timer.stage("write");
    in_stage("output", [&] {
      ModelFile mf;
      mf.polynomial = rej.model;
      mf.tin = tin;
      auto out = open_out(dir / "transform.model");
      write_model(mf, out);
      io::save_image(rect->image, dir / ("rectified" + raster_ext(sen_path)));
    });
  }

  std::optional<eval::CheckPointSet> checks;
  std::optional<eval::CheckResult> check_score;
  if (cfg.check_enabled && tin) {
    timer.stage("check");
    eval::CheckPointOptions co = cfg.check;
    co.harris = cfg.harris;
    co.descriptors = cfg.match.descriptors;
    co.jobs = cfg.match.jobs;
    checks = in_stage("check", [&] { return eval::select_check_points(ref, sen, co); });
    if (checks->points.size() < co.count) {
      err << "warning: check: only " << checks->points.size() << " of " << co.count
          << " check points available (" << checks->matched << " matched)\n";
    } else {
      if (!checks->converged)
        err << "warning: check: matches did not reach check.threshold = "
            << fmt(co.rmse_threshold) << "\n";
      const PolynomialModel *fallback = cfg.tin_fallback && rej.model ? &*rej.model : nullptr;
      check_score = eval::check_rmse(*tin, fallback, checks->points);
      err << "check RMSE " << fmt(check_score->rmse) << " over " << check_score->used
          << " check points\n";
    }
    timer.stage("write");
    in_stage("output", [&] { write_cp_csv(checks->points, dir / "check_points.csv"); });
  }

  in_stage("output", [&] {
    auto out = open_out(dir / "summary.txt");
    char buf[128];
    out << "feature_points " << pts.size() << "\n";
    out << "matched " << res.cps.size() << "\n";
    out << "skipped " << res.skipped.size() << "\n";
    out << "chip_mode " << (res.chip_mode ? "yes" : "no") << "\n";
    out << "removed " << rej.removed.size() << "\n";
    out << "survivors " << rej.survivors.size() << "\n";
    std::snprintf(buf, sizeof buf, "final_rmse %.6f\n", rej.final_rmse);
    out << buf;
    out << "converged " << (rej.converged ? "yes" : "no") << "\n";
    if (tin)
      out << "triangles " << tin->triangles.size() << "\n";
    if (rect) {
      std::snprintf(buf, sizeof buf, "unmapped_fraction %.6f\nfallback_fraction %.6f\n",
                    rect->unmapped_fraction, rect->fallback_fraction);
      out << buf;
    }
    if (checks) {
      out << "check_points " << checks->points.size() << "\n";
      if (check_score) {
        std::snprintf(buf, sizeof buf, "check_rmse %.6f\ncheck_used %zu\n", check_score->rmse,
                      check_score->used);
        out << buf;
      }
    }
    for (const SkippedPoint &s : res.skipped) {
      std::snprintf(buf, sizeof buf, "skip %zu %.1f %.1f ", s.index, s.point.x, s.point.y);
      out << buf << s.reason << "\n";
    }
  });
  timer.write(dir / "timing.txt");
  if (!rej.converged) {
    err << "error: rejection: RMSE " << fmt(rej.final_rmse)
        << " did not fall below rejection.threshold = " << fmt(cfg.rejection_threshold)
        << " before reaching rejection.min_cps = " << cfg.min_cps << "\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_rectify(const RunConfig &cfg, const std::string &ref_path, const std::string &sen_path,
                const std::string &cps_path, const std::string &model_path,
                std::ostream &err) {
  const Image ref = load("load reference", ref_path);
  const Image sen = load("load sensed", sen_path);
  ModelFile mf;
  if (!model_path.empty()) {
    mf = in_stage("load model", [&] {
      std::ifstream in(model_path);
      if (!in)
        throw IoError("cannot open " + model_path);
      return read_model(in);
    });
  } else {
    const auto cps = in_stage("load control points", [&] { return read_cp_csv(cps_path); });
    mf.tin = in_stage("tin", [&] { return build_tin(cps); });
    if (cfg.tin_fallback &&
        cps.size() >= static_cast<std::size_t>(PolynomialModel::term_count(cfg.model_order)))
      mf.polynomial = in_stage("fit", [&] { return fit_polynomial(cps, cfg.model_order).model; });
  }
  if (!mf.tin)
    throw StageError("rectify", "the model has no TIN block");
  const PolynomialModel *fallback = cfg.tin_fallback && mf.polynomial ? &*mf.polynomial : nullptr;
  RectifyResult rect = in_stage("rectify", [&] {
    return rectify(sen, *mf.tin, fallback, ref.width(), ref.height(), cfg.match.jobs);
  });
  rect.image.set_geo(ref.geo());
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  in_stage("output",
           [&] { io::save_image(rect.image, dir / ("rectified" + raster_ext(sen_path))); });
  err << "rectified " << ref.width() << "x" << ref.height() << ", unmapped "
      << fmt(rect.unmapped_fraction) << ", fallback " << fmt(rect.fallback_fraction) << "\n";
  return kExitOk;
}

int cmd_simmap(const RunConfig &cfg, const std::string &ref_path, const std::string &sen_path,
               const std::string &point, std::ostream &err) {
  double px = 0, py = 0;
  {
    const auto parts = split_list(point);
    if (parts.size() != 2)
      throw ParameterError("--point expects X,Y");
    px = to_double("--point", parts[0]);
    py = to_double("--point", parts[1]);
  }
  const Image ref = load("load reference", ref_path);
  const Image sen = load("load sensed", sen_path);
  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  const int margin = cfg.match.match.half() + cfg.match.match.search_radius;
  for (Measure m : cfg.simmap_measures) {
    MatchOptions mo = cfg.match;
    mo.match.measure = m;
    SimilarityMap map;
    try {
      map = match_single(ref, sen, {px, py}, mo);
    } catch (const MatchSkipped &e) {
      throw StageError("simmap", std::string(e.what()) + "; the point needs a margin of " +
                                     std::to_string(cfg.match.match.half()) +
                                     " px in the reference and " + std::to_string(margin) +
                                     " px around its prediction in the sensed image");
    }
    const std::string name = "simmap_" + std::string(measure_name(m));
    in_stage("output", [&] {
      io::write_heatmap_pgm(map.scores, map.side(), map.side(), dir / (name + ".pgm"));
      io::write_matrix_text(map.scores, map.side(), map.side(), dir / (name + ".txt"));
    });
    err << measure_name(m) << " peak (" << map.peak.dx << ", " << map.peak.dy << ")"
        << (map.degenerate ? " degenerate" : "") << "\n";
  }
  return kExitOk;
}

int cmd_bench(const RunConfig &cfg, std::ostream &err) {
  const BenchConfig &b = cfg.bench;
  eval::SuiteConfig suite;
  suite.pairs = b.pairs;
  suite.image_size = b.image_size;
  suite.max_shift = b.max_shift;
  suite.seed = b.seed;
  suite.scenes = b.scenes;

  eval::SweepOptions opts;
  opts.harris = cfg.harris;
  opts.harris.grid_n = b.harris_grid;
  opts.search_radius = b.search_radius;
  opts.mi_bins = cfg.match.match.mi_bins;
  opts.descriptors = cfg.match.descriptors;
  opts.jobs = cfg.match.jobs;

  const fs::path dir = cfg.output_dir;
  ensure_dir(dir);
  Timer timer;

  timer.stage("precision");
  err << "precision sweep: " << b.pairs << " pairs, " << b.measures.size() << " measures, "
      << b.template_sizes.size() << " sizes\n";
  const auto precision = in_stage("precision sweep", [&] {
    return eval::run_precision_sweep(eval::generate_suite(suite, 0.0), b.measures,
                                     b.template_sizes, opts);
  });
  timer.stage("noise");
  err << "noise sweep: " << b.variances.size() << " variances\n";
  const auto noise = in_stage("noise sweep", [&] {
    return eval::run_noise_sweep(suite, b.measures, b.variances, opts);
  });
  timer.stage("params");
  err << "parameter study\n";
  const auto params = in_stage("parameter study", [&] {
    return eval::run_param_study(suite, b.sigmas, b.ms, opts, 101, b.param_noise);
  });
  timer.stage("extraction");
  const Image scene = eval::generate_scene(eval::SceneKind::FilteredNoise, 512, 512, b.seed);
  const auto times = eval::measure_extraction_times(scene, cfg.match.descriptors);
  timer.stage("write");

  in_stage("output", [&] {
    auto p = open_out(dir / "precision.csv");
    eval::write_precision_csv(precision, p);
    auto n = open_out(dir / "noise.csv");
    eval::write_precision_csv(noise, n);
    auto q = open_out(dir / "params.csv");
    eval::write_param_csv(params, q);
    auto s = open_out(dir / "summary.txt");
    eval::write_summary(precision, noise, params, s);
  });
  {
    // Wall-clock figures live apart from the deterministic reports.
    auto t = open_out(dir / "extraction_times.txt");
    char buf[128];
    for (const auto &e : times) {
      std::snprintf(buf, sizeof buf, "%-6s %.6f s\n", std::string(measure_name(e.measure)).c_str(),
                    e.seconds);
      t << buf;
    }
    for (const auto &r : precision) {
      std::snprintf(buf, sizeof buf, "%-6s size %3d  %.6f s/match\n",
                    std::string(measure_name(r.measure)).c_str(), r.template_size,
                    r.seconds_per_match);
      t << buf;
    }
  }
  timer.write(dir / "timing.txt");
  err << "reports written to " << dir.string() << "\n";
  return kExitOk;
}

} // namespace

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
  CLI::App app{"Multimodal image registration with pixel-wise structural features"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string ref_path, sen_path, cps_path, model_path, point, suite;
  bool check = false;

  auto *reg = app.add_subcommand("register", "Detect, match, reject outliers and rectify");
  reg->add_option("reference", ref_path, "Reference image")->required();
  reg->add_option("sensed", sen_path, "Sensed image")->required();
  reg->add_flag("--check", check, "Score the result on independent check points (check.enabled)");
  add_common(reg, common);

  auto *mat = app.add_subcommand("match", "Detect feature points and write control points");
  mat->add_option("reference", ref_path, "Reference image")->required();
  mat->add_option("sensed", sen_path, "Sensed image")->required();
  add_common(mat, common);

  auto *rec = app.add_subcommand("rectify", "Rectify the sensed image into the reference frame");
  rec->add_option("reference", ref_path, "Reference image (output frame)")->required();
  rec->add_option("sensed", sen_path, "Sensed image")->required();
  auto *cps_opt = rec->add_option("--cps", cps_path, "Control point CSV");
  auto *model_opt = rec->add_option("--model", model_path, "Transform model file");
  cps_opt->excludes(model_opt);
  add_common(rec, common);

  auto *sim = app.add_subcommand("simmap", "Write similarity maps at one reference point");
  sim->add_option("reference", ref_path, "Reference image")->required();
  sim->add_option("sensed", sen_path, "Sensed image")->required();
  sim->add_option("--point", point, "Reference point X,Y")->required();
  add_common(sim, common);

  auto *ben = app.add_subcommand("bench", "Run the synthetic evaluation suite");
  ben->add_option("--suite", suite, "quick or paper");
  add_common(ben, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    RunConfig cfg = resolve(common);
    if (check)
      cfg.check_enabled = true;
    if (ben->parsed() && !suite.empty()) {
      set_value(cfg, "bench.suite", suite);
      cfg.validate();
    }
    if (rec->parsed() && cps_path.empty() && model_path.empty())
      throw ParameterError("rectify needs --cps or --model");
    if (common.dry_run) {
      dump_config(cfg, out);
      return kExitOk;
    }
    if (reg->parsed())
      return cmd_register(cfg, ref_path, sen_path, err);
    if (mat->parsed())
      return cmd_match(cfg, ref_path, sen_path, err);
    if (rec->parsed())
      return cmd_rectify(cfg, ref_path, sen_path, cps_path, model_path, err);
    if (sim->parsed())
      return cmd_simmap(cfg, ref_path, sen_path, point, err);
    return cmd_bench(cfg, err);
  } catch (const ParameterError &e) {
    err << "error: parameter: " << e.what() << "\n";
  } catch (const std::exception &e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitError;
}

} // namespace mmreg::cli
