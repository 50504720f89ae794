#pragma once

#include "mmreg/evaluation.hpp"
#include "mmreg/matching.hpp"

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace mmreg::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;       // usage, parameter or I/O error
inline constexpr int kExitNotConverged = 2; // outlier rejection did not converge

struct BenchConfig {
  std::string suite = "quick"; // quick | paper
  int pairs = 4;
  int image_size = 256;
  int max_shift = 5;
  std::uint64_t seed = 1;
  std::vector<eval::SceneKind> scenes{eval::SceneKind::Blobs,
                                      eval::SceneKind::FilteredNoise};
  std::vector<Measure> measures{Measure::CFOG, Measure::FHOG, Measure::NCC};
  std::vector<int> template_sizes{41, 61, 81};
  std::vector<double> variances{0.0, 0.01};
  std::vector<double> sigmas{0.8, 1.6};
  std::vector<int> ms{9};
  double param_noise = 0.0025;
  int search_radius = 10;
  int harris_grid = 4;
};

// Replaces every bench setting with the named preset.
void apply_bench_preset(BenchConfig &b, const std::string &suite);

struct RunConfig {
  RunConfig();

  MatchOptions match;
  HarrisParams harris;
  double rejection_threshold = 3.5;
  int model_order = 3;
  int min_cps = 10;
  bool tin_fallback = true; // cubic polynomial outside the TIN hull
  std::string output_dir = "mmreg_out";
  std::vector<Measure> simmap_measures;
  // Independent check points scored against the register result.
  bool check_enabled = false;
  eval::CheckPointOptions check;
  BenchConfig bench;

  // Values assigned explicitly (config file or --set), re-applied on top of
  // a bench preset when the suite changes.
  std::map<std::string, std::string> explicit_values;

  void validate() const;
};

// Assigns one "section.key" value; throws ParameterError for unknown keys or
// malformed values.
void set_value(RunConfig &cfg, const std::string &key, const std::string &value);

// INI-like text: "[section]" headers, "key = value" lines, '#' or ';'
// comments.  Keys may also be written fully qualified outside a section.
void parse_config(RunConfig &cfg, std::istream &in, const std::string &origin = "config");
void load_config(RunConfig &cfg, const std::string &path);

// Resolved parameter set in the same format parse_config reads.
void dump_config(const RunConfig &cfg, std::ostream &out);

std::vector<std::string> config_keys();

int run(int argc, const char *const *argv, std::ostream &out, std::ostream &err);

} // namespace mmreg::cli
