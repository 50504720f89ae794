#pragma once

#include <stdexcept>
#include <string>

namespace mmreg {

// Invalid argument or violated precondition on a parameter.
class ParameterError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

// Template or search footprint does not fit inside the volumes/images.
class MatchSkipped : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Least-squares fit could not be solved (too few points, rank deficiency).
class FitError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// Triangulation could not be built from the given control points.
class TinError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace mmreg
