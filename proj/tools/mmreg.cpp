#include "mmreg/cli.hpp"

#include <iostream>

int main(int argc, char **argv) {
  return mmreg::cli::run(argc, argv, std::cout, std::cerr);
}
