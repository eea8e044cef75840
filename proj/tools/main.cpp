#include "rescbm/cli.hpp"

#include <iostream>

int main(int argc, char** argv) {
  return rescbm::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
