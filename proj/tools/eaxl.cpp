#include <iostream>

#include "eaxl/cli.hpp"

int main(int argc, char** argv) {
  return eaxl::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cin, std::cout, std::cerr);
}
