#include <iostream>
#include <string>
#include <vector>

#include "nmsr_cli/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return nmsr::cli::run(args, std::cout, std::cerr);
}
