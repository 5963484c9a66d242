#include <iostream>
#include <string>
#include <vector>

#include "preflab/cli/app.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return preflab::cli::run(args, std::cout, std::cerr);
}
