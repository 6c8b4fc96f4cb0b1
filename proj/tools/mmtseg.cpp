#include <iostream>
#include <string>
#include <vector>

#include "mmtseg/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv + 1, argv + argc);
  return mmtseg::run_cli(args, std::cout, std::cerr);
}
