#include <iostream>
#include <string>
#include <vector>

#include "bss/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return bss::run_cli(args, std::cout, std::cerr);
}
