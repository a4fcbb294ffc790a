#include <iostream>

#include "coinnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return coinnet::cli::run(args, std::cout, std::cerr);
}
