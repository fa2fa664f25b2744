#include <iostream>
#include <string>
#include <vector>

#include "hmmforget/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hmmforget::cli::run(args, std::cout, std::cerr);
}
