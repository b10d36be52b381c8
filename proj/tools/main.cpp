#include <iostream>
#include <string>
#include <vector>

#include "whoi/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return whoi::cli::run(args, std::cout, std::cerr);
}
