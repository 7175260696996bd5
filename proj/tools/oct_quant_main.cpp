#include <string>
#include <vector>

#include "octquant/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return octquant::cli::run(args);
}
