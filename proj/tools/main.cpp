#include <string>
#include <vector>

#include "fedmerge/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fedmerge::cli::run_command(args);
}
