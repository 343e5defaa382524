#include <string>
#include <vector>

#include "sescore/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return sescore::cli::run(args);
}
