#include <string>
#include <vector>

#include "medcode/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return medcode::run_cli(args);
}
