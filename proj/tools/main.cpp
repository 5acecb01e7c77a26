#include <string>
#include <vector>

#include "bodyfit/cli.hpp"

int main(int argc, char** argv) {
  return bodyfit::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
