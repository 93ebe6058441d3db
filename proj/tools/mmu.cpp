#include <iostream>

#include "mmunet/cli.hpp"

int main(int argc, char** argv) {
  return mmunet::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cerr);
}
