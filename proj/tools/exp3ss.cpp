#include <iostream>
#include <string>
#include <vector>

#include "exp3ss/cli.hpp"

int main(int argc, char** argv) {
  return exp3ss::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
