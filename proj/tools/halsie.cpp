#include <iostream>
#include <string>
#include <vector>

#include "halsie/cli.hpp"

int main(int argc, char** argv) {
  return halsie::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
