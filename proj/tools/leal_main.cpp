#include <iostream>
#include <string>
#include <vector>

#include "leal/cli.hpp"

int main(int argc, char** argv) {
  return leal::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
