#include <iostream>

#include "eqflow/cli.hpp"

int main(int argc, char** argv) {
  return eqflow::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
