#include <iostream>

#include "looptrans/cli.hpp"

int main(int argc, char** argv) {
  return looptrans::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
