#include <iostream>

#include "stsmixer/cli/cli.hpp"

int main(int argc, char** argv) { return stsmixer::cli::run_cli(argc, argv, std::cout, std::cerr); }
