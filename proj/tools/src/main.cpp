#include <iostream>

#include "leafvit_cli/cli.hpp"

int main(int argc, char** argv) { return leafvit::cli::run(argc, argv, std::cout, std::cerr); }
