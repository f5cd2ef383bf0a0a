#include "codac/cli.hpp"

#include <iostream>

int main(int argc, char **argv) { return codac::run_cli(argc, argv, std::cout, std::cerr); }
