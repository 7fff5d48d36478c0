#include "fusiontrack/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return fusiontrack::run_cli(argc, argv, std::cout, std::cerr); }
