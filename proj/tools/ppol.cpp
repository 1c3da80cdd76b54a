#include <iostream>

#include "ppol/cli.hpp"

int main(int argc, char** argv) { return ppol::run_cli(argc, argv, std::cout, std::cerr); }
