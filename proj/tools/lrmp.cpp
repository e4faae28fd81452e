#include "lrmp/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return lrmp::run_cli(argc, argv, std::cout, std::cerr); }
