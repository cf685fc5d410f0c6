#include <iostream>

#include "boolgen/cli.h"

int main(int argc, char** argv) { return boolgen::run_cli(argc, argv, std::cout, std::cerr); }
