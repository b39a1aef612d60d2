#include <iostream>

#include "knobgen/cli.hpp"

int main(int argc, char** argv) { return knobgen::cli_main(argc, argv, std::cout, std::cerr); }
