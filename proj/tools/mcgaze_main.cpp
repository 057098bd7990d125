#include <iostream>

#include "mcgaze/cli.hpp"

int main(int argc, char** argv) { return mcgaze::run_cli(argc, argv, std::cout, std::cerr); }
