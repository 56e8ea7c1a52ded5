#include <iostream>

#include "robustlens/cli.hpp"

int main(int argc, char** argv) { return robustlens::run_cli(argc, argv, std::cout, std::cerr); }
