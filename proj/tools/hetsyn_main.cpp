#include <iostream>

#include "hetsyn/cli.hpp"

int main(int argc, char** argv) { return hetsyn::cli::run(argc, argv, std::cout, std::cerr); }
