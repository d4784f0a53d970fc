#include <iostream>

#include "cellularity/cli.hpp"

int main(int argc, char** argv) { return cellularity::cli::run(argc, argv, std::cout, std::cerr); }
