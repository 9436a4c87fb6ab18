#include "qrtls/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return qrtls::cli::run(argc, argv, std::cout, std::cerr); }
