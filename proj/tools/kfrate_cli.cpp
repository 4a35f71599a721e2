#include <iostream>

#include "kfrate/cli.hpp"

int main(int argc, char** argv) { return kfrate::cli::run(argc, argv, std::cout, std::cerr); }
