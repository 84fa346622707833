#include <iostream>

#include "ccrb/cli/commands.hpp"

int main(int argc, char** argv) { return ccrb::cli::run(argc, argv, std::cout, std::cerr); }
