#include <iostream>

#include "vstream/commands.hpp"

int main(int argc, char **argv) { return vstream::run_cli(argc, argv, std::cout, std::cerr); }
