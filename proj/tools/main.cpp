#include <iostream>

#include "protograde/cli.hpp"

int main(int argc, char** argv) { return protograde::run_cli(argc, argv, std::cout, std::cerr); }
