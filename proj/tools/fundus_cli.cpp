#include <iostream>

#include "fundus/cli.hpp"

int main(int argc, char** argv) { return fundus::run_cli(argc, argv, std::cout, std::cerr); }
