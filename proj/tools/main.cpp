#include "school/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return school::run_cli(argc, argv, std::cout, std::cerr); }
