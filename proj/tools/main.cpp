#include <iostream>

#include "hnll/cli.hpp"

int main(int argc, char** argv) { return hnll::dispatch(argc, argv, std::cout, std::cerr); }
