#include <iostream>

#include "longtrack/cli.hpp"

int main(int argc, char** argv) { return longtrack::dispatch(argc, argv, std::cout, std::cerr); }
