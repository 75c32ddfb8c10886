#include <iostream>

#include "embalign/tools/commands.hpp"

int main(int argc, char** argv) { return embalign::tools::run_app(argc, argv, std::cout, std::cerr); }
