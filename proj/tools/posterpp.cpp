#include <iostream>

#include "posterpp/cli.hpp"

int main(int argc, char** argv) { return posterpp::cli::run(argc, argv, std::cout, std::cerr); }
