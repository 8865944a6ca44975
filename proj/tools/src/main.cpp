#include <iostream>

#include "faceval_app/commands.hpp"

int main(int argc, char** argv) { return faceval::app::run_cli(argc, argv, std::cout, std::cerr); }
