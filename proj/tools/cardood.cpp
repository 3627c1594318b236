#include <iostream>

#include "cardood/commands.hpp"

int main(int argc, char** argv) { return cardood::run_cli(argc, argv, std::cout, std::cerr); }
