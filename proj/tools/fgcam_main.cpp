#include <iostream>

#include "fgcam/app.hpp"

int main(int argc, char** argv) { return fgcam::run_cli(argc, argv, std::cout, std::cerr); }
