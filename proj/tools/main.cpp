#include <iostream>
#include <string>
#include <vector>

#include "tdro/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tdro::cli::run(args, std::cout, std::cerr);
}
