#include <iostream>
#include <string>
#include <vector>

#include "btm/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return btm::cli::run(args, std::cout, std::cerr);
}
