#include <iostream>
#include <string>
#include <vector>

#include "neureg/cli.hpp"

int main(int argc, char** argv) {
    const std::vector<std::string> args(argv, argv + argc);
    return neureg::cli::dispatch(args, std::cout, std::cerr);
}
