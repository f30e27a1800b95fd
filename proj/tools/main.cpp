#include <iostream>

#include "bivlgm/cli.hpp"

int main(int argc, char** argv) {
    return bivlgm::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
