#include <iostream>

#include "dialplan/cli.hpp"

int main(int argc, char** argv) {
    return dialplan::app::run_main(argc, argv, std::cin, std::cout, std::cerr);
}
