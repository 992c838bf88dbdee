#include <iostream>

#include "crecl/cli.hpp"

int main(int argc, char** argv)
{
    return crecl::run_cli(argc, argv, std::cout, std::cerr);
}
