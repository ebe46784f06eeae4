#include "pkit/cli.hpp"
#include "pkit/platform.hpp"

#include <iostream>

int main(int argc, char** argv) {
    pkit::retain_heap_memory();
    return pkit::cli::run(argc, argv, std::cout, std::cerr);
}
