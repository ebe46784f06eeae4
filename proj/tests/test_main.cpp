#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "pkit/platform.hpp"

int main(int argc, char** argv) {
    pkit::retain_heap_memory();
    doctest::Context context(argc, argv);
    return context.run();
}
