#include "iseg/aligned.hpp"
#include "iseg/cli.hpp"

int main(int argc, char** argv) {
    iseg::configure_allocator();
    return iseg::dispatch(argc, argv);
}
