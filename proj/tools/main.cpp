#include "calypso/cli.hpp"

int main(int argc, char** argv) {
    return calypso::cli::run(argc, argv);
}
