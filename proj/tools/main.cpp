#include "cli.hpp"

int main(int argc, char** argv) {
    return forensic::cli::dispatch(argc, argv);
}
