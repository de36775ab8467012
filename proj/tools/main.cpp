#include "wmed/cli.hpp"

int main(int argc, char** argv) { return wmed::cli::run(argc, argv); }
