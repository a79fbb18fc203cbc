#include "ddprune/cli.hpp"

int main(int argc, char** argv) { return ddprune::cli::main(argc, argv); }
