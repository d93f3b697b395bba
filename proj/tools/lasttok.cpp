#include "lasttok/cli/cli.hpp"

int main(int argc, char** argv) { return lasttok::cli::run(argc, argv); }
