#include "cli/cli.hpp"

int main(int argc, char** argv) { return irtnet::cli::run(argc, argv); }
