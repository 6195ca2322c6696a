#include "defo/cli/commands.hpp"

int main(int argc, char** argv) { return defo::cli::run(argc, argv); }
