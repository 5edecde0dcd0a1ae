#include "pacdiff/cli.hpp"

int main(int argc, char** argv) { return pacdiff::cli::run(argc, argv); }
