#include "fhmm/cli_io.hpp"

int main(int argc, char** argv) { return fhmm::cli::run(argc, argv); }
