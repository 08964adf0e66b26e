#include "cli.hpp"

int main(int argc, char** argv) { return deltaflux::cli::run_cli(argc, argv); }
