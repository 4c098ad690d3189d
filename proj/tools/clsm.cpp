#include "clsm/cli.hpp"

int main(int argc, char** argv) { return clsm::cli::run_cli(argc, argv); }
