#include "ethosgate/cli.hpp"

int main(int argc, char** argv) { return ethosgate::cli::run_cli(argc, argv); }
