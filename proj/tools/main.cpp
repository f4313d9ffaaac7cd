#include "fsnet_cli.hpp"

int main(int argc, char** argv) { return fsnet::cli::cli_main(argc, argv); }
