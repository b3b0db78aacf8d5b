#include "cli.hpp"

int main(int argc, char** argv) { return vislam::cli::run_cli(argc, argv); }
