#include "fuseguard/cli.hpp"

int main(int argc, char** argv) { return fuseguard::run_cli(argc, argv); }
