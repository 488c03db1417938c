#include "phytnet/cli.hpp"

int main(int argc, char** argv) { return phytnet::run_cli(argc, argv); }
