#include "atnt/cli.hpp"

int main(int argc, char** argv) { return atnt::run_cli(argc, argv); }
