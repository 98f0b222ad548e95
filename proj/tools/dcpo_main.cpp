#include "dcpo/cli.hpp"

int main(int argc, char** argv) { return dcpo::run_cli(argc, argv); }
