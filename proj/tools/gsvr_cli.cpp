#include "gsvr/cli.hpp"

int main(int argc, char** argv) { return gsvr::run_cli(argc, argv); }
