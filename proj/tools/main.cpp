#include "cbamnet/cli.hpp"

int main(int argc, char** argv) { return cbamnet::cli_main(argc, argv); }
