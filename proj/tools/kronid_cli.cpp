#include "kronid/cli.hpp"

int main(int argc, char** argv) { return kronid::cli_main(argc, argv); }
