#include "msc/expcli/cli.hpp"

int main(int argc, char** argv) { return msc::expcli::cli_main(argc, argv); }
