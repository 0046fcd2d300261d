#include "aeail/cli.hpp"

int main(int argc, char** argv) { return aeail::cli(argc, argv); }
