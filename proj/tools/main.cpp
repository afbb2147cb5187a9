#include "ucd/cli.hpp"

int main(int argc, char** argv) { return ucd::run(argc, argv); }
