#include "dynmask/cli.hpp"

int main(int argc, char** argv) { return dynmask::cli::run(argc, argv); }
