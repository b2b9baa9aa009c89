#include "sohnet/cli.hpp"

int main(int argc, char** argv) { return sohnet::cli::main(argc, argv); }
