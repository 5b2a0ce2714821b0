#include "mostnet/cli.hpp"

int main(int argc, char** argv) { return mostnet::cli::run(argc, argv); }
