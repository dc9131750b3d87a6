#include "detox/cli.hpp"

int main(int argc, char** argv) { return detox::cli::run(argc, argv); }
