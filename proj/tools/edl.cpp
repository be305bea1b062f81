#include "cli.hpp"

int main(int argc, char** argv) { return edl::cli::run(argc, argv); }
