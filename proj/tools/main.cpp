#include "cli.hpp"

int main(int argc, char** argv) { return graphmc::cli::run(argc, argv); }
