#include "promos/cli.hpp"

int main(int argc, char** argv) { return promos::cli::run(argc, argv); }
