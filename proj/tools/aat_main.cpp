#include "aat/cli.hpp"

int main(int argc, char** argv) { return aat::cli::run(argc, argv); }
