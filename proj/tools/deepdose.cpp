#include "deepdose/cli.hpp"

int main(int argc, char** argv) { return deepdose::cli::run(argc, argv); }
