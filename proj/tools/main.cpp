#include "anisdf/cli.hpp"

int main(int argc, char** argv) { return anisdf::cli::dispatch(argc, argv); }
