#include "vbl/cli.hpp"

int main(int argc, char** argv) { return vbl::cli::run(argc, argv); }
