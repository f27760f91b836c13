#include "trustchain/cli.hpp"

int main(int argc, char** argv) { return trustchain::cli::run(argc, argv); }
