#include "ecgtext/cli.hpp"

int main(int argc, char** argv) { return ecgtext::cli::run(argc, argv); }
