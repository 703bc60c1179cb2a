#include "cli.hpp"

int main(int argc, char** argv) { return cfmimo::cli::run(argc, argv); }
