#include "nlgrowth/cli.hpp"

int main(int argc, char** argv) { return nlgrowth::cli::run(argc, argv); }
