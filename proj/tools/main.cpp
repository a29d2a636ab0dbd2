#include "cli.hpp"

int main(int argc, char** argv) { return attnprobe::cli::run(argc, argv); }
