#include "vidflow/cli.hpp"

int main(int argc, char** argv) { return vidflow::cli::run(argc, argv); }
