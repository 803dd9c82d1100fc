#include "pmrt/cli.hpp"

int main(int argc, char** argv) { return pmrt::cli::main_entry(argc, argv); }
