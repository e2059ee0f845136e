#include "idtrace/cli.hpp"

int main(int argc, char** argv) { return idtrace::cli::main_entry(argc, argv); }
