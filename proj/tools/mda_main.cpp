#include "commands.hpp"

int main(int argc, char** argv) { return mda::cli::run(argc, argv); }
