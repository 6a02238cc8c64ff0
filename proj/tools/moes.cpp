#include "moes/cli.hpp"

int main(int argc, char** argv) { return moes::run_cli(argc, argv); }
