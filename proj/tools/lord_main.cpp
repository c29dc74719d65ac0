#include "lord/cli.hpp"

int main(int argc, char** argv) { return lord::run_cli(argc, argv); }
