#include "lesion/cli.hpp"

int main(int argc, char** argv) { return lesion::run_cli(argc, argv); }
