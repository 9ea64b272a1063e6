#include "nirsfreq/cli.hpp"

int main(int argc, char** argv) { return nirsfreq::cli_main(argc, argv); }
