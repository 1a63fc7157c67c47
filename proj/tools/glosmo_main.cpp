// CLI entry point; subcommands are wired up in cli.hpp.
#include <glosmo/cli.hpp>

int main(int argc, char** argv) { return glosmo::cli_main(argc, argv); }
