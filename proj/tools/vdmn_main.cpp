#include "cli.hpp"

int main(int argc, char** argv) { return vdmn::cli::cli_dispatch(argc, argv); }
