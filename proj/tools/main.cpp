#include "eeseg/cli.hpp"

int main(int argc, char** argv) { return eeseg::cli::dispatch(argc, argv); }
