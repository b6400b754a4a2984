#include "entsim/experiments.hpp"

int main(int argc, char** argv) { return entsim::exp::cli_main(argc, argv); }
