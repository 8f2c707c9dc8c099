#include "dynret/experiment.hpp"

int main(int argc, char** argv) { return dynret::run_cli(argc, argv); }
