#include "cordes/commands.hpp"

int main(int argc, char** argv) { return cordes::run_cli(argc, argv); }
