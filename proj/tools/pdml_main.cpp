#include "pdml/cli.hpp"

int main(int argc, char** argv) { return pdml::run(argc, argv); }
